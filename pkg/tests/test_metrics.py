from __future__ import annotations

import numpy as np
import pytest

from mswt.errors import DataError
from mswt.metrics import accuracy, auc, compute_metrics, group_by_video, video_level


def _pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    fake = scores[labels == 1]
    real = scores[labels == 0]
    wins = (fake[:, None] > real[None, :]).sum() + 0.5 * (fake[:, None] == real[None, :]).sum()
    return wins / (fake.size * real.size)


def test_auc_matches_pairwise_count(rng: np.random.Generator) -> None:
    for _ in range(50):
        labels = rng.permutation(np.repeat([0, 1], rng.integers(1, 20, size=2)))
        scores = rng.integers(0, 6, size=labels.size) / 5.0
        assert auc(scores, labels) == pytest.approx(_pairwise_auc(scores, labels), abs=1e-12)


def test_auc_extremes_and_ties() -> None:
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5


def test_auc_is_rank_invariant(rng: np.random.Generator) -> None:
    scores = rng.uniform(0.0, 1.0, 40)
    labels = rng.integers(0, 2, 40)
    labels[:2] = (0, 1)
    base = auc(scores, labels)
    assert auc(np.exp(3.0 * scores) - 7.0, labels) == pytest.approx(base)
    assert auc(scores, 1 - labels) == pytest.approx(1.0 - base)


def test_auc_needs_both_classes() -> None:
    with pytest.raises(DataError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(DataError):
        auc([0.1, 0.2], [0, 2])
    with pytest.raises(DataError):
        auc([0.1], [0, 1])


def test_accuracy_threshold_is_strict() -> None:
    assert accuracy([0.5, 0.51, 0.2, 0.9], [0, 1, 0, 0]) == 0.75
    with pytest.raises(DataError):
        accuracy([], [])


def test_video_grouping_averages_frames() -> None:
    scores = [0.2, 0.4, 0.9, 0.7, 0.1]
    labels = [0, 0, 1, 1, 0]
    videos = ["a", "a", "b", "b", "c"]
    video_scores, video_labels, order = group_by_video(scores, labels, videos)
    assert order == ["a", "b", "c"]
    np.testing.assert_allclose(video_scores, [0.3, 0.8, 0.1])
    assert video_labels.tolist() == [0, 1, 0]
    metrics = compute_metrics(scores, labels, videos, level="video")
    assert metrics.auc == 1.0
    assert metrics.acc == 1.0
    assert (metrics.n_frames, metrics.n_videos, metrics.level) == (5, 3, "video")


def test_video_grouping_errors() -> None:
    with pytest.raises(DataError, match="mixes"):
        group_by_video([0.1, 0.2], [0, 1], ["a", "a"])
    with pytest.raises(DataError):
        group_by_video([0.1, 0.2], [0, 1], ["a"])
    with pytest.raises(DataError):
        compute_metrics([0.1, 0.9], [0, 1], level="video")
    with pytest.raises(DataError):
        video_level({"a": []})


def test_frame_metrics_count_videos() -> None:
    metrics = compute_metrics([0.3, 0.6, 0.7, 0.4], [0, 1, 1, 0], ["a", "b", "b", "a"])
    assert metrics.level == "frame"
    assert metrics.n_videos == 2
    assert metrics.acc == 1.0


def test_auc_is_exact_on_heavily_tied_scores(rng: np.random.Generator) -> None:
    for _ in range(20):
        labels = rng.permutation(np.repeat([0, 1], 100))
        scores = rng.integers(0, 50, size=200) / 49.0
        assert auc(scores, labels) == _pairwise_auc(scores, labels)
