"""Frame- and video-level accuracy and ROC AUC."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

THRESHOLD = 0.5
LEVELS = ("frame", "video")


@dataclass(frozen=True, slots=True)
class Metrics:
    """ACC and AUC of one split at one aggregation level."""

    acc: float
    auc: float
    n_frames: int
    n_videos: int
    level: str = "frame"

    def __post_init__(self) -> None:
        if self.level not in LEVELS:
            msg = f"Unknown metric level {self.level!r}; expected one of {LEVELS}."
            raise DataError(msg)


def _as_arrays(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        msg = f"{scores.size} scores for {labels.size} labels."
        raise DataError(msg)
    if not np.isin(labels, (0, 1)).all():
        msg = "Labels must be 0 (real) or 1 (fake)."
        raise DataError(msg)
    return scores, labels.astype(np.int64)


def auc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Mann-Whitney AUC: ``P(score_fake > score_real) + 0.5 * P(tie)``.

    Raises
    ------
    DataError
        If only one class is present.
    """
    scores, labels = _as_arrays(scores, labels)
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        msg = "AUC needs both real and fake samples."
        raise DataError(msg)
    ranks = rankdata(scores, method="average")
    u_statistic = ranks[labels == 1].sum() - positives * (positives + 1) / 2.0
    return float(u_statistic / (positives * negatives))


def accuracy(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    threshold: float = THRESHOLD,
) -> float:
    """Fraction of samples whose fake probability ``> threshold`` matches a fake label."""
    scores, labels = _as_arrays(scores, labels)
    if scores.size == 0:
        msg = "Accuracy of an empty set is undefined."
        raise DataError(msg)
    return float(np.mean((scores > threshold).astype(np.int64) == labels))


def video_level(scores_by_video: Mapping[str, Sequence[float]]) -> dict[str, float]:
    """Mean frame score of every video."""
    means = {}
    for video, scores in scores_by_video.items():
        if len(scores) == 0:
            msg = f"Video {video!r} has no frames."
            raise DataError(msg)
        means[video] = float(np.mean(np.asarray(scores, dtype=np.float64)))
    return means


def group_by_video(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    video_ids: Sequence[str],
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Video-level scores and labels, videos in order of first appearance.

    Raises
    ------
    DataError
        If a video mixes labels or the inputs differ in length.
    """
    scores, labels = _as_arrays(scores, labels)
    if len(video_ids) != scores.size:
        msg = f"{len(video_ids)} video ids for {scores.size} scores."
        raise DataError(msg)
    grouped: dict[str, list[float]] = {}
    video_labels: dict[str, int] = {}
    for score, label, video in zip(scores, labels, video_ids):
        if video_labels.setdefault(video, int(label)) != label:
            msg = f"Video {video!r} mixes real and fake frames."
            raise DataError(msg)
        grouped.setdefault(video, []).append(float(score))
    means = video_level(grouped)
    order = list(grouped)
    return np.array([means[video] for video in order]), np.array([video_labels[video] for video in order]), order


def compute_metrics(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    video_ids: Sequence[str] | None = None,
    level: str = "frame",
) -> Metrics:
    """ACC and AUC at ``level``; video level averages frame scores per video first."""
    scores, labels = _as_arrays(scores, labels)
    n_frames = scores.size
    n_videos = len(set(video_ids)) if video_ids is not None else n_frames
    if level == "video":
        if video_ids is None:
            msg = "Video-level metrics need video ids."
            raise DataError(msg)
        scores, labels, _ = group_by_video(scores, labels, video_ids)
    return Metrics(accuracy(scores, labels), auc(scores, labels), n_frames, n_videos, level)


__all__ = ["LEVELS", "THRESHOLD", "Metrics", "accuracy", "auc", "compute_metrics", "group_by_video", "video_level"]
