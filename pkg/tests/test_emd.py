from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import wasserstein_distance

from mswt.emd import IMAGE_ROW, emd_1d, emd_report, shared_histograms
from mswt.errors import DataError, ShapeError
from mswt.synth import Corpus, CorpusSpec, generate_split


def _transport_lp(p: np.ndarray, q: np.ndarray) -> float:
    """Transport cost between normalised histograms solved as a linear program."""
    p, q = p / p.sum(), q / q.sum()
    bins = p.size
    cost = np.abs(np.arange(bins)[:, None] - np.arange(bins)[None, :]).reshape(-1)
    rows = np.kron(np.eye(bins), np.ones(bins))
    cols = np.kron(np.ones(bins), np.eye(bins))
    result = linprog(
        cost,
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([p, q]),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    return float(result.fun)


def test_identity_and_translation() -> None:
    p = np.array([0.0, 1.0, 3.0, 0.0, 0.0, 0.0])
    assert emd_1d(p, p) == 0.0
    assert emd_1d(p, np.roll(p, 2)) == pytest.approx(2.0)
    assert emd_1d(p, np.roll(p, 2), bin_width=0.5) == pytest.approx(1.0)


def test_matches_linear_program(rng: np.random.Generator) -> None:
    for _ in range(50):
        bins = int(rng.integers(2, 9))
        p = rng.uniform(0.0, 1.0, bins)
        q = rng.uniform(0.0, 1.0, bins)
        assert emd_1d(p, q) == pytest.approx(_transport_lp(p, q), abs=1e-9)


def test_matches_wasserstein_distance(rng: np.random.Generator) -> None:
    p = rng.uniform(0.0, 1.0, 16)
    q = rng.uniform(0.0, 1.0, 16)
    positions = np.arange(16.0)
    assert emd_1d(p, q) == pytest.approx(wasserstein_distance(positions, positions, p, q))


def test_metric_axioms(rng: np.random.Generator) -> None:
    for _ in range(100):
        p, q, r = (rng.uniform(0.0, 1.0, 8) for _ in range(3))
        assert emd_1d(p, q) >= 0.0
        assert emd_1d(p, q) == pytest.approx(emd_1d(q, p), abs=1e-12)
        assert emd_1d(p, r) <= emd_1d(p, q) + emd_1d(q, r) + 1e-12
        assert emd_1d(p, 5.0 * p) == pytest.approx(0.0, abs=1e-12)


def test_invalid_histograms() -> None:
    with pytest.raises(ShapeError):
        emd_1d(np.ones(3), np.ones(4))
    with pytest.raises(DataError):
        emd_1d(np.zeros(3), np.ones(3))
    with pytest.raises(DataError):
        emd_1d(np.array([1.0, -1.0, 1.0]), np.ones(3))


def test_shared_histograms_widen_a_constant_range() -> None:
    first, second = shared_histograms(np.full(5, 0.3), np.full(3, 0.3), bins=4)
    assert first.sum() == 5
    assert second.sum() == 3
    np.testing.assert_array_equal(first.nonzero()[0], second.nonzero()[0])


def test_report_of_identical_sets_is_zero(rng: np.random.Generator) -> None:
    images = rng.uniform(0.0, 1.0, (3, 3, 16, 16))
    report = emd_report(images, images.copy(), depth=3, bins=16)
    assert report.image == 0.0
    assert all(value == 0.0 for value in report.entries.values())
    assert report.pairs == 3


def test_report_is_scale_invariant(rng: np.random.Generator) -> None:
    real = rng.uniform(0.0, 1.0, (2, 3, 16, 16))
    fake = real + 0.05 * rng.standard_normal(real.shape)
    base = emd_report(real, fake, depth=2)
    scaled = emd_report(4.0 * real, 4.0 * fake, depth=2)
    assert scaled.image == pytest.approx(base.image)
    for key, value in base.entries.items():
        assert scaled.entries[key] == pytest.approx(value)


def test_report_rows_and_csv(rng: np.random.Generator, tmp_path: Path) -> None:
    real = rng.uniform(0.0, 1.0, (2, 3, 8, 8))
    report = emd_report(real, np.clip(real + 0.1, 0.0, 1.0), depth=2, bins=8)
    rows = report.rows()
    assert rows[0][0] == IMAGE_ROW
    assert [row[:2] for row in rows[1:5]] == [("level1", "LL"), ("level1", "LH"), ("level1", "HL"), ("level1", "HH")]
    assert len(rows) == 9
    lines = report.write_csv(tmp_path / "out" / "emd.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "row,band,emd"
    assert len(lines) == 10


def test_report_rejects_unpaired_or_empty() -> None:
    with pytest.raises(DataError):
        emd_report(np.zeros((2, 3, 8, 8)), np.zeros((3, 3, 8, 8)))
    with pytest.raises(DataError):
        emd_report(np.zeros((0, 3, 8, 8)), np.zeros((0, 3, 8, 8)))


def _paired_frames(spec: CorpusSpec) -> tuple[np.ndarray, np.ndarray]:
    samples = generate_split(spec, "test")
    real = np.stack([sample.image for sample in samples if sample.label == 0])
    fake = np.stack([sample.image for sample in samples if sample.label == 1])
    return real, fake


def test_high_bands_separate_more_than_low_band() -> None:
    real, fake = _paired_frames(CorpusSpec(seed=7, train=2, val=2, test=40, strength=2.0))
    report = emd_report(real, fake)
    high = np.mean([report.entry(1, band) for band in ("LH", "HL", "HH")])
    assert high > report.entry(1, "LL")


@pytest.mark.slow
def test_high_bands_exceed_low_band_at_every_level() -> None:
    real, fake = _paired_frames(CorpusSpec(seed=7, train=2, val=2, test=400))
    assert emd_report(real, fake).high_exceeds_low()


def test_corpus_pairs_feed_the_report(tiny_corpus: Corpus) -> None:
    real, fake = tiny_corpus.load_pairs("test")
    report = emd_report(real, fake, depth=3)
    assert report.pairs == 4
    assert report.image >= 0.0
