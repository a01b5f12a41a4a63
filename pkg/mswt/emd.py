"""Earth mover's distance between real and fake sub-band value histograms."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor
from .wavelet import BANDS, decompose

logger = logging.getLogger(__name__)

IMAGE_ROW = "Ori-Img"
DEFAULT_BINS = 64


def emd_1d(p: np.ndarray, q: np.ndarray, bin_width: float = 1.0) -> float:
    """Exact 1-D transport cost ``sum_k |CDF_p(k) - CDF_q(k)| * bin_width``.

    Both histograms are normalised to unit mass first.

    Raises
    ------
    ShapeError
        If the bin counts differ.
    DataError
        If either histogram has no mass or a negative bin.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.shape != q.shape:
        msg = f"Histograms have {p.size} and {q.size} bins."
        raise ShapeError(msg)
    if (p < 0).any() or (q < 0).any():
        msg = "Histogram bins must be non-negative."
        raise DataError(msg)
    p_mass, q_mass = p.sum(), q.sum()
    if p_mass <= 0.0 or q_mass <= 0.0:
        msg = "Cannot compare a histogram with zero mass."
        raise DataError(msg)
    return float(np.abs(np.cumsum(p / p_mass) - np.cumsum(q / q_mass)).sum() * bin_width)


def shared_histograms(
    first: np.ndarray,
    second: np.ndarray,
    bins: int = DEFAULT_BINS,
) -> tuple[np.ndarray, np.ndarray]:
    """Histograms of two value sets over their common ``[min, max]`` range.

    A degenerate range is widened by 0.5 on each side.
    """
    low = float(min(first.min(), second.min()))
    high = float(max(first.max(), second.max()))
    if high <= low:
        low, high = low - 0.5, high + 0.5
    first_hist, _ = np.histogram(first, bins=bins, range=(low, high))
    second_hist, _ = np.histogram(second, bins=bins, range=(low, high))
    return first_hist.astype(np.float64), second_hist.astype(np.float64)


@dataclass(slots=True)
class EmdReport:
    """Mean EMD (in bin units) per wavelet level and band, plus the whole-image row.

    ``entries`` is keyed ``(level, band)``; ``pairs`` counts the averaged image pairs.
    """

    image: float
    entries: dict[tuple[int, str], float] = field(default_factory=dict)
    depth: int = 3
    bins: int = DEFAULT_BINS
    pairs: int = 0

    def entry(self, level: int, band: str) -> float:
        return self.entries[(level, band)]

    def rows(self) -> list[tuple[str, str, float]]:
        """``(row, band, emd)`` triples: the whole-image row, then levels in order with bands LL, LH, HL, HH."""
        rows = [(IMAGE_ROW, "image", self.image)]
        rows.extend(
            (f"level{level}", band, self.entry(level, band)) for level in range(1, self.depth + 1) for band in BANDS
        )
        return rows

    def high_exceeds_low(self) -> bool:
        """Whether every high band beats LL at every level."""
        return all(
            self.entry(level, band) > self.entry(level, "LL")
            for level in range(1, self.depth + 1)
            for band in BANDS[1:]
        )

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(("row", "band", "emd"))
            writer.writerows((row, band, f"{value:.6f}") for row, band, value in self.rows())
        return path


def emd_report(
    real_images: np.ndarray,
    fake_images: np.ndarray,
    depth: int = 3,
    bins: int = DEFAULT_BINS,
) -> EmdReport:
    """Average per-pair sub-band EMDs between paired real and fake images.

    Parameters
    ----------
    real_images, fake_images : ndarray
        Paired batches ``(N, C, H, W)``; fake ``k`` is derived from real ``k``.
    depth : int
        Wavelet decomposition depth.
    bins : int
        Histogram bins over each pair's shared value range.

    Returns
    -------
    EmdReport
        Mean EMDs; values are in bin units so scaling both sets leaves them unchanged.
    """
    real_images = np.asarray(real_images, dtype=np.float64)
    fake_images = np.asarray(fake_images, dtype=np.float64)
    if real_images.shape != fake_images.shape:
        msg = f"Unpaired sets: {real_images.shape} real vs {fake_images.shape} fake images."
        raise DataError(msg)
    if real_images.ndim != 4 or real_images.shape[0] == 0:
        msg = f"Expected non-empty (N, C, H, W) batches, got {real_images.shape}."
        raise DataError(msg)

    real_pyramid = decompose(Tensor(real_images), depth)
    fake_pyramid = decompose(Tensor(fake_images), depth)
    count = real_images.shape[0]
    image_total = 0.0
    totals = {(level, band): 0.0 for level in range(1, depth + 1) for band in BANDS}
    for index in range(count):
        image_total += emd_1d(*shared_histograms(real_images[index], fake_images[index], bins))
        for level, band in totals:
            real_band = real_pyramid[level].band(band).data[index]
            fake_band = fake_pyramid[level].band(band).data[index]
            totals[(level, band)] += emd_1d(*shared_histograms(real_band, fake_band, bins))

    report = EmdReport(image_total / count, {key: value / count for key, value in totals.items()}, depth, bins, count)
    logger.info("EMD over %d pairs: image %.4f", count, report.image)
    return report


__all__ = ["DEFAULT_BINS", "IMAGE_ROW", "EmdReport", "emd_1d", "emd_report", "shared_histograms"]
