"""Haar discrete wavelet transform, its inverse and recursive decomposition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Function, Tensor

BANDS = ("LL", "LH", "HL", "HH")
HIGH_BANDS = ("LH", "HL", "HH")


def _default_kernels() -> dict[str, np.ndarray]:
    return {
        "LL": 0.5 * np.array([[1.0, 1.0], [1.0, 1.0]]),
        "LH": 0.5 * np.array([[1.0, 1.0], [-1.0, -1.0]]),
        "HL": 0.5 * np.array([[1.0, -1.0], [1.0, -1.0]]),
        "HH": 0.5 * np.array([[1.0, -1.0], [-1.0, 1.0]]),
    }


@dataclass(frozen=True, slots=True)
class HaarFilters:
    """The four 2x2 Haar analysis kernels ``f_LL, f_LH, f_HL, f_HH``."""

    kernels: dict[str, np.ndarray] = field(default_factory=_default_kernels)

    def matrix(self) -> np.ndarray:
        """Stack the row-major flattened kernels into a ``(4, 4)`` analysis matrix."""
        return np.stack([self.kernels[band].reshape(-1) for band in BANDS])

    def is_orthogonal(self, tol: float = 1e-12) -> bool:
        matrix = self.matrix()
        return bool(np.allclose(matrix @ matrix.T, np.eye(4), atol=tol))


HAAR = HaarFilters()
_ANALYSIS = HAAR.matrix()


@dataclass(slots=True)
class WaveletLevel:
    """One decomposition level; all four sub-bands share shape ``(B, C, H/2, W/2)``."""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    level: int = 1

    def __post_init__(self) -> None:
        shapes = {band.shape for band in self.bands()}
        if len(shapes) != 1:
            msg = f"Sub-bands of level {self.level} differ in shape: {sorted(shapes)}."
            raise ShapeError(msg)
        if self.level < 1:
            msg = f"Level index must be >= 1, got {self.level}."
            raise ShapeError(msg)

    def bands(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.ll, self.lh, self.hl, self.hh

    def high(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.lh, self.hl, self.hh

    def band(self, name: str) -> Tensor:
        return dict(zip(BANDS, self.bands()))[name]

    @property
    def extent(self) -> tuple[int, int]:
        return self.ll.shape[-2], self.ll.shape[-1]


@dataclass(slots=True)
class WaveletPyramid:
    """Levels ``1..depth``; level ``k + 1`` is derived from level ``k``'s LL band."""

    levels: list[WaveletLevel]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, level: int) -> WaveletLevel:
        """Return level ``level`` (1-based)."""
        if not 1 <= level <= len(self.levels):
            msg = f"Pyramid has levels 1..{len(self.levels)}, requested {level}."
            raise IndexError(msg)
        return self.levels[level - 1]


class HaarAnalysis(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        phases = np.stack([x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]])
        return np.tensordot(_ANALYSIS, phases, axes=(1, 0))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (_interleave(np.tensordot(_ANALYSIS.T, grad, axes=(1, 0))),)


class HaarSynthesis(Function):
    def forward(self, ll: np.ndarray, lh: np.ndarray, hl: np.ndarray, hh: np.ndarray) -> np.ndarray:
        return _interleave(np.tensordot(_ANALYSIS.T, np.stack([ll, lh, hl, hh]), axes=(1, 0)))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        phases = np.stack(
            [grad[..., 0::2, 0::2], grad[..., 0::2, 1::2], grad[..., 1::2, 0::2], grad[..., 1::2, 1::2]],
        )
        bands = np.tensordot(_ANALYSIS, phases, axes=(1, 0))
        return tuple(np.ascontiguousarray(band) for band in bands)


def _interleave(phases: np.ndarray) -> np.ndarray:
    """Inverse of the 2x2 polyphase split: ``(4, ..., h, w) -> (..., 2h, 2w)``."""
    top_left, top_right, bottom_left, bottom_right = phases
    out = np.empty((*top_left.shape[:-2], 2 * top_left.shape[-2], 2 * top_left.shape[-1]))
    out[..., 0::2, 0::2] = top_left
    out[..., 0::2, 1::2] = top_right
    out[..., 1::2, 0::2] = bottom_left
    out[..., 1::2, 1::2] = bottom_right
    return out


def dwt2(x: Tensor, level: int = 1) -> WaveletLevel:
    """Single-level Haar DWT of every channel independently.

    Each sub-band is the stride-2 valid cross-correlation of ``x`` with the
    corresponding kernel of :data:`HAAR`.

    Parameters
    ----------
    x : Tensor
        Image batch ``(B, C, H, W)`` with even ``H`` and ``W``.
    level : int, optional
        Index stored on the result, by default ``1``.

    Returns
    -------
    WaveletLevel
        Differentiable LL/LH/HL/HH sub-bands of shape ``(B, C, H/2, W/2)``.

    Raises
    ------
    ShapeError
        If ``x`` is not 4-D or an extent is odd.
    """
    if x.ndim != 4:
        msg = f"dwt2 expects (B, C, H, W), got {x.shape}."
        raise ShapeError(msg)
    height, width = x.shape[2:]
    if height % 2 or width % 2:
        msg = f"dwt2 needs even spatial extents, got {height}x{width}."
        raise ShapeError(msg)
    stacked = HaarAnalysis.apply(x)
    return WaveletLevel(stacked[0], stacked[1], stacked[2], stacked[3], level=level)


def idwt2(level: WaveletLevel) -> Tensor:
    """Exact inverse of :func:`dwt2`."""
    return HaarSynthesis.apply(*level.bands())


def decompose(x: Tensor, depth: int = 3) -> WaveletPyramid:
    """Recursive Haar decomposition of the LL band.

    Raises
    ------
    ShapeError
        If the spatial extents are not divisible by ``2 ** depth``.
    """
    if depth < 1:
        msg = f"Decomposition depth must be >= 1, got {depth}."
        raise ShapeError(msg)
    divisor = 2**depth
    if x.ndim != 4 or x.shape[2] % divisor or x.shape[3] % divisor:
        msg = f"Input {x.shape} is not divisible by 2**{depth} = {divisor} spatially."
        raise ShapeError(msg)
    levels: list[WaveletLevel] = []
    current = x
    for index in range(1, depth + 1):
        level = dwt2(current, level=index)
        levels.append(level)
        current = level.ll
    return WaveletPyramid(levels)


def high_band_energy(level: WaveletLevel, mask: np.ndarray | None = None) -> float:
    """Sum of squared LH/HL/HH coefficients.

    Parameters
    ----------
    level : WaveletLevel
        Decomposition level to measure.
    mask : ndarray of bool, optional
        ``(h, w)`` selection at the sub-band resolution; all positions when omitted.

    Returns
    -------
    float
        Total high-band energy over batch and channels.
    """
    total = 0.0
    for band in level.high():
        squared = band.data**2
        total += float(squared[..., mask].sum()) if mask is not None else float(squared.sum())
    return total


__all__ = [
    "BANDS",
    "HAAR",
    "HIGH_BANDS",
    "HaarFilters",
    "WaveletLevel",
    "WaveletPyramid",
    "decompose",
    "dwt2",
    "high_band_energy",
    "idwt2",
]
