"""Frequency and spatial feature fusion (FSF) block.

An FSF block turns one wavelet level's high-frequency bands into features
``F_H``, projects the backbone stage features to ``F_S``, and fuses the two
with frequency-based spatial attention (queries and keys from ``F_H``, values
from ``F_S``) and cross-modality attention (queries from ``F_S``, keys and
values from ``F_H``). The two attention outputs are concatenated on channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import (
    ConvBnParams,
    Conv2dParams,
    TransformerParams,
    conv2d,
    conv_bn_relu,
    init_conv,
    init_conv_bn,
    init_transformer,
    transformer_block,
)
from .tensor import Tensor, concat, reshape, transpose
from .wavelet import WaveletLevel

FUSION_MODES = ("full", "dwt_concat", "sa_only", "fsa_only", "cma_only")


@dataclass(slots=True)
class FsfParams:
    """Learnable parameters of one FSF block.

    Parameters
    ----------
    band_convs : tuple of ConvBnParams
        3x3 ``3 -> d`` conv blocks for LH, HL and HH.
    combine_conv : Conv2dParams
        1x1 ``3d -> d`` convolution fusing the band features into ``F_H``.
    down_conv : Conv2dParams
        1x1 ``Cs -> d`` down-channel convolution producing ``F_S``.
    fsa, cma : TransformerParams
        Attention blocks of the two fusion branches.
    embed_dim : int
        Attention width ``d``.
    heads : int
        Attention heads.
    """

    band_convs: tuple[ConvBnParams, ConvBnParams, ConvBnParams]
    combine_conv: Conv2dParams
    down_conv: Conv2dParams
    fsa: TransformerParams
    cma: TransformerParams
    embed_dim: int
    heads: int


@dataclass(slots=True)
class FsfOutput:
    """Result of :func:`fsf_forward`.

    ``fused`` always has ``2d`` channels; ``provenance`` names the branch that
    produced each half (``"fsa"``, ``"sa"``, ``"cma"`` or ``"dwt"``).
    """

    fused: Tensor
    o1: Tensor | None
    o2: Tensor | None
    attn_fsa: Tensor | None
    attn_cma: Tensor | None
    provenance: tuple[str, str]


def init_fsf(
    rng: np.random.Generator,
    stage_channels: int,
    embed_dim: int,
    heads: int,
    *,
    image_channels: int = 3,
    ffn_expansion: int = 2,
) -> FsfParams:
    if embed_dim % heads:
        msg = f"Embedding dimension {embed_dim} is not divisible by {heads} heads."
        raise ConfigError(msg)
    return FsfParams(
        band_convs=tuple(init_conv_bn(rng, image_channels, embed_dim) for _ in range(3)),
        combine_conv=init_conv(rng, 3 * embed_dim, embed_dim, 1),
        down_conv=init_conv(rng, stage_channels, embed_dim, 1),
        fsa=init_transformer(rng, embed_dim, heads, ffn_expansion),
        cma=init_transformer(rng, embed_dim, heads, ffn_expansion),
        embed_dim=embed_dim,
        heads=heads,
    )


def to_tokens(feature: Tensor) -> Tensor:
    """``(B, d, h, w) -> (B, h*w, d)``; one token per spatial position, row-major."""
    batch, channels, height, width = feature.shape
    return transpose(reshape(feature, (batch, channels, height * width)), (0, 2, 1))


def from_tokens(tokens: Tensor, height: int, width: int) -> Tensor:
    """Inverse of :func:`to_tokens`."""
    batch, _, channels = tokens.shape
    return reshape(transpose(tokens, (0, 2, 1)), (batch, channels, height, width))


def _require_match(first: Tensor, second: Tensor, what: str) -> None:
    if first.shape != second.shape:
        msg = f"{what}: {first.shape} does not match {second.shape}."
        raise ShapeError(msg)


def prep_high_freq(level: WaveletLevel, params: FsfParams, *, training: bool = True) -> Tensor:
    """High-frequency features ``F_H = combine(concat(conv_LH(LH), conv_HL(HL), conv_HH(HH)))``."""
    band_features = [
        conv_bn_relu(band, block, training=training) for band, block in zip(level.high(), params.band_convs)
    ]
    return conv2d(concat(band_features, axis=1), params.combine_conv)


def down_channel(feat: Tensor, params: FsfParams) -> Tensor:
    """Spatial features ``F_S``: 1x1 projection of the stage features to ``d`` channels."""
    return conv2d(feat, params.down_conv)


def fsa(f_h: Tensor, f_s: Tensor, params: FsfParams, *, attention_source: str = "high") -> tuple[Tensor, Tensor]:
    """Frequency-based spatial attention.

    Queries and keys come from ``f_h`` and values from ``f_s``; the residual
    base is ``f_s``. With ``attention_source="spatial"`` the queries and keys
    are taken from ``f_s`` instead (plain spatial self-attention).

    Returns
    -------
    Tensor
        ``O_1`` of shape ``(B, d, h, w)``.
    Tensor
        Attention weights ``(B, heads, h*w, h*w)``.
    """
    _require_match(f_h, f_s, "fsa")
    height, width = f_s.shape[2:]
    spatial = to_tokens(f_s)
    if attention_source == "high":
        guide = to_tokens(f_h)
    elif attention_source == "spatial":
        guide = spatial
    else:
        msg = f"Unknown attention source {attention_source!r}."
        raise ConfigError(msg)
    tokens, attn = transformer_block(guide, guide, params.fsa, tokens_v=spatial, residual=spatial)
    return from_tokens(tokens, height, width), attn


def cma(f_s: Tensor, f_h: Tensor, params: FsfParams) -> tuple[Tensor, Tensor]:
    """Cross-modality attention: queries from ``f_s``, keys and values from ``f_h``."""
    _require_match(f_s, f_h, "cma")
    height, width = f_s.shape[2:]
    tokens, attn = transformer_block(to_tokens(f_s), to_tokens(f_h), params.cma)
    return from_tokens(tokens, height, width), attn


def fsf_forward(
    feat: Tensor,
    level: WaveletLevel,
    params: FsfParams,
    *,
    mode: str = "full",
    training: bool = True,
) -> FsfOutput:
    """Fuse stage features with one wavelet level.

    Parameters
    ----------
    feat : Tensor
        Stage features ``(B, Cs, h, w)``.
    level : WaveletLevel
        Wavelet level whose sub-bands have extent ``(h, w)``.
    params : FsfParams
        Block parameters.
    mode : str, optional
        ``"full"`` concatenates ``(O_1, O_2)``. Ablations keep ``2d`` output channels:
        ``"fsa_only"`` gives ``(O_1, O_1)``, ``"cma_only"`` gives ``(O_2, O_2)``,
        ``"sa_only"`` gives spatial self-attention twice, ``"dwt_concat"`` gives
        ``(F_H, F_H)`` without attention.
    training : bool, optional
        Batch-norm mode of the band convolutions, by default ``True``.

    Returns
    -------
    FsfOutput
        Fused features and the attention maps that were computed.
    """
    if mode not in FUSION_MODES:
        msg = f"Unknown fusion mode {mode!r}; expected one of {FUSION_MODES}."
        raise ConfigError(msg)
    if level.extent != tuple(feat.shape[2:]):
        msg = f"Wavelet level {level.level} extent {level.extent} does not match stage features {feat.shape}."
        raise ShapeError(msg)

    f_h = prep_high_freq(level, params, training=training)
    if mode == "dwt_concat":
        return FsfOutput(concat([f_h, f_h], axis=1), None, None, None, None, ("dwt", "dwt"))

    f_s = down_channel(feat, params)
    if mode == "sa_only":
        o1, attn = fsa(f_h, f_s, params, attention_source="spatial")
        return FsfOutput(concat([o1, o1], axis=1), o1, None, attn, None, ("sa", "sa"))
    if mode == "fsa_only":
        o1, attn = fsa(f_h, f_s, params)
        return FsfOutput(concat([o1, o1], axis=1), o1, None, attn, None, ("fsa", "fsa"))
    if mode == "cma_only":
        o2, attn = cma(f_s, f_h, params)
        return FsfOutput(concat([o2, o2], axis=1), None, o2, None, attn, ("cma", "cma"))

    o1, attn_fsa = fsa(f_h, f_s, params)
    o2, attn_cma = cma(f_s, f_h, params)
    return FsfOutput(concat([o1, o2], axis=1), o1, o2, attn_fsa, attn_cma, ("fsa", "cma"))


__all__ = [
    "FUSION_MODES",
    "FsfOutput",
    "FsfParams",
    "cma",
    "down_channel",
    "from_tokens",
    "fsa",
    "fsf_forward",
    "init_fsf",
    "prep_high_freq",
    "to_tokens",
]
