"""The multi-scale wavelet network: staged backbone, per-level FSF fusion, classifier."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .fsf import FsfOutput, FsfParams, fsf_forward, init_fsf
from .nn import (
    Conv2dParams,
    ConvBnParams,
    LinearParams,
    conv2d,
    conv_bn_relu,
    init_conv,
    init_conv_bn,
    init_linear,
    linear,
    maxpool2d,
    named_parameters,
    named_tensors,
)
from .tensor import Tensor, concat, mean
from .wavelet import decompose

logger = logging.getLogger(__name__)

ABLATION_MODES = ("full", "backbone_only", "dwt_concat", "sa_only", "fsa_only", "cma_only")
WAVELET_DEPTH = 3


@dataclass(frozen=True, slots=True)
class StageConfig:
    """Channel widths and resolution change of one backbone stage."""

    in_ch: int
    out_ch: int
    num_blocks: int = 2
    downsample: int = 2

    def __post_init__(self) -> None:
        if min(self.in_ch, self.out_ch, self.num_blocks, self.downsample) < 1:
            msg = f"Invalid stage configuration {self}."
            raise ConfigError(msg)


@dataclass(frozen=True, slots=True)
class ModelConfig:
    """Architecture hyper-parameters.

    Parameters
    ----------
    image_size : int
        Side of the square input crop.
    widths : tuple of int
        Output channels of the four backbone stages.
    embed_dims, heads : tuple of int
        Attention width and head count of the FSF block at wavelet levels 1-3.
    ffn_expansion : int
        Hidden-width multiplier of the transformer feed-forward layers.
    mode : str
        Ablation mode, one of :data:`ABLATION_MODES`.
    fusion_levels : int
        Number of wavelet levels (from level 1) that are fused.
    max_tokens : int
        Largest attention sequence length allowed.
    seed : int
        Parameter-initialisation seed.
    """

    image_size: int = 64
    widths: tuple[int, ...] = (32, 64, 128, 256)
    embed_dims: tuple[int, ...] = (64, 128, 320)
    heads: tuple[int, ...] = (1, 2, 5)
    ffn_expansion: int = 2
    mode: str = "full"
    fusion_levels: int = WAVELET_DEPTH
    max_tokens: int = 4096
    seed: int = 0
    image_channels: int = 3
    num_classes: int = 2

    def __post_init__(self) -> None:
        if self.mode not in ABLATION_MODES:
            msg = f"Unknown ablation mode {self.mode!r}; expected one of {ABLATION_MODES}."
            raise ConfigError(msg)
        if len(self.widths) != 4:
            msg = f"The backbone has four stages, got widths {self.widths}."
            raise ConfigError(msg)
        if len(self.embed_dims) != WAVELET_DEPTH or len(self.heads) != WAVELET_DEPTH:
            msg = "embed_dims and heads need one entry per wavelet level."
            raise ConfigError(msg)
        if not 1 <= self.fusion_levels <= WAVELET_DEPTH:
            msg = f"fusion_levels must lie in 1..{WAVELET_DEPTH}, got {self.fusion_levels}."
            raise ConfigError(msg)
        for dim, heads in zip(self.embed_dims, self.heads):
            if heads < 1 or dim % heads:
                msg = f"Embedding dimension {dim} is not divisible by {heads} heads."
                raise ConfigError(msg)
        divisor = 2 ** len(self.widths)
        if self.image_size < divisor or self.image_size % divisor:
            msg = f"Image size {self.image_size} must be a positive multiple of {divisor}."
            raise ConfigError(msg)
        tokens = (self.image_size // 2) ** 2
        if tokens > self.max_tokens:
            msg = f"Level-1 attention would use {tokens} tokens, above the budget of {self.max_tokens}."
            raise ConfigError(msg)

    def stage_configs(self) -> tuple[StageConfig, ...]:
        channels = (self.image_channels, *self.widths)
        return tuple(StageConfig(channels[index], channels[index + 1]) for index in range(len(self.widths)))


@dataclass(slots=True)
class StageParams:
    blocks: list[ConvBnParams]
    downsample: int = 2


@dataclass(slots=True)
class MswtModel:
    """Parameters of the full network together with its configuration."""

    config: ModelConfig
    stages: list[StageParams]
    fsf: list[FsfParams]
    merge_projs: list[Conv2dParams]
    classifier: LinearParams
    param_groups: tuple[str, ...] = field(default=("stages", "fsf", "merge_projs", "classifier"), repr=False)

    @property
    def ablation_mode(self) -> str:
        return self.config.mode

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """Parameters and buffers in a stable order."""
        return [item for group in self.param_groups for item in named_tensors(getattr(self, group), group)]

    def parameters(self) -> dict[str, Tensor]:
        return {name: tensor for name, tensor in self.named_tensors() if tensor.requires_grad}

    def zero_grad(self) -> None:
        for _, tensor in self.named_tensors():
            tensor.zero_grad()


def build_model(config: ModelConfig | None = None) -> MswtModel:
    """Initialise every parameter group deterministically from ``config.seed``.

    All groups are built regardless of the ablation mode, so parameter sets are
    shared wherever two wirings overlap.
    """
    config = config or ModelConfig()
    rng = np.random.default_rng(config.seed)
    stages = []
    for stage in config.stage_configs():
        blocks = [init_conv_bn(rng, stage.in_ch, stage.out_ch)]
        blocks.extend(init_conv_bn(rng, stage.out_ch, stage.out_ch) for _ in range(stage.num_blocks - 1))
        stages.append(StageParams(blocks, stage.downsample))
    fsf = [
        init_fsf(
            rng,
            config.widths[index],
            config.embed_dims[index],
            config.heads[index],
            image_channels=config.image_channels,
            ffn_expansion=config.ffn_expansion,
        )
        for index in range(WAVELET_DEPTH)
    ]
    merge_projs = [
        init_conv(rng, config.widths[index] + 2 * config.embed_dims[index], config.widths[index], 1)
        for index in range(WAVELET_DEPTH)
    ]
    classifier = init_linear(rng, config.widths[-1], config.num_classes)
    return MswtModel(config, stages, fsf, merge_projs, classifier)


def stage_forward(x: Tensor, stage: StageParams, *, training: bool) -> Tensor:
    """First conv block, 2x2 max-pool downsampling, then the remaining conv blocks."""
    out = conv_bn_relu(x, stage.blocks[0], training=training)
    if stage.downsample > 1:
        out = maxpool2d(out, stage.downsample, stage.downsample)
    for block in stage.blocks[1:]:
        out = conv_bn_relu(out, block, training=training)
    return out


def model_forward(
    image: Tensor,
    model: MswtModel,
    *,
    training: bool = False,
) -> tuple[Tensor, dict[int, FsfOutput]]:
    """Run the network on a batch of square RGB crops.

    Parameters
    ----------
    image : Tensor
        Input ``(B, 3, H, W)`` with ``H == W == model.config.image_size``.
    model : MswtModel
        Network parameters.
    training : bool, optional
        Batch-norm mode, by default ``False``.

    Returns
    -------
    Tensor
        Class logits ``(B, 2)``; index 1 is "fake".
    dict of int to FsfOutput
        Fusion outputs (including attention maps) keyed by wavelet level.
    """
    config = model.config
    if image.ndim != 4 or image.shape[1] != config.image_channels:
        msg = f"Expected a (B, {config.image_channels}, H, W) batch, got {image.shape}."
        raise ShapeError(msg)
    if image.shape[2] != image.shape[3] or image.shape[2] != config.image_size:
        msg = f"Expected {config.image_size}x{config.image_size} crops, got {image.shape[2]}x{image.shape[3]}."
        raise ShapeError(msg)

    mode = model.ablation_mode
    fuse = mode != "backbone_only"
    pyramid = decompose(image, WAVELET_DEPTH) if fuse else None
    fusions: dict[int, FsfOutput] = {}
    features = image
    for index, stage in enumerate(model.stages):
        features = stage_forward(features, stage, training=training)
        level = index + 1
        if not fuse or level > config.fusion_levels or pyramid is None:
            continue
        output = fsf_forward(features, pyramid[level], model.fsf[index], mode=mode, training=training)
        fusions[level] = output
        features = conv2d(concat([features, output.fused], axis=1), model.merge_projs[index])

    pooled = mean(features, axis=(2, 3))
    return linear(pooled, model.classifier), fusions


def attention_maps(fusions: dict[int, FsfOutput]) -> dict[int, dict[str, np.ndarray]]:
    """Raw attention arrays per level, keyed ``"fsa"``/``"cma"`` (``"sa"`` in the spatial ablation)."""
    maps: dict[int, dict[str, np.ndarray]] = {}
    for level, output in fusions.items():
        entries: dict[str, np.ndarray] = {}
        if output.attn_fsa is not None:
            entries[output.provenance[0]] = output.attn_fsa.data
        if output.attn_cma is not None:
            entries["cma"] = output.attn_cma.data
        maps[level] = entries
    return maps


def count_params(model: MswtModel, prefix: str | None = None) -> int:
    """Number of trainable scalars, optionally restricted to names starting with ``prefix``."""
    return sum(
        tensor.size for name, tensor in model.parameters().items() if prefix is None or name.startswith(prefix)
    )


def fsf_parameters(model: MswtModel) -> dict[str, Tensor]:
    return named_parameters(model.fsf, "fsf")


__all__ = [
    "ABLATION_MODES",
    "WAVELET_DEPTH",
    "ModelConfig",
    "MswtModel",
    "StageConfig",
    "StageParams",
    "attention_maps",
    "build_model",
    "count_params",
    "fsf_parameters",
    "model_forward",
    "stage_forward",
]
