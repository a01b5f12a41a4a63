"""Neural network layers, parameter containers and losses built on :mod:`mswt.tensor`."""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, ShapeError
from .tensor import (
    DTYPE,
    Function,
    Tensor,
    add,
    bias_add,
    matmul,
    parameter,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)

BN_MOMENTUM = 0.1
NORM_EPS = 1e-5


@dataclass(slots=True)
class Conv2dParams:
    """Weights of a 2D cross-correlation layer.

    Parameters
    ----------
    weight : Tensor
        Kernel of shape ``(out_ch, in_ch, kh, kw)``.
    bias : Tensor
        Bias of shape ``(out_ch,)``.
    stride : int
        Step between output positions, ``>= 1``.
    padding : int
        Zero padding on every spatial border, ``>= 0``.
    """

    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if self.weight.ndim != 4 or min(self.weight.shape[2:]) < 1:
            msg = f"Convolution weight must be (out, in, kh>=1, kw>=1), got {self.weight.shape}."
            raise ShapeError(msg)
        if self.bias.shape != (self.weight.shape[0],):
            msg = f"Convolution bias {self.bias.shape} does not match {self.weight.shape[0]} output channels."
            raise ShapeError(msg)
        if self.stride < 1 or self.padding < 0:
            msg = f"Invalid stride {self.stride} / padding {self.padding}."
            raise ShapeError(msg)


@dataclass(slots=True)
class BatchNormParams:
    """Affine parameters and running statistics of a batch-norm layer.

    ``running_mean``, ``running_var`` and ``tracked`` are buffers: they are saved
    in checkpoints but never receive gradients.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    tracked: Tensor
    momentum: float = BN_MOMENTUM
    eps: float = NORM_EPS


@dataclass(slots=True)
class ConvBnParams:
    """A ``conv -> batchnorm -> relu`` block."""

    conv: Conv2dParams
    bn: BatchNormParams


@dataclass(slots=True)
class LinearParams:
    """Affine map ``x @ weight + bias`` with ``weight`` of shape ``(in, out)``."""

    weight: Tensor
    bias: Tensor


@dataclass(slots=True)
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = NORM_EPS


@dataclass(slots=True)
class MhaParams:
    """Projections of a multi-head attention layer.

    Parameters
    ----------
    wq, wk, wv, wo : LinearParams
        Query, key, value and output projections, each ``(d, d)``.
    heads : int
        Number of heads; ``d`` must be divisible by it.
    """

    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wo: LinearParams
    heads: int

    def __post_init__(self) -> None:
        dim = self.wq.weight.shape[0]
        if self.heads < 1 or dim % self.heads != 0:
            msg = f"Embedding dimension {dim} is not divisible by {self.heads} heads."
            raise ConfigError(msg)

    @property
    def dim(self) -> int:
        return self.wq.weight.shape[0]


@dataclass(slots=True)
class TransformerParams:
    """Attention, normalization and feed-forward weights of one transformer block."""

    mha: MhaParams
    ln1: LayerNormParams
    ffn_in: LinearParams
    ffn_out: LinearParams
    ln2: LayerNormParams

    @property
    def dim(self) -> int:
        return self.mha.dim


def named_tensors(module: Any, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk a parameter container and yield every tensor with a dotted name.

    Dataclass fields, lists and tuples are traversed in declaration order, so
    names and ordering are stable across runs.

    Parameters
    ----------
    module : object
        Parameter dataclass, sequence of them, or a tensor.
    prefix : str, optional
        Name prefix, by default ``""``.

    Yields
    ------
    tuple of (str, Tensor)
        Parameters (``requires_grad``) and buffers alike.
    """
    if isinstance(module, Tensor):
        yield prefix, module
    elif dataclasses.is_dataclass(module) and not isinstance(module, type):
        for field in dataclasses.fields(module):
            name = f"{prefix}.{field.name}" if prefix else field.name
            yield from named_tensors(getattr(module, field.name), name)
    elif isinstance(module, (list, tuple)):
        for index, item in enumerate(module):
            name = f"{prefix}.{index}" if prefix else str(index)
            yield from named_tensors(item, name)


def named_parameters(module: Any, prefix: str = "") -> dict[str, Tensor]:
    return {name: tensor for name, tensor in named_tensors(module, prefix) if tensor.requires_grad}


# Initialisation -----------------------------------------------------------


def kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_conv(
    rng: np.random.Generator,
    in_ch: int,
    out_ch: int,
    kernel: int,
    *,
    stride: int = 1,
    padding: int = 0,
) -> Conv2dParams:
    weight = kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in=in_ch * kernel * kernel)
    return Conv2dParams(parameter(weight), parameter(np.zeros(out_ch)), stride=stride, padding=padding)


def init_batchnorm(channels: int) -> BatchNormParams:
    return BatchNormParams(
        gamma=parameter(np.ones(channels)),
        beta=parameter(np.zeros(channels)),
        running_mean=Tensor(np.zeros(channels)),
        running_var=Tensor(np.ones(channels)),
        tracked=Tensor(np.zeros(1)),
    )


def init_conv_bn(rng: np.random.Generator, in_ch: int, out_ch: int, kernel: int = 3) -> ConvBnParams:
    return ConvBnParams(init_conv(rng, in_ch, out_ch, kernel, padding=kernel // 2), init_batchnorm(out_ch))


def init_linear(rng: np.random.Generator, in_features: int, out_features: int) -> LinearParams:
    return LinearParams(
        parameter(xavier_uniform(rng, in_features, out_features)),
        parameter(np.zeros(out_features)),
    )


def init_layernorm(dim: int) -> LayerNormParams:
    return LayerNormParams(parameter(np.ones(dim)), parameter(np.zeros(dim)))


def init_mha(rng: np.random.Generator, dim: int, heads: int) -> MhaParams:
    return MhaParams(
        wq=init_linear(rng, dim, dim),
        wk=init_linear(rng, dim, dim),
        wv=init_linear(rng, dim, dim),
        wo=init_linear(rng, dim, dim),
        heads=heads,
    )


def init_transformer(rng: np.random.Generator, dim: int, heads: int, expansion: int = 2) -> TransformerParams:
    return TransformerParams(
        mha=init_mha(rng, dim, heads),
        ln1=init_layernorm(dim),
        ffn_in=init_linear(rng, dim, expansion * dim),
        ffn_out=init_linear(rng, expansion * dim, dim),
        ln2=init_layernorm(dim),
    )


# Convolution and pooling ----------------------------------------------------


def _output_extent(size: int, kernel: int, stride: int, padding: int, name: str) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        msg = f"{name}: extent {size} with kernel {kernel}, stride {stride}, padding {padding} is not integral."
        raise ShapeError(msg)
    return span // stride + 1


class Conv2d(Function):
    def forward(self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray, *, stride: int, padding: int) -> np.ndarray:
        self.stride, self.padding = stride, padding
        self.in_shape = x.shape
        self.weight = weight
        padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        self.padded_shape = padded.shape
        kh, kw = weight.shape[2:]
        self.windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.einsum("bchwij,ocij->bohw", self.windows, weight, optimize=True)
        return out + bias[None, :, None, None]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        stride, padding = self.stride, self.padding
        kh, kw = self.weight.shape[2:]
        out_h, out_w = grad.shape[2:]
        grad_weight = np.einsum("bchwij,bohw->ocij", self.windows, grad, optimize=True)
        grad_bias = grad.sum(axis=(0, 2, 3))
        grad_padded = np.zeros(self.padded_shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                contribution = np.einsum("bohw,oc->bchw", grad, self.weight[:, :, i, j], optimize=True)
                grad_padded[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += contribution
        height, width = self.in_shape[2:]
        grad_x = grad_padded[:, :, padding : padding + height, padding : padding + width]
        return np.ascontiguousarray(grad_x), grad_weight, grad_bias


def conv2d(x: Tensor, params: Conv2dParams) -> Tensor:
    """Cross-correlate ``x`` of shape ``(B, Cin, H, W)`` with ``params`` and add the bias.

    Raises
    ------
    ShapeError
        On a channel mismatch or a non-integral output extent.
    """
    if x.ndim != 4 or x.shape[1] != params.weight.shape[1]:
        msg = f"conv2d: input {x.shape} does not match weight {params.weight.shape}."
        raise ShapeError(msg)
    kh, kw = params.weight.shape[2:]
    _output_extent(x.shape[2], kh, params.stride, params.padding, "conv2d")
    _output_extent(x.shape[3], kw, params.stride, params.padding, "conv2d")
    return Conv2d.apply(x, params.weight, params.bias, stride=params.stride, padding=params.padding)


class MaxPool2d(Function):
    def forward(self, x: np.ndarray, *, kernel: int, stride: int) -> np.ndarray:
        self.in_shape, self.kernel, self.stride = x.shape, kernel, stride
        windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
        flat = windows.reshape(*windows.shape[:4], kernel * kernel)
        self.argmax = flat.argmax(axis=-1)
        return np.take_along_axis(flat, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        kernel, stride = self.kernel, self.stride
        out_h, out_w = grad.shape[2:]
        grad_x = np.zeros(self.in_shape, dtype=DTYPE)
        for i in range(kernel):
            for j in range(kernel):
                routed = grad * (self.argmax == i * kernel + j)
                grad_x[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += routed
        return (grad_x,)


def maxpool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Max over ``kernel x kernel`` windows; ties route the gradient to the first maximum."""
    _output_extent(x.shape[2], kernel, stride, 0, "maxpool2d")
    _output_extent(x.shape[3], kernel, stride, 0, "maxpool2d")
    return MaxPool2d.apply(x, kernel=kernel, stride=stride)


# Normalisation --------------------------------------------------------------


class BatchNorm2d(Function):
    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        *,
        eps: float,
        stats: tuple[np.ndarray, np.ndarray] | None,
    ) -> np.ndarray:
        self.batch_stats = stats is None
        if stats is None:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
        else:
            mean, var = stats
        self.batch_mean, self.batch_var = mean, var
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        self.gamma = gamma
        return self.xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = (0, 2, 3)
        grad_gamma = (grad * self.xhat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_xhat = grad * self.gamma[None, :, None, None]
        inv_std = self.inv_std[None, :, None, None]
        if not self.batch_stats:
            return grad_xhat * inv_std, grad_gamma, grad_beta
        centred = grad_xhat - grad_xhat.mean(axis=axes, keepdims=True)
        projection = (grad_xhat * self.xhat).mean(axis=axes, keepdims=True)
        return inv_std * (centred - self.xhat * projection), grad_gamma, grad_beta


def batchnorm2d(x: Tensor, params: BatchNormParams, *, training: bool) -> Tensor:
    """Batch normalisation over ``(B, H, W)`` per channel.

    In training mode the batch statistics normalise ``x`` and the running
    estimates are updated with momentum ``params.momentum`` (unbiased variance).
    In eval mode the running estimates are used.

    Raises
    ------
    ConfigError
        In eval mode when no statistics have been recorded yet.
    """
    if x.ndim != 4 or x.shape[1] != params.gamma.shape[0]:
        msg = f"batchnorm2d: input {x.shape} does not match {params.gamma.shape[0]} channels."
        raise ShapeError(msg)
    if not training:
        if params.tracked.data[0] == 0:
            msg = "batchnorm2d in eval mode before any running statistics were recorded."
            raise ConfigError(msg)
        stats = (params.running_mean.data, params.running_var.data)
        return BatchNorm2d.apply(x, params.gamma, params.beta, eps=params.eps, stats=stats)
    out = BatchNorm2d.apply(x, params.gamma, params.beta, eps=params.eps, stats=None)
    update_running_stats(x.data, params)
    return out


def update_running_stats(x: np.ndarray, params: BatchNormParams) -> None:
    count = x.shape[0] * x.shape[2] * x.shape[3]
    batch_mean = x.mean(axis=(0, 2, 3))
    batch_var = x.var(axis=(0, 2, 3), ddof=1) if count > 1 else x.var(axis=(0, 2, 3))
    momentum = params.momentum
    params.running_mean.data = (1.0 - momentum) * params.running_mean.data + momentum * batch_mean
    params.running_var.data = (1.0 - momentum) * params.running_var.data + momentum * batch_var
    params.tracked.data = params.tracked.data + 1.0


class LayerNorm(Function):
    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, *, eps: float) -> np.ndarray:
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mean) * self.inv_std
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lead = tuple(range(grad.ndim - 1))
        grad_gamma = (grad * self.xhat).sum(axis=lead)
        grad_beta = grad.sum(axis=lead)
        grad_xhat = grad * self.gamma
        centred = grad_xhat - grad_xhat.mean(axis=-1, keepdims=True)
        projection = (grad_xhat * self.xhat).mean(axis=-1, keepdims=True)
        return self.inv_std * (centred - self.xhat * projection), grad_gamma, grad_beta


def layer_norm(x: Tensor, params: LayerNormParams) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    if x.shape[-1] != params.gamma.shape[0]:
        msg = f"layer_norm: last axis {x.shape[-1]} does not match {params.gamma.shape[0]}."
        raise ShapeError(msg)
    return LayerNorm.apply(x, params.gamma, params.beta, eps=params.eps)


def conv_bn_relu(x: Tensor, params: ConvBnParams, *, training: bool) -> Tensor:
    return relu(batchnorm2d(conv2d(x, params.conv), params.bn, training=training))


# Attention ----------------------------------------------------------------


def linear(x: Tensor, params: LinearParams) -> Tensor:
    """Apply ``x @ weight + bias`` over the last axis of ``x``."""
    in_features = params.weight.shape[0]
    if x.shape[-1] != in_features:
        msg = f"linear: input {x.shape} does not match weight {params.weight.shape}."
        raise ShapeError(msg)
    lead = x.shape[:-1]
    flat = reshape(x, (math.prod(lead), in_features))
    out = bias_add(matmul(flat, params.weight), params.bias, axis=-1)
    return reshape(out, (*lead, params.weight.shape[1]))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    batch, tokens, dim = x.shape
    return transpose(reshape(x, (batch, tokens, heads, dim // heads)), (0, 2, 1, 3))


def mha(q_in: Tensor, k_in: Tensor, v_in: Tensor, params: MhaParams) -> tuple[Tensor, Tensor]:
    """Multi-head scaled dot-product attention.

    Parameters
    ----------
    q_in : Tensor
        Query tokens ``(B, T, d)``.
    k_in, v_in : Tensor
        Key and value tokens ``(B, S, d)``.
    params : MhaParams
        Projections and head count.

    Returns
    -------
    Tensor
        Attended tokens ``(B, T, d)``.
    Tensor
        Attention weights ``(B, heads, T, S)``; every row sums to one.
    """
    dim, heads = params.dim, params.heads
    if q_in.ndim != 3 or k_in.ndim != 3 or v_in.ndim != 3:
        msg = "mha expects (batch, tokens, dim) inputs."
        raise ShapeError(msg)
    if q_in.shape[-1] != dim or k_in.shape[-1] != dim or v_in.shape[-1] != dim:
        msg = f"mha: embedding dims {q_in.shape[-1]}, {k_in.shape[-1]}, {v_in.shape[-1]} do not all equal {dim}."
        raise ShapeError(msg)
    if k_in.shape[:2] != v_in.shape[:2] or q_in.shape[0] != k_in.shape[0] or min(q_in.shape[1], k_in.shape[1]) < 1:
        msg = f"mha: incompatible token extents {q_in.shape}, {k_in.shape}, {v_in.shape}."
        raise ShapeError(msg)

    batch, tokens, _ = q_in.shape
    query = _split_heads(linear(q_in, params.wq), heads)
    key = _split_heads(linear(k_in, params.wk), heads)
    value = _split_heads(linear(v_in, params.wv), heads)
    scores = scale(matmul(query, transpose(key, (0, 1, 3, 2))), 1.0 / math.sqrt(dim // heads))
    attn = softmax(scores, axis=-1)
    context = transpose(matmul(attn, value), (0, 2, 1, 3))
    out = linear(reshape(context, (batch, tokens, dim)), params.wo)
    return out, attn


def transformer_block(
    tokens_q: Tensor,
    tokens_kv: Tensor,
    params: TransformerParams,
    *,
    tokens_v: Tensor | None = None,
    residual: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Attention block ``LN2(z + FFN(z))`` with ``z = LN1(residual + MHA(q, k, v))``.

    Parameters
    ----------
    tokens_q : Tensor
        Tokens embedded into queries.
    tokens_kv : Tensor
        Tokens embedded into keys (and values unless ``tokens_v`` is given).
    params : TransformerParams
        Block weights.
    tokens_v : Tensor, optional
        Separate value source, by default ``tokens_kv``.
    residual : Tensor, optional
        Residual base added to the attention output, by default ``tokens_q``.

    Returns
    -------
    Tensor
        Output tokens with the shape of the queries.
    Tensor
        Attention weights ``(B, heads, T, S)``.
    """
    values = tokens_kv if tokens_v is None else tokens_v
    base = tokens_q if residual is None else residual
    attended, attn = mha(tokens_q, tokens_kv, values, params.mha)
    if base.shape != attended.shape:
        msg = f"Residual base {base.shape} does not match attention output {attended.shape}."
        raise ShapeError(msg)
    hidden = layer_norm(add(base, attended), params.ln1)
    expanded = linear(relu(linear(hidden, params.ffn_in)), params.ffn_out)
    return layer_norm(add(hidden, expanded), params.ln2), attn


# Losses ---------------------------------------------------------------------


class CrossEntropy(Function):
    def forward(self, logits: np.ndarray, *, labels: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        self.probs = np.exp(log_probs)
        self.labels = labels
        rows = np.arange(logits.shape[0])
        return np.array(-log_probs[rows, labels].mean())

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        batch = self.probs.shape[0]
        delta = self.probs.copy()
        delta[np.arange(batch), self.labels] -= 1.0
        return (delta * (grad / batch),)


def cross_entropy(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``.

    Raises
    ------
    ShapeError
        If ``logits`` is not ``(B, classes)`` or the label count differs from ``B``.
    DataError
        If a label is outside ``[0, classes)``.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0] or logits.shape[0] == 0:
        msg = f"cross_entropy: logits {logits.shape} do not match {labels.shape[0]} labels."
        raise ShapeError(msg)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        msg = f"Labels must lie in [0, {logits.shape[1]}), got {labels.tolist()}."
        raise DataError(msg)
    return CrossEntropy.apply(logits, labels=labels)


__all__ = [
    "BatchNormParams",
    "Conv2dParams",
    "ConvBnParams",
    "LayerNormParams",
    "LinearParams",
    "MhaParams",
    "TransformerParams",
    "batchnorm2d",
    "conv2d",
    "conv_bn_relu",
    "cross_entropy",
    "init_batchnorm",
    "init_conv",
    "init_conv_bn",
    "init_layernorm",
    "init_linear",
    "init_mha",
    "init_transformer",
    "layer_norm",
    "linear",
    "maxpool2d",
    "mha",
    "named_parameters",
    "named_tensors",
    "relu",
    "softmax",
    "transformer_block",
    "update_running_stats",
]
