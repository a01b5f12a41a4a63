"""Central finite-difference checks of the reverse-mode gradients."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .fsf import fsf_forward, init_fsf
from .model import ModelConfig, build_model, model_forward
from .nn import (
    batchnorm2d,
    conv2d,
    cross_entropy,
    init_batchnorm,
    init_conv,
    init_layernorm,
    init_linear,
    init_mha,
    init_transformer,
    layer_norm,
    linear,
    maxpool2d,
    mha,
    named_parameters,
    transformer_block,
)
from .tensor import Tensor, add, mul, parameter, softmax, tensor_sum
from .wavelet import decompose, dwt2, idwt2

logger = logging.getLogger(__name__)

SUITES = ("nn", "wavelet", "fsf", "model")
SMALL_MODEL = ModelConfig(image_size=16, widths=(4, 6, 8, 8), embed_dims=(4, 4, 6), heads=(1, 2, 3))


@dataclass(slots=True)
class GradcheckReport:
    """Outcome of one gradient check; ``failures`` lists ``(input, flat index, analytic, numeric)``."""

    name: str
    checked: int = 0
    worst_rel: float = 0.0
    worst_abs: float = 0.0
    failures: list[tuple[int, int, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def weighted_sum(out: Tensor, seed: int = 0) -> Tensor:
    """Scalar ``sum(w * out)`` with weights drawn afresh from ``seed`` on every call.

    A plain sum does not work as the test objective: it has zero gradient through normalisation layers.
    """
    return tensor_sum(mul(out, Tensor(np.random.default_rng(seed).standard_normal(out.shape))))


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    *,
    name: str = "fn",
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    max_checks: int | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare autograd gradients of the scalar ``fn()`` with central differences.

    Parameters
    ----------
    fn : callable
        Re-evaluates the scalar loss from the current contents of ``inputs``.
    inputs : sequence of Tensor
        Leaves to differentiate; each must require gradients.
    name : str
        Label carried by the report.
    eps : float
        Finite-difference step.
    rtol, atol : float
        An entry passes when ``|a - n| <= atol`` or ``|a - n| / max(|a|, |n|) <= rtol``.
    max_checks : int, optional
        Entries checked per input, drawn at random with ``seed``; all when omitted.
    seed : int
        Seeds the entry subset.

    Returns
    -------
    GradcheckReport
        Worst errors and the failing entries.
    """
    for tensor in inputs:
        if not tensor.requires_grad:
            msg = f"gradcheck {name}: every input must require gradients."
            raise ConfigError(msg)
        tensor.zero_grad()
    fn().backward()
    analytic = [tensor.grad.copy() if tensor.grad is not None else np.zeros(tensor.shape) for tensor in inputs]

    rng = np.random.default_rng(seed)
    report = GradcheckReport(name)
    for position, tensor in enumerate(inputs):
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            indices = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
        for index in indices:
            original = flat[index]
            flat[index] = original + eps
            upper = fn().item()
            flat[index] = original - eps
            lower = fn().item()
            flat[index] = original
            numeric = (upper - lower) / (2.0 * eps)
            expected = float(analytic[position].reshape(-1)[index])
            error = abs(expected - numeric)
            scale = max(abs(expected), abs(numeric))
            relative = error / scale if scale > 0.0 else 0.0
            report.checked += 1
            report.worst_abs = max(report.worst_abs, error)
            if error > atol:
                report.worst_rel = max(report.worst_rel, relative)
                if relative > rtol:
                    report.failures.append((position, int(index), expected, numeric))
    logger.debug("gradcheck %s: %d entries, worst rel %.3e", name, report.checked, report.worst_rel)
    return report


def assert_gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], **kwargs: object) -> GradcheckReport:
    """Run :func:`gradcheck` and raise :class:`NumericalError` on any failing entry."""
    report = gradcheck(fn, inputs, **kwargs)
    if not report.passed:
        position, index, expected, numeric = report.failures[0]
        msg = (
            f"gradcheck {report.name}: {len(report.failures)} of {report.checked} entries fail; "
            f"input {position} entry {index}: analytic {expected:.6e} vs numeric {numeric:.6e}."
        )
        raise NumericalError(msg)
    return report


Case = tuple[str, Callable[[], Tensor], list[Tensor]]


def _nn_cases(rng: np.random.Generator) -> list[Case]:
    x = parameter(rng.standard_normal((2, 3, 6, 6)))
    conv = init_conv(rng, 3, 4, 3, padding=1)
    strided = init_conv(rng, 3, 2, 2, stride=2)
    bn = init_batchnorm(3)
    bn.gamma.data = rng.uniform(0.5, 1.5, 3)
    tokens = parameter(rng.standard_normal((2, 5, 6)))
    other = parameter(rng.standard_normal((2, 4, 6)))
    ln = init_layernorm(6)
    lin = init_linear(rng, 6, 3)
    attn = init_mha(rng, 6, 2)
    block = init_transformer(rng, 6, 3)
    logits = parameter(rng.standard_normal((4, 2)))
    labels = np.array([0, 1, 1, 0])
    return [
        ("conv2d", lambda: weighted_sum(conv2d(x, conv), 1), [x, conv.weight, conv.bias]),
        ("conv2d_stride2", lambda: weighted_sum(conv2d(x, strided), 2), [x, strided.weight]),
        ("maxpool2d", lambda: weighted_sum(maxpool2d(x), 3), [x]),
        ("batchnorm2d", lambda: weighted_sum(batchnorm2d(x, bn, training=True), 4), [x, bn.gamma, bn.beta]),
        ("layer_norm", lambda: weighted_sum(layer_norm(tokens, ln), 5), [tokens]),
        ("linear", lambda: weighted_sum(linear(tokens, lin), 6), [tokens, lin.weight, lin.bias]),
        ("mha", lambda: weighted_sum(mha(tokens, other, other, attn)[0], 7), [tokens, other, attn.wq.weight]),
        (
            "transformer_block",
            lambda: weighted_sum(transformer_block(tokens, other, block)[0], 8),
            [tokens, other, block.ffn_in.weight],
        ),
        ("softmax", lambda: weighted_sum(softmax(tokens, axis=-1), 9), [tokens]),
        ("cross_entropy", lambda: cross_entropy(logits, labels), [logits]),
    ]


def _wavelet_cases(rng: np.random.Generator) -> list[Case]:
    x = parameter(rng.standard_normal((1, 2, 8, 8)))

    def bands() -> Tensor:
        level = dwt2(x)
        return tensor_sum(mul(level.hh, level.hh)) + weighted_sum(level.lh, 1)

    def inverse() -> Tensor:
        return weighted_sum(idwt2(dwt2(x)), 2)

    def deep() -> Tensor:
        pyramid = decompose(x, 3)
        return add(weighted_sum(pyramid[3].ll, 3), tensor_sum(pyramid[2].hl))

    return [("dwt2", bands, [x]), ("idwt2", inverse, [x]), ("decompose", deep, [x])]


def _fsf_cases(rng: np.random.Generator) -> list[Case]:
    image = parameter(rng.uniform(0.0, 1.0, (2, 3, 8, 8)))
    feat = parameter(rng.standard_normal((2, 5, 4, 4)))
    params = init_fsf(rng, 5, 4, 2)

    def fused() -> Tensor:
        output = fsf_forward(feat, dwt2(image), params, training=True)
        return weighted_sum(output.fused, 1)

    return [("fsf_forward", fused, [image, feat, params.fsa.mha.wq.weight, params.cma.ffn_out.weight])]


def _model_cases(rng: np.random.Generator) -> list[Case]:
    model = build_model(SMALL_MODEL)
    image = parameter(rng.uniform(0.0, 1.0, (2, 3, 16, 16)))
    labels = np.array([0, 1])
    params = named_parameters(model.fsf, "fsf")
    chosen = [image, params["fsf.0.fsa.mha.wq.weight"], model.classifier.weight, model.stages[0].blocks[0].conv.weight]

    def loss() -> Tensor:
        logits, _ = model_forward(image, model, training=True)
        return cross_entropy(logits, labels)

    return [("model", loss, chosen)]


def run_suite(name: str, *, seed: int = 0, max_checks: int | None = 20) -> list[GradcheckReport]:
    """Run one named suite (``nn``, ``wavelet``, ``fsf``, ``model``) or ``all``."""
    if name == "all":
        return [report for suite in SUITES for report in run_suite(suite, seed=seed, max_checks=max_checks)]
    builders = {"nn": _nn_cases, "wavelet": _wavelet_cases, "fsf": _fsf_cases, "model": _model_cases}
    if name not in builders:
        msg = f"Unknown gradcheck suite {name!r}; expected one of {(*SUITES, 'all')}."
        raise ConfigError(msg)
    reports = []
    for case, fn, inputs in builders[name](np.random.default_rng(seed)):
        report = gradcheck(fn, inputs, name=case, max_checks=max_checks, seed=seed)
        status = "ok" if report.passed else "FAIL"
        logger.info("%-18s %s  checked %4d  worst rel %.2e", case, status, report.checked, report.worst_rel)
        reports.append(report)
    return reports


__all__ = ["SMALL_MODEL", "SUITES", "GradcheckReport", "assert_gradcheck", "gradcheck", "run_suite", "weighted_sum"]
