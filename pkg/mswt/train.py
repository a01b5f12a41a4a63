"""Training, evaluation and ablation loops."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import softmax as softmax_rows

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config
from .errors import ConfigError, DataError, NumericalError
from .metrics import Metrics, compute_metrics
from .model import MswtModel, build_model, model_forward
from .nn import cross_entropy
from .optim import OptimState, adamw_step, collect_grads, step_lr
from .synth import Corpus, load_corpus
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

ALLOWED_AUGMENTATIONS = frozenset({"hflip"})
METRICS_HEADER = "iter,split,acc_frame,auc_frame,acc_video,auc_video,loss"
CHECKPOINT_NAME = "model.mswt"
METRICS_NAME = "metrics.csv"
ABLATION_ORDER = ("backbone_only", "dwt_concat", "fsa_only", "cma_only", "full")


@dataclass(slots=True)
class EvalResult:
    frame: Metrics
    video: Metrics
    scores: np.ndarray
    loss: float


@dataclass(slots=True)
class TrainResult:
    """Trained model, its loss curve and the files written for the run."""

    model: MswtModel
    losses: list[float]
    augmentations: tuple[str, ...]
    checkpoint: Path | None = None
    metrics_log: Path | None = None
    log_rows: list[str] = field(default_factory=list)


@dataclass(slots=True)
class AblationReport:
    """Test AUC of every ``(mode, seed)`` run, with per-mode means."""

    aucs: dict[str, list[float]]
    seeds: tuple[int, ...]

    @property
    def means(self) -> dict[str, float]:
        return {mode: float(np.mean(values)) for mode, values in self.aucs.items()}

    def gaps(self) -> list[tuple[str, str, float]]:
        """Mean-AUC differences between consecutive modes of the expected ordering."""
        ordered = [mode for mode in ABLATION_ORDER if mode in self.aucs]
        means = self.means
        return [(low, high, means[high] - means[low]) for low, high in zip(ordered, ordered[1:])]

    def ordering_holds(self) -> bool:
        means = self.means
        if not all(mode in means for mode in ABLATION_ORDER):
            return False
        best_single = max(means["fsa_only"], means["cma_only"])
        return means["backbone_only"] <= means["dwt_concat"] <= best_single <= means["full"]

    def full_gain(self) -> float | None:
        """Mean AUC of ``full`` minus ``backbone_only``; ``None`` unless both modes ran."""
        means = self.means
        if "full" not in means or "backbone_only" not in means:
            return None
        return means["full"] - means["backbone_only"]

    def check_full_gain(self, margin: float = 0.0) -> None:
        """Require ``full`` to beat ``backbone_only`` by more than ``margin`` in mean AUC.

        A report lacking either mode passes unchecked.

        Raises
        ------
        NumericalError
            If the gain is ``<= margin``.
        """
        gain = self.full_gain()
        if gain is not None and gain <= margin:
            msg = (
                f"full mean AUC {self.means['full']:.4f} does not exceed backbone_only "
                f"{self.means['backbone_only']:.4f} by more than {margin}."
            )
            raise NumericalError(msg)


def augmentations(cfg: RunConfig) -> tuple[str, ...]:
    """Augmentations the loop applies; only horizontal flips are permitted."""
    applied = ("hflip",) if cfg.hflip else ()
    if not set(applied) <= ALLOWED_AUGMENTATIONS:
        msg = f"Unsupported augmentations {sorted(set(applied) - ALLOWED_AUGMENTATIONS)}."
        raise ConfigError(msg)
    return applied


def flip_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Mirror each image left to right with probability 0.5."""
    flips = rng.random(images.shape[0]) < 0.5
    out = images.copy()
    out[flips] = out[flips][..., ::-1]
    return out


def batch_indices(count: int, batch: int, rng: np.random.Generator, iterations: int) -> list[np.ndarray]:
    """Index batches drawn from successive shuffles of ``range(count)``."""
    if count < 1:
        msg = "Cannot draw batches from an empty split."
        raise DataError(msg)
    batches: list[np.ndarray] = []
    order = rng.permutation(count)
    cursor = 0
    size = min(batch, count)
    while len(batches) < iterations:
        if cursor + size > count:
            order = rng.permutation(count)
            cursor = 0
        batches.append(order[cursor : cursor + size])
        cursor += size
    return batches


def record_statistics(model: MswtModel, images: np.ndarray, batch: int = 24) -> None:
    """Run training-mode forwards, without recording a graph, so every batch-norm layer has running statistics."""
    with no_grad():
        for start in range(0, images.shape[0], batch):
            model_forward(Tensor(images[start : start + batch]), model, training=True)


def predict_scores(model: MswtModel, images: np.ndarray, batch: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode fake probabilities and logits for ``images``, batch by batch in order."""
    logits = []
    with no_grad():
        for start in range(0, images.shape[0], batch):
            out, _ = model_forward(Tensor(images[start : start + batch]), model, training=False)
            logits.append(out.data)
    stacked = np.concatenate(logits, axis=0)
    return softmax_rows(stacked, axis=1)[:, 1], stacked


def evaluate(
    model: MswtModel,
    images: np.ndarray,
    labels: np.ndarray,
    video_ids: Sequence[str],
    batch: int = 24,
) -> EvalResult:
    """Frame- and video-level metrics of an eval-mode model on one split."""
    scores, logits = predict_scores(model, images, batch)
    loss = float(cross_entropy(Tensor(logits), labels).data)
    frame = compute_metrics(scores, labels, video_ids, level="frame")
    video = compute_metrics(scores, labels, video_ids, level="video")
    return EvalResult(frame, video, scores, loss)


def evaluate_checkpoint(checkpoint: str | Path, corpus: str | Path | Corpus, split: str = "test") -> EvalResult:
    model = load_checkpoint(checkpoint)
    corpus = corpus if isinstance(corpus, Corpus) else load_corpus(corpus)
    images, labels, video_ids = corpus.load_split(split)
    result = evaluate(model, images, labels, video_ids)
    logger.info(
        "%s: frame ACC %.4f AUC %.4f | video ACC %.4f AUC %.4f",
        split,
        result.frame.acc,
        result.frame.auc,
        result.video.acc,
        result.video.auc,
    )
    return result


def _log_row(iteration: int, split: str, loss: float, result: EvalResult | None = None) -> str:
    if result is None:
        return f"{iteration},{split},,,,,{loss:.10f}"
    return (
        f"{iteration},{split},{result.frame.acc:.6f},{result.frame.auc:.6f},"
        f"{result.video.acc:.6f},{result.video.auc:.6f},{loss:.10f}"
    )


def fit(
    model: MswtModel,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: RunConfig,
    *,
    validation: tuple[np.ndarray, np.ndarray, Sequence[str]] | None = None,
) -> TrainResult:
    """Optimise ``model`` in place on ``images`` for ``cfg.iters`` AdamW steps.

    Raises
    ------
    NumericalError
        If the loss or a gradient becomes non-finite.
    """
    applied = augmentations(cfg)
    rng = np.random.default_rng(cfg.seed)
    state = OptimState(betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay, base_lr=cfg.lr)
    params = model.parameters()
    losses: list[float] = []
    rows: list[str] = []
    for iteration, indices in enumerate(batch_indices(images.shape[0], cfg.batch, rng, cfg.iters)):
        batch = images[indices]
        if "hflip" in applied:
            batch = flip_batch(batch, rng)
        model.zero_grad()
        try:
            logits, _ = model_forward(Tensor(batch), model, training=True)
            loss = cross_entropy(logits, labels[indices])
            loss.backward()
        except NumericalError as err:
            msg = f"Iteration {iteration}: non-finite value during the training step ({err})."
            raise NumericalError(msg) from err
        value = loss.item()
        if not np.isfinite(value):
            msg = f"Iteration {iteration}: loss is {value}."
            raise NumericalError(msg)
        losses.append(value)
        adamw_step(params, collect_grads(params), state, step_lr(iteration, cfg.lr, cfg.step_size, cfg.gamma))

        step = iteration + 1
        if step % cfg.log_every == 0 or step == cfg.iters:
            logger.info("iter %d loss %.6f", step, value)
            rows.append(_log_row(step, "train", value))
        if validation is not None and (step == cfg.iters or (cfg.eval_every and step % cfg.eval_every == 0)):
            result = evaluate(model, *validation, batch=cfg.batch)
            logger.info("iter %d val AUC %.4f (video %.4f)", step, result.frame.auc, result.video.auc)
            rows.append(_log_row(step, "val", result.loss, result))
    return TrainResult(model, losses, applied, log_rows=rows)


def train(cfg: RunConfig) -> TrainResult:
    """Train on ``cfg.corpus`` and write ``model.mswt``, ``metrics.csv`` and ``run.cfg`` to ``cfg.out``."""
    corpus = load_corpus(cfg.corpus)
    images, labels, _ = corpus.load_split("train")
    validation = corpus.load_split("val") if "val" in corpus.manifests else None
    model = build_model(cfg.model_config(corpus.spec.image_size))
    logger.info("training %s model for %d iterations on %d frames", cfg.mode, cfg.iters, images.shape[0])
    result = fit(model, images, labels, cfg, validation=validation)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result.checkpoint = save_checkpoint(model, out / CHECKPOINT_NAME)
    result.metrics_log = out / METRICS_NAME
    result.metrics_log.write_text("\n".join([METRICS_HEADER, *result.log_rows]) + "\n", encoding="utf-8")
    (out / "run.cfg").write_text(dump_config(cfg), encoding="utf-8")
    return result


def run_ablation(
    cfg: RunConfig,
    seeds: Sequence[int] = (7, 8, 9),
    modes: Sequence[str] = ABLATION_ORDER,
    split: str = "test",
    *,
    strict: bool = True,
) -> AblationReport:
    """Train and evaluate every mode under every seed; runs land in ``cfg.out/<mode>/seed<seed>``.

    The full ordering is only logged. With ``strict`` the gain of ``full`` over
    ``backbone_only`` is enforced through :meth:`AblationReport.check_full_gain`.

    Raises
    ------
    NumericalError
        With ``strict``, when ``full`` does not beat ``backbone_only``.
    """
    corpus = load_corpus(cfg.corpus)
    images, labels, video_ids = corpus.load_split(split)
    aucs: dict[str, list[float]] = {mode: [] for mode in modes}
    for mode in modes:
        for seed in seeds:
            run = dataclasses.replace(cfg, mode=mode, seed=seed, out=str(Path(cfg.out) / mode / f"seed{seed}"))
            trained = train(run)
            aucs[mode].append(evaluate(trained.model, images, labels, video_ids, batch=cfg.batch).frame.auc)
    report = AblationReport(aucs, tuple(seeds))
    for low, high, gap in report.gaps():
        logger.info("AUC gap %s -> %s: %+.4f", low, high, gap)
    if not report.ordering_holds():
        logger.warning("ablation means do not follow the expected ordering: %s", report.means)
    if strict:
        report.check_full_gain()
    return report


__all__ = [
    "ABLATION_ORDER",
    "ALLOWED_AUGMENTATIONS",
    "CHECKPOINT_NAME",
    "METRICS_HEADER",
    "METRICS_NAME",
    "AblationReport",
    "EvalResult",
    "TrainResult",
    "augmentations",
    "batch_indices",
    "evaluate",
    "evaluate_checkpoint",
    "fit",
    "flip_batch",
    "predict_scores",
    "record_statistics",
    "run_ablation",
    "train",
]
