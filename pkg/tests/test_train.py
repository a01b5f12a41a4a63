from __future__ import annotations

import dataclasses
import importlib
from pathlib import Path

import numpy as np
import pytest

from mswt.checkpoint import load_checkpoint
from mswt.config import RunConfig
from mswt.errors import ConfigError, DataError, NumericalError
from mswt.metrics import Metrics, auc
from mswt.model import MswtModel, build_model, model_forward
from mswt.synth import Corpus, CorpusSpec, generate_split, make_corpus
from mswt.train import (
    METRICS_HEADER,
    AblationReport,
    EvalResult,
    augmentations,
    batch_indices,
    evaluate,
    evaluate_checkpoint,
    fit,
    flip_batch,
    predict_scores,
    record_statistics,
    run_ablation,
    train,
)

SMALL = {"widths": (4, 6, 8, 8), "embed_dims": (4, 4, 6), "heads": (1, 2, 3)}


def _config(corpus: Corpus, out: Path, **overrides) -> RunConfig:
    values = {
        "corpus": str(corpus.root),
        "out": str(out),
        "batch": 4,
        "iters": 4,
        "lr": 1e-3,
        "step_size": 2,
        "eval_every": 2,
        "log_every": 1,
        **SMALL,
    }
    return RunConfig(**{**values, **overrides})


def test_batches_cover_every_index_before_repeating(rng: np.random.Generator) -> None:
    batches = batch_indices(10, 4, rng, 5)
    assert [len(batch) for batch in batches] == [4, 4, 4, 4, 4]
    assert sorted(np.concatenate(batches[:2]).tolist()) == sorted(set(np.concatenate(batches[:2]).tolist()))
    assert len(batch_indices(3, 8, rng, 2)[0]) == 3
    with pytest.raises(DataError):
        batch_indices(0, 4, rng, 1)


def test_flip_batch_only_mirrors(rng: np.random.Generator) -> None:
    images = rng.uniform(0.0, 1.0, (16, 3, 4, 4))
    flipped = flip_batch(images, rng)
    mirrored = [np.array_equal(a, b[..., ::-1]) for a, b in zip(flipped, images)]
    kept = [np.array_equal(a, b) for a, b in zip(flipped, images)]
    assert all(m or k for m, k in zip(mirrored, kept))
    assert any(mirrored)
    assert any(kept)


def test_only_horizontal_flips_are_applied() -> None:
    assert augmentations(RunConfig()) == ("hflip",)
    assert augmentations(RunConfig(hflip=False)) == ()


def test_record_statistics_enables_eval(small_model: MswtModel, rng: np.random.Generator) -> None:
    images = rng.uniform(0.0, 1.0, (5, 3, 16, 16))
    with pytest.raises(ConfigError):
        predict_scores(small_model, images)
    record_statistics(small_model, images, batch=2)
    scores, logits = predict_scores(small_model, images, batch=2)
    assert scores.shape == (5,)
    assert logits.shape == (5, 2)
    assert ((scores >= 0.0) & (scores <= 1.0)).all()


def test_fit_is_deterministic(tiny_corpus: Corpus, tmp_path: Path) -> None:
    images, labels, _ = tiny_corpus.load_split("train")
    cfg = _config(tiny_corpus, tmp_path)
    first = fit(build_model(cfg.model_config(16)), images, labels, cfg)
    second = fit(build_model(cfg.model_config(16)), images, labels, cfg)
    assert first.losses == second.losses
    assert len(first.losses) == 4
    assert all(np.isfinite(first.losses))
    for (_, a), (_, b) in zip(first.model.named_tensors(), second.model.named_tensors()):
        np.testing.assert_array_equal(a.data, b.data)


def test_fit_updates_parameters(tiny_corpus: Corpus, tmp_path: Path) -> None:
    images, labels, _ = tiny_corpus.load_split("train")
    cfg = _config(tiny_corpus, tmp_path, iters=2)
    model = build_model(cfg.model_config(16))
    before = model.classifier.weight.data.copy()
    fit(model, images, labels, cfg)
    assert not np.array_equal(before, model.classifier.weight.data)


def test_train_writes_run_outputs(tiny_corpus: Corpus, tmp_path: Path) -> None:
    cfg = _config(tiny_corpus, tmp_path / "run")
    result = train(cfg)
    lines = result.metrics_log.read_text(encoding="utf-8").splitlines()
    assert lines[0] == METRICS_HEADER
    assert lines[1].startswith("1,train,,,,,")
    val_rows = [line for line in lines if ",val," in line]
    assert [row.split(",")[0] for row in val_rows] == ["2", "4"]
    assert len(val_rows[0].split(",")) == 7
    assert (tmp_path / "run" / "run.cfg").is_file()
    restored = load_checkpoint(result.checkpoint)
    assert restored.config == result.model.config

    evaluated = evaluate_checkpoint(result.checkpoint, tiny_corpus.root, "test")
    images, labels, video_ids = tiny_corpus.load_split("test")
    direct = evaluate(result.model, images, labels, video_ids)
    np.testing.assert_array_equal(evaluated.scores, direct.scores)
    assert evaluated.frame.n_frames == 8
    assert evaluated.video.n_videos == 4
    assert 0.0 <= evaluated.frame.auc <= 1.0


def test_ablation_runs_every_mode_and_seed(tiny_corpus: Corpus, tmp_path: Path) -> None:
    cfg = _config(tiny_corpus, tmp_path / "ablate", iters=2, eval_every=0)
    report = run_ablation(cfg, seeds=(1, 2), modes=("backbone_only", "full"), strict=False)
    assert sorted(report.aucs) == ["backbone_only", "full"]
    assert all(len(values) == 2 for values in report.aucs.values())
    assert (tmp_path / "ablate" / "full" / "seed2" / "model.mswt").is_file()
    assert [gap[:2] for gap in report.gaps()] == [("backbone_only", "full")]
    assert not report.ordering_holds()


def test_ablation_report_ordering() -> None:
    aucs = {"backbone_only": [0.7], "dwt_concat": [0.75], "fsa_only": [0.8], "cma_only": [0.82], "full": [0.9]}
    report = AblationReport(aucs, (7,))
    assert report.ordering_holds()
    assert report.gaps()[-1] == ("cma_only", "full", pytest.approx(0.08))
    report.aucs["full"] = [0.81]
    assert not report.ordering_holds()


@pytest.mark.slow
def test_small_model_overfits_a_small_split(tiny_corpus: Corpus, tmp_path: Path) -> None:
    images, labels, _ = tiny_corpus.load_split("train")
    cfg = _config(tiny_corpus, tmp_path, iters=150, lr=3e-3, step_size=1000, hflip=False)
    result = fit(build_model(cfg.model_config(16)), images, labels, cfg)
    assert np.mean(result.losses[-10:]) < 0.5 * np.mean(result.losses[:10])



def test_record_statistics_records_no_graph(
    small_model: MswtModel,
    rng: np.random.Generator,
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    train_module = importlib.import_module("mswt.train")

    linked = []

    def forward_spy(image, model, **kwargs):
        logits, fusions = model_forward(image, model, **kwargs)
        linked.append(logits.requires_grad or logits.creator is not None)
        return logits, fusions

    monkeypatch.setattr(train_module, "model_forward", forward_spy)
    record_statistics(small_model, rng.uniform(0.0, 1.0, (4, 3, 16, 16)), batch=2)
    assert linked == [False, False]
    tracked = next(tensor for name, tensor in small_model.named_tensors() if name.endswith("tracked"))
    assert tracked.data[0] == 2.0
    assert all(tensor.grad is None for tensor in small_model.parameters().values())


def test_untrained_model_is_near_chance(small_model: MswtModel) -> None:
    spec = CorpusSpec(seed=11, train=2, val=2, test=200, image_size=16)
    images = np.stack([sample.image for sample in generate_split(spec, "test")])
    labels = np.random.default_rng(5).permutation(np.repeat([0, 1], 100))
    record_statistics(small_model, images)
    scores, _ = predict_scores(small_model, images)
    assert 0.35 <= auc(scores, labels) <= 0.65


def test_rerun_reproduces_run_files(tiny_corpus: Corpus, tmp_path: Path) -> None:
    first = train(_config(tiny_corpus, tmp_path / "a"))
    second = train(_config(tiny_corpus, tmp_path / "b"))
    assert first.metrics_log.read_bytes() == second.metrics_log.read_bytes()
    assert first.checkpoint.read_bytes() == second.checkpoint.read_bytes()
    assert len(first.metrics_log.read_text(encoding="utf-8").splitlines()) == 7


def test_full_gain_check() -> None:
    losing = AblationReport({"backbone_only": [0.9], "full": [0.6]}, (7,))
    assert losing.full_gain() == pytest.approx(-0.3)
    with pytest.raises(NumericalError, match="does not exceed"):
        losing.check_full_gain()

    winning = AblationReport({"backbone_only": [0.7, 0.72], "full": [0.8, 0.76]}, (7, 8))
    assert winning.full_gain() == pytest.approx(0.07)
    winning.check_full_gain()
    winning.check_full_gain(margin=0.02)
    with pytest.raises(NumericalError):
        winning.check_full_gain(margin=0.1)

    partial = AblationReport({"backbone_only": [0.9], "fsa_only": [0.6]}, (7,))
    assert partial.full_gain() is None
    partial.check_full_gain()


def test_strict_ablation_rejects_a_losing_full_model(
    tiny_corpus: Corpus,
    tmp_path: Path,
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    train_module = importlib.import_module("mswt.train")

    fixed = {"backbone_only": 0.9, "full": 0.6}

    def fixed_evaluate(model, images, labels, video_ids, batch=24):
        metrics = Metrics(0.5, fixed[model.config.mode], len(labels), 4)
        return EvalResult(metrics, dataclasses.replace(metrics, level="video"), np.zeros(len(labels)), 0.7)

    monkeypatch.setattr(train_module, "evaluate", fixed_evaluate)
    cfg = _config(tiny_corpus, tmp_path / "ablate", iters=1, eval_every=0)
    with pytest.raises(NumericalError, match="does not exceed"):
        run_ablation(cfg, seeds=(1,), modes=("backbone_only", "full"))
    report = run_ablation(cfg, seeds=(1,), modes=("backbone_only", "full"), strict=False)
    assert report.means == {"backbone_only": 0.9, "full": 0.6}


@pytest.fixture(scope="module")
def desk_corpus(tmp_path_factory: pytest.TempPathFactory) -> Corpus:
    return make_corpus(CorpusSpec(seed=7, train=2000, val=200, test=500), tmp_path_factory.mktemp("desk"))


def _desk_config(corpus: Corpus, out: Path, **overrides) -> RunConfig:
    return RunConfig.desk(corpus=str(corpus.root), out=str(out), batch=24, lr=1e-4, eval_every=0, **overrides)


@pytest.mark.slow
def test_desk_run_meets_the_learning_bar(desk_corpus: Corpus, tmp_path: Path) -> None:
    result = train(_desk_config(desk_corpus, tmp_path / "run"))
    evaluated = evaluate_checkpoint(result.checkpoint, desk_corpus)
    assert evaluated.frame.n_frames == 500
    assert evaluated.frame.auc >= 0.95
    assert evaluated.video.auc >= evaluated.frame.auc - 0.02


@pytest.mark.slow
def test_fusion_beats_the_plain_backbone(desk_corpus: Corpus, tmp_path: Path) -> None:
    cfg = _desk_config(desk_corpus, tmp_path / "ablate")
    report = run_ablation(cfg, seeds=(7, 8, 9), modes=("backbone_only", "full"), strict=False)
    assert report.full_gain() >= 0.02
