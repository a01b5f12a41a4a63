from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from mswt.checkpoint import save_checkpoint
from mswt.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from mswt.model import MswtModel
from mswt.ppm import write_ppm
from mswt.synth import Corpus, load_corpus
from mswt.train import record_statistics

SMALL_FLAGS = ["--iters", "2", "--batch", "4", "--eval-every", "0"]


@pytest.fixture()
def small_run_config(tmp_path: Path, tiny_corpus: Corpus) -> Path:
    path = tmp_path / "run.cfg"
    path.write_text(
        f"corpus = {tiny_corpus.root}\n"
        "widths = 4,6,8,8\n"
        "embed_dims = 4,4,6\n"
        "heads = 1,2,3\n"
        "log_every = 1\n",
        encoding="utf-8",
    )
    return path


def test_gen_corpus(tmp_path: Path) -> None:
    out = tmp_path / "corpus"
    args = ["gen-corpus", "--seed", "2", "--out", str(out), "--train", "4", "--val", "2", "--test", "2"]
    code = main([*args, "--size", "16"])
    assert code == EXIT_OK
    corpus = load_corpus(out)
    assert corpus.spec.seed == 2
    assert len(corpus.entries("train")) == 4


def test_usage_errors() -> None:
    assert main([]) == EXIT_USAGE
    assert main(["train", "--mode", "everything"]) == EXIT_USAGE
    assert main(["gen-corpus", "--out", "x", "--train", "3"]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_missing_corpus_is_a_data_error(tmp_path: Path) -> None:
    assert main(["train", "--corpus", str(tmp_path / "none"), "--out", str(tmp_path / "run")]) == EXIT_DATA
    assert main(["eval", "--checkpoint", str(tmp_path / "none.mswt"), "--corpus", str(tmp_path)]) == EXIT_DATA


def test_train_then_eval(
    tmp_path: Path,
    tiny_corpus: Corpus,
    small_run_config: Path,
    capsys: pytest.CaptureFixture[str],
) -> None:
    out = tmp_path / "run"
    assert main(["train", "--config", str(small_run_config), "--out", str(out), *SMALL_FLAGS]) == EXIT_OK
    assert (out / "model.mswt").is_file()
    assert (out / "metrics.csv").read_text(encoding="utf-8").startswith("iter,split,")
    capsys.readouterr()
    code = main(["eval", "--checkpoint", str(out / "model.mswt"), "--corpus", str(tiny_corpus.root), "--video-level"])
    assert code == EXIT_OK
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].startswith("frame  acc=")
    assert printed[1].startswith("video  acc=")


def test_bad_config_file(tmp_path: Path) -> None:
    path = tmp_path / "bad.cfg"
    path.write_text("iters = many\n", encoding="utf-8")
    assert main(["train", "--config", str(path)]) == EXIT_USAGE


def test_emd_analyze(tmp_path: Path, tiny_corpus: Corpus, capsys: pytest.CaptureFixture[str]) -> None:
    report = tmp_path / "emd.csv"
    args = ["emd-analyze", "--corpus", str(tiny_corpus.root), "--pairs", "2", "--bins", "16"]
    code = main([*args, "--out", str(report)])
    assert code == EXIT_OK
    lines = report.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "row,band,emd"
    assert lines[1].startswith("Ori-Img,image,")
    assert len(lines) == 14
    assert "level3" in capsys.readouterr().out


def test_dwt_dump(tmp_path: Path, rng: np.random.Generator) -> None:
    image = write_ppm(rng.uniform(0.0, 1.0, (3, 16, 16)), tmp_path / "face.ppm")
    assert main(["dwt-dump", "--image", str(image), "--levels", "2", "--out", str(tmp_path / "bands")]) == EXIT_OK
    assert len(list((tmp_path / "bands").glob("*.png"))) == 8
    odd = write_ppm(rng.uniform(0.0, 1.0, (3, 6, 6)), tmp_path / "odd.ppm")
    assert main(["dwt-dump", "--image", str(odd), "--out", str(tmp_path / "odd")]) == EXIT_DATA


def test_export_attention(tmp_path: Path, small_model: MswtModel, rng: np.random.Generator) -> None:
    record_statistics(small_model, rng.uniform(0.0, 1.0, (2, 3, 16, 16)))
    checkpoint = save_checkpoint(small_model, tmp_path / "model.mswt")
    image = write_ppm(rng.uniform(0.0, 1.0, (3, 16, 16)), tmp_path / "face.ppm")
    args = ["export-attention", "--checkpoint", str(checkpoint), "--image", str(image), "--out", str(tmp_path / "maps")]
    assert main(args) == EXIT_OK
    assert (tmp_path / "maps" / "level2_cma.png").is_file()


def test_gradcheck_command(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["gradcheck", "--module", "wavelet", "--max-checks", "4"]) == EXIT_OK
    assert "decompose" in capsys.readouterr().out


def test_gradcheck_failure_exit_code(monkeypatch: pytest.MonkeyPatch) -> None:
    from mswt import cli
    from mswt.gradcheck import GradcheckReport

    failing = [GradcheckReport("conv2d", 4, 0.5, 0.1, [(0, 1, 1.0, 2.0)])]
    monkeypatch.setattr(cli, "run_suite", lambda name, max_checks: failing)
    assert main(["gradcheck", "--module", "nn"]) == EXIT_NUMERICAL


def test_ablate(tmp_path: Path, small_run_config: Path, capsys: pytest.CaptureFixture[str]) -> None:
    args = ["ablate", "--config", str(small_run_config), "--out", str(tmp_path / "ablate"), *SMALL_FLAGS]
    code = main([*args, "--seeds", "3", "--modes", "backbone_only", "fsa_only"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "backbone_only" in out
    assert "fsa_only" in out
    assert (tmp_path / "ablate" / "fsa_only" / "seed3" / "metrics.csv").is_file()


def test_corrupt_checkpoint_is_a_data_error(tmp_path: Path, tiny_corpus: Corpus, small_model: MswtModel) -> None:
    payload = bytearray(save_checkpoint(small_model, tmp_path / "model.mswt").read_bytes())
    payload[14] = 0xFF
    (tmp_path / "model.mswt").write_bytes(bytes(payload))
    assert main(["eval", "--checkpoint", str(tmp_path / "model.mswt"), "--corpus", str(tiny_corpus.root)]) == EXIT_DATA


def test_graph_error_exit_code(monkeypatch: pytest.MonkeyPatch) -> None:
    from mswt import cli
    from mswt.errors import GraphError

    def broken_suite(name: str, max_checks: int | None) -> list:
        raise GraphError("backward called twice")

    monkeypatch.setattr(cli, "run_suite", broken_suite)
    assert main(["gradcheck", "--module", "nn"]) == EXIT_NUMERICAL


def test_ablate_fails_when_fusion_does_not_help(
    monkeypatch: pytest.MonkeyPatch,
    tmp_path: Path,
    small_run_config: Path,
    capsys: pytest.CaptureFixture[str],
) -> None:
    from mswt import cli
    from mswt.train import AblationReport

    def losing_ablation(cfg, seeds, modes, **kwargs) -> AblationReport:
        return AblationReport({"backbone_only": [0.9], "full": [0.6]}, tuple(seeds))

    monkeypatch.setattr(cli, "run_ablation", losing_ablation)
    args = ["ablate", "--config", str(small_run_config), "--out", str(tmp_path / "ablate"), *SMALL_FLAGS]
    assert main([*args, "--seeds", "7", "--modes", "backbone_only", "full"]) == EXIT_NUMERICAL
    assert "backbone_only -> full: -0.3000" in capsys.readouterr().out
