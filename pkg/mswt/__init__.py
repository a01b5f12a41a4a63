"""Multi-scale wavelet transformer for face forgery detection, on a numpy autograd engine."""

from __future__ import annotations

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .emd import EmdReport, emd_1d, emd_report
from .errors import ConfigError, DataError, FormatError, GraphError, MswtError, NumericalError, ShapeError
from .fsf import FsfOutput, FsfParams, cma, fsa, fsf_forward, init_fsf
from .gradcheck import GradcheckReport, assert_gradcheck, gradcheck
from .metrics import Metrics, accuracy, auc, video_level
from .model import ABLATION_MODES, ModelConfig, MswtModel, build_model, count_params, model_forward
from .nn import conv2d, cross_entropy, layer_norm, mha, transformer_block
from .optim import OptimState, adamw_step, step_lr
from .ppm import read_ppm, write_ppm
from .synth import Corpus, CorpusSpec, Sample, gen_fake, gen_real, hflip, load_corpus, make_corpus
from .tensor import Tensor, matmul, no_grad, tensor_from
from .train import evaluate, record_statistics, run_ablation, train
from .wavelet import WaveletLevel, WaveletPyramid, decompose, dwt2, idwt2

__all__ = [
    "ABLATION_MODES",
    "ConfigError",
    "Corpus",
    "CorpusSpec",
    "DataError",
    "EmdReport",
    "FormatError",
    "FsfOutput",
    "FsfParams",
    "GradcheckReport",
    "GraphError",
    "Metrics",
    "ModelConfig",
    "MswtError",
    "MswtModel",
    "NumericalError",
    "OptimState",
    "RunConfig",
    "Sample",
    "ShapeError",
    "Tensor",
    "WaveletLevel",
    "WaveletPyramid",
    "accuracy",
    "adamw_step",
    "assert_gradcheck",
    "auc",
    "build_model",
    "cma",
    "conv2d",
    "count_params",
    "cross_entropy",
    "decompose",
    "dwt2",
    "emd_1d",
    "emd_report",
    "evaluate",
    "fsa",
    "fsf_forward",
    "gen_fake",
    "gen_real",
    "gradcheck",
    "hflip",
    "idwt2",
    "init_fsf",
    "layer_norm",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "make_corpus",
    "matmul",
    "mha",
    "model_forward",
    "no_grad",
    "read_ppm",
    "record_statistics",
    "run_ablation",
    "save_checkpoint",
    "step_lr",
    "tensor_from",
    "train",
    "transformer_block",
    "video_level",
    "write_ppm",
]
