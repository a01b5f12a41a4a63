from __future__ import annotations

import numpy as np
import pytest

from mswt.model import ModelConfig, MswtModel, build_model
from mswt.synth import Corpus, CorpusSpec, make_corpus

SMALL_CONFIG = ModelConfig(image_size=16, widths=(4, 6, 8, 8), embed_dims=(4, 4, 6), heads=(1, 2, 3))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture()
def small_config() -> ModelConfig:
    return SMALL_CONFIG


@pytest.fixture()
def small_model() -> MswtModel:
    return build_model(SMALL_CONFIG)


@pytest.fixture(scope="session")
def tiny_spec() -> CorpusSpec:
    return CorpusSpec(seed=3, train=8, val=4, test=8, image_size=16, frames_per_video=2)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory: pytest.TempPathFactory, tiny_spec: CorpusSpec) -> Corpus:
    return make_corpus(tiny_spec, tmp_path_factory.mktemp("corpus"))
