#!/usr/bin/env python3
"""
Configuración común de tests para Marco Oculomotor.
"""

from typing import TYPE_CHECKING
from pathlib import Path

import numpy as np
import pytest

from marco_oculomotor.core.synthetic import SyntheticCorpus, generate_corpus, write_synthetic_corpus
from marco_oculomotor.data.models import Scanpath, ScreenGeometry
from marco_oculomotor.utils.config import (
    AugmentConfig,
    Backbone,
    EvalConfig,
    ModelConfig,
    PretrainConfig,
    SynthConfig,
)

from .helpers import make_scanpath

if TYPE_CHECKING:
    from _pytest.config import Config
    from _pytest.config.argparsing import Parser


def pytest_addoption(parser: "Parser") -> None:
    parser.addoption(
        "--run-slow", action="store_true", default=False,
        help="Ejecuta también los tests marcados como lentos",
    )


def pytest_configure(config: "Config") -> None:
    config.addinivalue_line("markers", "slow: entrenamiento completo, minutos de CPU")


def pytest_collection_modifyitems(config: "Config", items: list[pytest.Item]) -> None:
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="necesita --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def geometry() -> ScreenGeometry:
    """Monitor de 1920×1080 px y 531×299 mm visto a 650 mm."""
    return ScreenGeometry(
        width_px=1920, height_px=1080, width_mm=531.0, height_mm=299.0, viewing_distance_mm=650.0
    )


@pytest.fixture
def small_synth_config() -> SynthConfig:
    """
    Corpus sintético pequeño: 6 participantes × 4 estímulos de 3 a 4 s,
    dos de ellos del grupo clínico.
    """
    return SynthConfig(
        n_participants=6,
        n_stimuli=4,
        duration_s=(3.0, 4.0),
        n_clusters=4,
        clinical_fraction=1.0 / 3.0,
        seed=7,
    )


@pytest.fixture
def synthetic_corpus(small_synth_config: SynthConfig) -> SyntheticCorpus:
    return generate_corpus(small_synth_config)


@pytest.fixture
def synthetic_scanpaths(synthetic_corpus: SyntheticCorpus) -> list[Scanpath]:
    return [item.scanpath for item in synthetic_corpus.items]


@pytest.fixture
def raw_corpus_dir(tmp_path: Path, synthetic_corpus: SyntheticCorpus) -> Path:
    """Corpus sintético escrito en disco como grabaciones crudas."""
    out = tmp_path / "raw"
    write_synthetic_corpus(synthetic_corpus, out)
    return out


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """GRU de una capa con bloque convolucional estrecho."""
    return ModelConfig(
        backbone=Backbone.GRU,
        n_layers=1,
        hidden=8,
        use_conv=True,
        conv_kernel=3,
        conv_channels=4,
        pool=2,
        cl_hidden=4,
    )


@pytest.fixture
def gradcheck_model_config() -> ModelConfig:
    """Modelo de menos de 1000 parámetros para la comprobación de gradientes."""
    return ModelConfig(backbone=Backbone.GRU, n_layers=1, hidden=4, use_conv=False, cl_hidden=4)


@pytest.fixture
def fast_pretrain_config() -> PretrainConfig:
    """Segmentos de 1 a 2 s y dos épocas con Adam."""
    return PretrainConfig(
        epochs=2,
        lr=0.01,
        batch=4,
        input_len_s=(1.0, 2.0),
        optimizer="adam",
        train_frac=0.75,
        seed=3,
    )


@pytest.fixture
def fast_eval_config() -> EvalConfig:
    return EvalConfig(
        c_ways=3,
        k_shots=1,
        episodes=5,
        queries=1,
        meta_train_stimuli=2,
        proto_dim=8,
        proto_epochs=2,
        proto_iterations=2,
        mlp_epochs=20,
        folds=2,
        inner_folds=2,
    )


@pytest.fixture
def offset_augment() -> AugmentConfig:
    return AugmentConfig(offset_range_deg=(1.0, 1.0))


@pytest.fixture
def random_walk() -> Scanpath:
    """Paseo aleatorio de 10 s con pasos pequeños y algunos saltos."""
    rng = np.random.default_rng(11)
    steps = rng.normal(0.0, 0.3, size=(600, 2))
    jumps = rng.random(600) < 0.03
    steps[jumps] *= 20.0
    return make_scanpath(np.cumsum(steps, axis=0))
