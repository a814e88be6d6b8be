# -*- coding: utf-8 -*-
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config import load_config  # noqa: E402

# Dimensões de brinquedo: d=8, m=2, blocos rasos
TOY = dict(K=1, S=1, L=1, E=1, N=1, heads=2, dim=8, image_size=32, mlp_ratio=2.0,
           fine_channels=8, coarse_channels=4, patch_size=8, epochs=1, batch_size=4,
           workers=1, seeds=(0,), cell_epochs=1, cell_train_limit=16,
           n_real=6, n_gan=6, n_diffusion=0, n_am=0, n_fs=0)


@pytest.fixture
def toy_cfg():
    """Fábrica de configurações pequenas: toy_cfg(image_size=64, branches=("F",))."""
    def _fabrica(**overrides):
        valores = dict(TOY)
        valores.update(overrides)
        return load_config(**valores)
    return _fabrica


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def rgb(rng):
    def _fabrica(size=32, batch=None):
        forma = (size, size, 3) if batch is None else (batch, size, size, 3)
        return rng.uniform(0.0, 1.0, size=forma)
    return _fabrica


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="roda os testes lentos (treinos completos no corpus sintético)")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: treino de ponta a ponta; só roda com --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    pular = pytest.mark.skip(reason="lento: use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(pular)
