from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from effbench import create_app
from effbench.blocks import BlockKind, HeadSpec, ModelSpec, StageSpec
from effbench.data import synthesize_dataset
from effbench.engine.tensor import Rng
from effbench.specfile import bundled, load

CIFAR10_SPECS = ("cifar10_baseline", "cifar10_mobilenet", "cifar10_shufflenet", "cifar10_effnet")


@pytest.fixture
def app(tmp_path):
    # create the app with common test config
    yield create_app(DEBUG=True, LOG_DIR=tmp_path / "logs", RUNS_DIR=tmp_path / "runs")


@pytest.fixture
def rng() -> Rng:
    return Rng(1234)


@pytest.fixture
def array_rng() -> np.random.Generator:
    return np.random.default_rng(20180801)


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def cifar10_specs():
    return {name: load(bundled(name)).model for name in CIFAR10_SPECS}


def small_spec(kind: str, out_channels: int = 16, classes: int = 3, **options) -> ModelSpec:
    """a vanilla stem then one block of ``kind`` on 3 x 8 x 8 inputs"""
    stages = [StageSpec(BlockKind("vanilla"), 8), StageSpec(BlockKind(kind, options), out_channels)]
    return ModelSpec((3, 8, 8), classes, stages, HeadSpec(), name=f"small_{kind}")


@pytest.fixture
def blobs():
    return synthesize_dataset(seed=1, n=600, class_count=3, shape=(3, 8, 8), difficulty=0.5)


def write_spec(directory: Path, name: str, text: str) -> Path:
    path = directory / f"{name}.spec"
    path.write_text(text)
    return path
