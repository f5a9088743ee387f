"""This file prepares config fixtures and small models for other tests."""

import copy
from collections.abc import Iterator
from pathlib import Path

import pytest
from hydra import compose, initialize
from hydra.core.global_hydra import GlobalHydra
from omegaconf import DictConfig, open_dict

from data.components.blobs import BlobSpec, generate_blobs
from data.components.dataset import Dataset
from models.components.mlp import MlpModel
from tests.helpers.fitting import fit_briefly

# a blob problem small enough for a few epochs per test
TINY_BLOBS = [
    "data.blobs.classes=4",
    "data.blobs.dim=8",
    "data.blobs.train_size=200",
    "data.blobs.test_size=80",
    "data.batch_size=40",
    "model.net.layer_dims=[8,16,4]",
]


def _quiet(cfg: DictConfig) -> None:
    """Shared test settings: no console output and no experiment loggers."""
    with open_dict(cfg):
        cfg.extras.print_config = False
        if "trainer" in cfg:
            cfg.trainer.enable_progress_bar = False
            cfg.trainer.enable_model_summary = False
        if "callbacks" in cfg:
            cfg.callbacks = None
        if "logger" in cfg:
            cfg.logger = None


def _compose(config_name: str, overrides: list[str]) -> DictConfig:
    with initialize(version_base="1.3", config_path="../configs"):
        cfg = compose(config_name=config_name, return_hydra_config=True, overrides=overrides)
    _quiet(cfg)
    return cfg


def _with_output_dir(cfg: DictConfig, tmp_path: Path) -> DictConfig:
    cfg = copy.deepcopy(cfg)
    with open_dict(cfg):
        cfg.paths.output_dir = str(tmp_path)
        cfg.paths.log_dir = str(tmp_path)
    return cfg


@pytest.fixture(scope="package")
def cfg_train_global() -> DictConfig:
    """A pytest fixture for setting up a default Hydra DictConfig for training.

    :return: A DictConfig object containing a default Hydra configuration for training.
    """
    return _compose("train.yaml", ["epochs=2", *TINY_BLOBS])


@pytest.fixture(scope="package")
def cfg_os_apply_global() -> DictConfig:
    return _compose("os_apply.yaml", ["checkpoint_path=.", "sos.batch_size=8", *TINY_BLOBS[:-1]])


@pytest.fixture(scope="package")
def cfg_hessian_global() -> DictConfig:
    return _compose(
        "hessian.yaml",
        ["checkpoint_path=.", "hessian.probes=4", "hessian.iters=20", "hessian.samples=64", *TINY_BLOBS[:-1]],
    )


@pytest.fixture(scope="package")
def cfg_sweep_global() -> DictConfig:
    return _compose("sweep.yaml", ["epochs=1", "sweep.seeds=[0]", "sweep.batch_sizes=[4,16]", *TINY_BLOBS])


@pytest.fixture(scope="package")
def cfg_benchmark_global() -> DictConfig:
    return _compose(
        "benchmark.yaml", ["benchmark.batch_sizes=[8,16,32]", "benchmark.feature_dim=64", "benchmark.repeats=1"]
    )


@pytest.fixture(scope="function")
def cfg_train(cfg_train_global: DictConfig, tmp_path: Path) -> Iterator[DictConfig]:
    """A pytest fixture built on top of the `cfg_train_global()` fixture, which accepts a temporary
    logging path `tmp_path` for generating a temporary logging path.

    This is called by each test which uses the `cfg_train` arg. Each test generates its own temporary logging path.

    :param cfg_train_global: The input DictConfig object to be modified.
    :param tmp_path: The temporary logging path.

    :return: A DictConfig with updated output and log directories corresponding to `tmp_path`.
    """
    yield _with_output_dir(cfg_train_global, tmp_path)

    GlobalHydra.instance().clear()


@pytest.fixture(scope="function")
def cfg_os_apply(cfg_os_apply_global: DictConfig, tmp_path: Path) -> Iterator[DictConfig]:
    yield _with_output_dir(cfg_os_apply_global, tmp_path)

    GlobalHydra.instance().clear()


@pytest.fixture(scope="function")
def cfg_hessian(cfg_hessian_global: DictConfig, tmp_path: Path) -> Iterator[DictConfig]:
    yield _with_output_dir(cfg_hessian_global, tmp_path)

    GlobalHydra.instance().clear()


@pytest.fixture(scope="function")
def cfg_sweep(cfg_sweep_global: DictConfig, tmp_path: Path) -> Iterator[DictConfig]:
    yield _with_output_dir(cfg_sweep_global, tmp_path)

    GlobalHydra.instance().clear()


@pytest.fixture(scope="function")
def cfg_benchmark(cfg_benchmark_global: DictConfig, tmp_path: Path) -> Iterator[DictConfig]:
    yield _with_output_dir(cfg_benchmark_global, tmp_path)

    GlobalHydra.instance().clear()


@pytest.fixture(scope="package")
def tiny_blobs() -> tuple[Dataset, Dataset]:
    """The train/test pair the tiny configs describe (seed 0)."""
    return generate_blobs(BlobSpec(classes=4, dim=8, train_size=200, test_size=80, seed=0))


@pytest.fixture
def trained_tiny(tiny_blobs: tuple[Dataset, Dataset]) -> MlpModel:
    train, _ = tiny_blobs
    return fit_briefly(MlpModel([8, 16, 4], seed=0), train)
