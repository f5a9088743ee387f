import csv
from pathlib import Path

import pytest
from hydra.core.hydra_config import HydraConfig
from omegaconf import DictConfig, open_dict

from sweep import (
    FLATNESS_FILE,
    FLATNESS_HEADER,
    SCHEMES,
    SCHEMES_FILE,
    SOS_BATCH_FILE,
    aggregate,
    child_config,
    sweep,
)
from tests.helpers.run_if import RunIf
from tests.helpers.run_sh_command import run_sh_command
from utils import EXIT_CONFIG, run_task

startfile = "src/train.py"
overrides = ["logger=[]", "extras.quiet=true"]
tiny = [
    "data.blobs.classes=4",
    "data.blobs.dim=8",
    "data.blobs.train_size=200",
    "data.blobs.test_size=80",
    "model.net.layer_dims=[8,16,4]",
]


def read_rows(path: Path) -> list[list[str]]:
    with path.open(newline="") as stream:
        return list(csv.reader(stream))


def test_aggregate() -> None:
    single = aggregate("x", [0.5])
    assert (single.runs, single.mean, single.std) == (1, 0.5, 0.0)
    pair = aggregate("y", [0.25, 0.75])
    assert pair.mean == 0.5
    assert pair.std == pytest.approx(0.3535533905932738)


def test_child_config_is_resolved(cfg_sweep: DictConfig) -> None:
    HydraConfig().set_config(cfg_sweep)
    child = child_config(cfg_sweep, "b4", 3, {"sos.batch_size": 4})

    assert "hydra" not in child
    assert child.seed == 3
    assert child.sos.batch_size == 4
    assert child.data.blobs.seed == 3
    assert child.paths.output_dir.endswith("runs/b4/seed_3")
    assert child.task_name == "sweep-b4"


def test_sos_batch_sweep(tmp_path: Path, cfg_sweep: DictConfig) -> None:
    """One epoch per cell: a run without OS, a small batch and one at the feature width."""
    HydraConfig().set_config(cfg_sweep)
    metric_dict, _ = sweep(cfg_sweep)

    rows = read_rows(tmp_path / SOS_BATCH_FILE)
    assert rows[0] == ["batch_size", "identity_regime", "runs", "test_acc_mean", "test_acc_std", "max_norm_change"]
    assert [(r[0], r[1]) for r in rows[1:]] == [("none", "0"), ("4", "0"), ("16", "1")]
    assert rows[1][5] == ""
    # at b >= m the system pins V down
    assert float(rows[3][5]) <= 1e-6
    assert "sweep/b4/test_acc" in metric_dict

    assert (tmp_path / "runs" / "bnone" / "seed_0" / "metrics.csv").exists()
    assert (tmp_path / "runs" / "b16" / "seed_0" / "os_reports.jsonl").exists()


def test_scheme_sweep(tmp_path: Path, cfg_sweep: DictConfig) -> None:
    with open_dict(cfg_sweep):
        cfg_sweep.sweep.kind = "schemes"
        cfg_sweep.sweep.schemes = ["sgd", "sgd+sos", "sam", "sam+sos"]
        cfg_sweep.sweep.sam_rho = 0.05

    HydraConfig().set_config(cfg_sweep)
    metric_dict, _ = sweep(cfg_sweep)

    rows = read_rows(tmp_path / SCHEMES_FILE)
    assert rows[0] == ["scheme", "runs", "test_acc_mean", "test_acc_std"]
    assert [r[0] for r in rows[1:]] == ["sgd", "sgd+sos", "sam", "sam+sos", "sgd+sos-sgd", "sam+sos-sam"]
    assert metric_dict["sweep/sgd+sos-sgd/test_acc"] == pytest.approx(
        metric_dict["sweep/sgd+sos/test_acc"] - metric_dict["sweep/sgd/test_acc"]
    )


def test_weight_decay_ablation_cells(tmp_path: Path, cfg_sweep: DictConfig) -> None:
    """SGD with and without weight decay, each with and without OS: four cells and their contrasts."""
    with open_dict(cfg_sweep):
        cfg_sweep.sweep.kind = "schemes"
        cfg_sweep.sweep.schemes = ["sgd", "sgd+sos", "sgd_nowd", "sgd_nowd+sos"]

    HydraConfig().set_config(cfg_sweep)
    no_decay = child_config(cfg_sweep, "sgd_nowd", 0, SCHEMES["sgd_nowd"])
    assert no_decay.model.optimizer.weight_decay == 0.0
    assert not no_decay.sos.enabled
    assert child_config(cfg_sweep, "sgd_nowd+sos", 0, SCHEMES["sgd_nowd+sos"]).sos.enabled

    metric_dict, _ = sweep(cfg_sweep)

    rows = read_rows(tmp_path / SCHEMES_FILE)
    assert [r[0] for r in rows[1:]] == [
        "sgd",
        "sgd+sos",
        "sgd_nowd",
        "sgd_nowd+sos",
        "sgd+sos-sgd",
        "sgd_nowd+sos-sgd_nowd",
        "sgd-sgd_nowd",
    ]
    assert all(r[1] == "1" for r in rows[1:])
    for scheme in ("sgd", "sgd+sos", "sgd_nowd", "sgd_nowd+sos"):
        assert (tmp_path / "runs" / scheme / "seed_0" / "metrics.csv").exists()
    assert metric_dict["sweep/sgd-sgd_nowd/test_acc"] == pytest.approx(
        metric_dict["sweep/sgd/test_acc"] - metric_dict["sweep/sgd_nowd/test_acc"]
    )


def test_flatness_sweep(tmp_path: Path, cfg_sweep: DictConfig) -> None:
    with open_dict(cfg_sweep):
        cfg_sweep.sweep.kind = "flatness"
        cfg_sweep.sweep.seeds = [0, 1]
        cfg_sweep.sweep.probes = 4
        cfg_sweep.sweep.sos_during_training = False
        cfg_sweep.sweep.min_decrease_rate = 0.9
        cfg_sweep.sweep.exact_trace_tol = 1e-6
        cfg_sweep.sos.batch_size = 4

    HydraConfig().set_config(cfg_sweep)
    metric_dict, _ = sweep(cfg_sweep)

    rows = read_rows(tmp_path / FLATNESS_FILE)
    assert tuple(rows[0]) == FLATNESS_HEADER
    assert [r[0] for r in rows[1:]] == ["0", "1"]
    column = {name: i for i, name in enumerate(FLATNESS_HEADER)}
    for row in rows[1:]:
        assert float(row[column["norm_sq_after"]]) < float(row[column["norm_sq_before"]])
        assert float(row[column["exact_trace_rel_change"]]) <= 1e-6

    assert metric_dict["sweep/flatness/norm_decrease_rate"] == 1.0
    assert metric_dict["sweep/flatness/max_exact_trace_rel_change"] <= 1e-6
    assert 0.0 <= metric_dict["sweep/flatness/decrease_rate"] <= 1.0
    assert "sweep/flatness/trace_decrease_rate" in metric_dict
    assert not (tmp_path / "runs" / "flatness" / "seed_0" / "os_reports.jsonl").exists()


def test_unknown_sweep_settings(cfg_sweep: DictConfig) -> None:
    with open_dict(cfg_sweep):
        cfg_sweep.sweep.kind = "grid"
    HydraConfig().set_config(cfg_sweep)
    assert run_task(sweep, cfg_sweep)[0] == EXIT_CONFIG

    with open_dict(cfg_sweep):
        cfg_sweep.sweep.kind = "schemes"
        cfg_sweep.sweep.schemes = ["adam"]
    assert run_task(sweep, cfg_sweep)[0] == EXIT_CONFIG


@pytest.mark.slow
def test_sweep_with_workers(tmp_path: Path, cfg_sweep: DictConfig) -> None:
    """A process pool gives the same table as the sequential run."""
    HydraConfig().set_config(cfg_sweep)
    sweep(cfg_sweep)
    sequential = (tmp_path / SOS_BATCH_FILE).read_text()

    with open_dict(cfg_sweep):
        cfg_sweep.sweep.workers = 2
        cfg_sweep.paths.output_dir = str(tmp_path / "pooled")
    sweep(cfg_sweep)
    assert (tmp_path / "pooled" / SOS_BATCH_FILE).read_text() == sequential


@pytest.mark.slow
def test_experiments(tmp_path: Path) -> None:
    """Test running all available experiment configs for one epoch on tiny blobs.

    :param tmp_path: The temporary logging path.
    """
    command = [
        startfile,
        "-m",
        "experiment=blobs_sos,blobs_sam_sos,appendix_schedule",
        "hydra.sweep.dir=" + str(tmp_path),
        "epochs=1",
        *tiny,
        *overrides,
    ]
    run_sh_command(command)


@pytest.mark.slow
def test_hydra_sweep(tmp_path: Path) -> None:
    """Test default hydra sweep.

    :param tmp_path: The temporary logging path.
    """
    command = [
        startfile,
        "-m",
        "hydra.sweep.dir=" + str(tmp_path),
        "epochs=1",
        "seed=0,1",
        "model.optimizer.lr=0.05,0.1",
        *tiny,
        *overrides,
    ]
    run_sh_command(command)
    assert len(list(tmp_path.rglob("metrics.csv"))) == 4


@pytest.mark.slow
def test_task_entrypoints(tmp_path: Path) -> None:
    """Train with checkpoints, then run OS and Hessian diagnostics on them from the command line."""
    train_dir = tmp_path / "train"
    run_sh_command(
        [startfile, f"hydra.run.dir={train_dir}", "epochs=2", "checkpoint.enabled=true", *tiny, *overrides]
    )
    checkpoints = train_dir / "checkpoints"
    assert (checkpoints / "epoch_2.ckpt").exists()

    data = tiny[:4]
    run_sh_command(["src/os_apply.py", f"hydra.run.dir={tmp_path / 'os'}", f"checkpoint_path={checkpoints}", *data])
    assert (tmp_path / "os" / "loss_difference.csv").exists()

    run_sh_command(
        ["src/hessian.py", f"hydra.run.dir={tmp_path / 'hessian'}", f"checkpoint_path={checkpoints}", "hessian.probes=4", *data]
    )
    assert (tmp_path / "hessian" / "hessian_trace.csv").exists()

    run_sh_command(["src/os_apply.py", f"hydra.run.dir={tmp_path / 'missing'}"], expected_code=2)


@RunIf(optuna=True)
@pytest.mark.slow
def test_optuna_sweep(tmp_path: Path) -> None:
    """Test Optuna hyperparam sweeping.

    :param tmp_path: The temporary logging path.
    """
    command = [
        startfile,
        "-m",
        "hparams_search=blobs_optuna",
        "hydra.sweep.dir=" + str(tmp_path),
        "hydra.sweeper.n_trials=4",
        "hydra.sweeper.sampler.n_startup_trials=2",
        "epochs=1",
        *tiny,
        *overrides,
    ]
    run_sh_command(command)
