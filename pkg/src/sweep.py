import csv
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import hydra
import numpy as np
import rich
import rich.table
from omegaconf import DictConfig, OmegaConf, open_dict

from sharpness import ShiftFlatness, decrease_rate, shift_flatness
from shifting import OsConfig, StochasticOptimumShifting, sample_os_batch
from train import train
from utils import (
    ConfigError,
    RankedLogger,
    exception_wrapper,
    process_extras,
    require_keys,
    run_task,
    save_config,
    write_manifest,
)

logger = RankedLogger(__name__)

SOS_BATCH_FILE = "sos_batch_sweep.csv"
SCHEMES_FILE = "scheme_comparison.csv"
FLATNESS_FILE = "shift_flatness.csv"
FLATNESS_HEADER = (
    "seed",
    "norm_sq_before",
    "norm_sq_after",
    "trace_before",
    "trace_after",
    "trace_stderr",
    "exact_trace_before",
    "exact_trace_after",
    "exact_trace_rel_change",
)
NO_SOS = "none"

SCHEMES: dict[str, dict[str, Any]] = {
    "sgd": {"sos.enabled": False},
    "sgd+sos": {"sos.enabled": True},
    "sam": {"sos.enabled": False, "model.sam_rho": "${sweep.sam_rho}"},
    "sam+sos": {"sos.enabled": True, "model.sam_rho": "${sweep.sam_rho}"},
    "sgd_nowd": {"sos.enabled": False, "model.optimizer.weight_decay": 0.0},
    "sgd_nowd+sos": {"sos.enabled": True, "model.optimizer.weight_decay": 0.0},
}
PAIRS = (("sgd+sos", "sgd"), ("sam+sos", "sam"), ("sgd_nowd+sos", "sgd_nowd"), ("sgd", "sgd_nowd"))


@dataclass(frozen=True)
class RunSummary:
    name: str
    seed: int
    test_acc: float
    v_frob_norm: float
    max_norm_change: float | None


@dataclass(frozen=True)
class Aggregate:
    label: str
    runs: int
    mean: float
    std: float


def aggregate(label: str, values: Sequence[float]) -> Aggregate:
    """Mean and sample standard deviation (0 for a single run)."""
    data = np.asarray(values, dtype=np.float64)
    std = float(data.std(ddof=1)) if data.size > 1 else 0.0
    return Aggregate(label=label, runs=int(data.size), mean=float(data.mean()), std=std)


def child_config(cfg: DictConfig, name: str, seed: int, overrides: dict[str, Any]) -> DictConfig:
    """A training config for one sweep cell, writing into ``runs/<name>/seed_<seed>``.

    The result is fully resolved, so it can be shipped to worker processes that
    have no Hydra runtime.
    """
    child = OmegaConf.masked_copy(cfg, [k for k in cfg if k != "hydra"])
    with open_dict(child):
        child.seed = seed
        child.task_name = f"{cfg.task_name}-{name}"
        child.paths.output_dir = str(Path(cfg.paths.output_dir) / "runs" / name / f"seed_{seed}")
        for key, value in overrides.items():
            OmegaConf.update(child, key, value, merge=False)
        child.extras.print_config = False
    resolved = OmegaConf.create(OmegaConf.to_container(child, resolve=True))
    assert isinstance(resolved, DictConfig)
    return resolved


def run_training(cfg: DictConfig) -> RunSummary:
    """Trains one sweep cell and keeps only picklable results."""
    _, object_dict = train(cfg)
    rows = object_dict["metrics_rows"]
    if not rows:
        raise ConfigError(f"Sweep run produced no epochs <output_dir={cfg.paths.output_dir}>")

    changes = [
        abs(report.norm_before - report.norm_after)
        for callback in object_dict["callbacks"]
        if isinstance(callback, StochasticOptimumShifting)
        for _, report in callback.reports
    ]
    return RunSummary(
        name=str(cfg.task_name),
        seed=int(cfg.seed),
        test_acc=rows[-1].test_acc,
        v_frob_norm=rows[-1].v_frob_norm,
        max_norm_change=max(changes) if changes else None,
    )


@dataclass(frozen=True)
class FlatnessRun:
    seed: int
    flatness: ShiftFlatness


def run_flatness(cfg: DictConfig) -> FlatnessRun:
    """Trains one model, then shifts it once on a fresh OS batch and measures the sharpness around it."""
    _, object_dict = train(cfg)
    net = object_dict["model"].net
    data = object_dict["datamodule"].data_train

    os_config = OsConfig.from_mapping(OmegaConf.to_container(cfg.sos, resolve=True))
    index = sample_os_batch(data.labels, os_config.batch_size, os_config.sampling, os_config.batch_seed(int(cfg.epochs)))
    flatness = shift_flatness(
        net, data.inputs[index], data.labels[index], os_config, cfg.loss, int(cfg.sweep.probes), int(cfg.seed)
    )
    return FlatnessRun(seed=int(cfg.seed), flatness=flatness)


def run_all[T](configs: list[DictConfig], workers: int, task: Callable[[DictConfig], T]) -> list[T]:
    """Runs sweep cells in order, or on a bounded process pool. Results keep input order."""
    if workers <= 1:
        return [task(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, configs))


def sos_batch_sweep(cfg: DictConfig) -> dict[str, Any]:
    """Test accuracy versus OS batch size b₂, plus a run without OS.

    A b₂ at or above the feature dimension m is flagged as the identity regime:
    the system is not under-determined and OS cannot move ``V``.
    """
    batch_sizes = [int(b) for b in cfg.sweep.batch_sizes]
    seeds = [int(s) for s in cfg.sweep.seeds]
    feature_dim = int(cfg.model.net.layer_dims[-2])

    cells = [(NO_SOS, {"sos.enabled": False})] + [
        (str(b), {"sos.enabled": True, "sos.batch_size": b}) for b in batch_sizes
    ]
    configs = [child_config(cfg, f"b{label}", seed, overrides) for label, overrides in cells for seed in seeds]
    summaries = run_all(configs, cfg.sweep.workers, run_training)

    path = Path(cfg.paths.output_dir) / SOS_BATCH_FILE
    metric_dict: dict[str, Any] = {}
    table = rich.table.Table("batch_size", "identity_regime", "runs", "test_acc", "max_norm_change", title="SOS batch size")
    with path.open("w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["batch_size", "identity_regime", "runs", "test_acc_mean", "test_acc_std", "max_norm_change"])
        for index, (label, _) in enumerate(cells):
            group = summaries[index * len(seeds) : (index + 1) * len(seeds)]
            stats = aggregate(label, [s.test_acc for s in group])
            changes = [s.max_norm_change for s in group if s.max_norm_change is not None]
            change = max(changes) if changes else None
            identity = label != NO_SOS and int(label) >= feature_dim
            writer.writerow([label, int(identity), stats.runs, repr(stats.mean), repr(stats.std), "" if change is None else repr(change)])
            table.add_row(label, str(identity), str(stats.runs), f"{stats.mean:.4f} ± {stats.std:.4f}", "-" if change is None else f"{change:.3e}")
            metric_dict[f"sweep/b{label}/test_acc"] = stats.mean
            if change is not None:
                metric_dict[f"sweep/b{label}/max_norm_change"] = change

    if not cfg.extras.get("quiet"):
        rich.print(table)
    logger.info(f"Saved SOS batch sweep to {path}")
    return metric_dict


def scheme_sweep(cfg: DictConfig) -> dict[str, Any]:
    """SGD, SAM and SGD without weight decay, each with and without OS, over shared seeds.

    Rows ``a-b`` hold the mean and std of the per-seed difference ``acc(a) − acc(b)``.
    """
    seeds = [int(s) for s in cfg.sweep.seeds]
    schemes = [s for s in cfg.sweep.schemes]
    unknown = set(schemes) - SCHEMES.keys()
    if unknown:
        raise ConfigError(f"Unknown schemes <{sorted(unknown)}>, expected a subset of {list(SCHEMES)}")

    configs = [child_config(cfg, scheme, seed, SCHEMES[scheme]) for scheme in schemes for seed in seeds]
    summaries = run_all(configs, cfg.sweep.workers, run_training)
    by_scheme = {
        scheme: [s.test_acc for s in summaries[i * len(seeds) : (i + 1) * len(seeds)]] for i, scheme in enumerate(schemes)
    }

    rows = [aggregate(scheme, accs) for scheme, accs in by_scheme.items()]
    for treated, control in PAIRS:
        if treated in by_scheme and control in by_scheme:
            diffs = [a - b for a, b in zip(by_scheme[treated], by_scheme[control], strict=True)]
            rows.append(aggregate(f"{treated}-{control}", diffs))

    path = Path(cfg.paths.output_dir) / SCHEMES_FILE
    table = rich.table.Table("scheme", "runs", "test_acc", title="Training schemes")
    with path.open("w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["scheme", "runs", "test_acc_mean", "test_acc_std"])
        for row in rows:
            writer.writerow([row.label, row.runs, repr(row.mean), repr(row.std)])
            table.add_row(row.label, str(row.runs), f"{row.mean:+.4f} ± {row.std:.4f}")

    if not cfg.extras.get("quiet"):
        rich.print(table)
    logger.info(f"Saved scheme comparison to {path}")
    return {f"sweep/{row.label}/test_acc": row.mean for row in rows}


def flatness_sweep(cfg: DictConfig) -> dict[str, Any]:
    """Trains one model per seed, shifts each once and compares the sharpness on the OS batch.

    Per model the table holds ‖V‖²_F and the all-parameter Hutchinson trace
    before and after OS, and the exact ``V``-block trace, which only depends on
    the batch logits and features and so must not move.
    """
    seeds = [int(s) for s in cfg.sweep.seeds]
    overrides = {"sos.enabled": bool(cfg.sweep.sos_during_training)}
    configs = [child_config(cfg, "flatness", seed, overrides) for seed in seeds]
    runs = run_all(configs, cfg.sweep.workers, run_flatness)

    path = Path(cfg.paths.output_dir) / FLATNESS_FILE
    with path.open("w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(FLATNESS_HEADER)
        for run in runs:
            f = run.flatness
            values = (
                f.norm_sq_before,
                f.norm_sq_after,
                f.trace_before,
                f.trace_after,
                f.trace_stderr,
                f.exact_trace_before,
                f.exact_trace_after,
                f.exact_trace_rel_change,
            )
            writer.writerow([run.seed, *(repr(v) for v in values)])

    results = [run.flatness for run in runs]
    rate = decrease_rate(results)
    worst = max(r.exact_trace_rel_change for r in results)
    metric_dict = {
        "sweep/flatness/decrease_rate": rate,
        "sweep/flatness/norm_decrease_rate": sum(r.norm_decreased for r in results) / len(results),
        "sweep/flatness/trace_decrease_rate": sum(r.trace_decreased for r in results) / len(results),
        "sweep/flatness/max_exact_trace_rel_change": worst,
    }

    table = rich.table.Table("seed", "‖V‖² before → after", "trace before → after", "exact trace change", title="OS flatness")
    for run in runs:
        f = run.flatness
        table.add_row(
            str(run.seed),
            f"{f.norm_sq_before:.4g} → {f.norm_sq_after:.4g}",
            f"{f.trace_before:.4g} → {f.trace_after:.4g} (± {f.trace_stderr:.2g})",
            f"{f.exact_trace_rel_change:.2e}",
        )
    if not cfg.extras.get("quiet"):
        rich.print(table)

    logger.info(f"Saved OS flatness table to {path} <decrease_rate={rate:.2f}, max_exact_trace_rel_change={worst:.2e}>")
    if rate < cfg.sweep.min_decrease_rate:
        logger.warning(f"OS lowered ‖V‖² and the trace together in too few models <rate={rate:.2f}, expected>={cfg.sweep.min_decrease_rate}>")
    if worst > cfg.sweep.exact_trace_tol:
        logger.warning(f"OS moved the exact V-block trace <max_rel_change={worst:.2e}, tolerance={cfg.sweep.exact_trace_tol}>")
    return metric_dict


@exception_wrapper
def sweep(cfg: DictConfig) -> tuple[dict[str, Any], dict[str, Any]]:
    """Runs a sweep of training runs selected by ``sweep.kind`` (``sos_batch``, ``schemes`` or ``flatness``).

    :param cfg: DictConfig configuration composed by Hydra.
    :return: Tuple[dict, dict] with metrics and dict with all instantiated objects.
    """
    require_keys(cfg, ("epochs", "seed", "sweep.kind", "sweep.seeds"))
    write_manifest(cfg)
    save_config(cfg)

    kind = cfg.sweep.kind
    if kind == "sos_batch":
        metric_dict = sos_batch_sweep(cfg)
    elif kind == "schemes":
        metric_dict = scheme_sweep(cfg)
    elif kind == "flatness":
        metric_dict = flatness_sweep(cfg)
    else:
        raise ConfigError(f"Unknown sweep kind <{kind}>, expected sos_batch, schemes or flatness")
    return metric_dict, {"cfg": cfg}


@hydra.main(version_base="1.3", config_path="../configs", config_name="sweep.yaml")
def main(cfg: DictConfig) -> None:
    """Main entry point for sweeps.

    :param cfg: DictConfig configuration composed by Hydra.
    """
    process_extras(cfg)

    code, _ = run_task(sweep, cfg)
    if code:
        raise SystemExit(code)


if __name__ == "__main__":
    main()
