import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import torch
from lightning import Callback, LightningModule, Trainer

from models.components.checkpoint import save_checkpoint
from utils.errors import NumericalError
from utils.ranked_logger import RankedLogger

log = RankedLogger(__name__)

METRICS_FILE = "metrics.csv"


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    v_frob_norm: float
    lr: float
    sos_applied: bool
    hessian_trace: float | None = None

    def __post_init__(self) -> None:
        values = [v for v in astuple(self)[1:] if isinstance(v, float)]
        if not all(math.isfinite(v) for v in values):
            raise NumericalError(f"Non-finite metrics <epoch={self.epoch}, row={self}>")

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_csv_row(self) -> list[str]:
        def cell(value: object) -> str:
            if value is None:
                return ""
            if isinstance(value, bool):
                return str(int(value))
            return repr(value)

        return [cell(v) for v in astuple(self)]


class MetricsRecorder(Callback):
    """Writes one `MetricsRow` per epoch to ``metrics.csv`` and to the experiment loggers.

    Runs after the evaluation pass of the epoch, before the LR schedule steps, so
    `lr` is the rate the epoch was trained with.
    """

    def __init__(self, output_dir: str | Path | None = None) -> None:
        super().__init__()
        self.path = Path(output_dir) / METRICS_FILE if output_dir is not None else None
        self.rows: list[MetricsRow] = []

    def on_fit_start(self, trainer: Trainer, pl_module: LightningModule) -> None:
        self.rows = []
        if self.path is not None and trainer.is_global_zero:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as stream:
                csv.writer(stream, lineterminator="\n").writerow(MetricsRow.header())

    def on_train_epoch_end(self, trainer: Trainer, pl_module: LightningModule) -> None:
        epoch = trainer.current_epoch
        metrics = pl_module.collect_epoch_metrics()
        trace = pl_module.last_hessian_trace
        row = MetricsRow(
            epoch=epoch,
            train_loss=metrics["train/loss"],
            train_acc=metrics["train/acc"],
            test_loss=metrics["test/loss"],
            test_acc=metrics["test/acc"],
            v_frob_norm=float(torch.linalg.matrix_norm(pl_module.net.final_weight.detach())),
            lr=pl_module.current_lr(),
            sos_applied=pl_module.last_sos_epoch == epoch,
            hessian_trace=trace[1] if trace is not None and trace[0] == epoch else None,
        )
        self.rows.append(row)

        pl_module.log_dict(
            {**metrics, "v_frob_norm": row.v_frob_norm, "lr": row.lr, "sos_applied": float(row.sos_applied)},
            on_step=False,
            on_epoch=True,
        )
        if self.path is not None and trainer.is_global_zero:
            with self.path.open("a", newline="") as stream:
                csv.writer(stream, lineterminator="\n").writerow(row.as_csv_row())


class TextCheckpoint(Callback):
    """Saves ``checkpoints/epoch_N.ckpt`` in the text checkpoint format.

    `N` counts completed epochs. A checkpoint is written every `every_n_epochs`
    epochs and after the final epoch; ``epoch_0.ckpt`` (the initialization) is
    written when `save_initial` is set.
    """

    def __init__(self, dirpath: str | Path, every_n_epochs: int = 1, save_initial: bool = False) -> None:
        super().__init__()
        if every_n_epochs < 1:
            raise ValueError(f"every_n_epochs must be >= 1, got {every_n_epochs}")
        self.dirpath = Path(dirpath)
        self.every_n_epochs = every_n_epochs
        self.save_initial = save_initial
        self.saved: list[Path] = []

    def _save(self, pl_module: LightningModule, completed: int) -> None:
        path = save_checkpoint(self.dirpath / f"epoch_{completed}.ckpt", pl_module.net, epoch=completed)
        self.saved.append(path)
        log.info(f"Saved checkpoint <path={path}>")

    def on_fit_start(self, trainer: Trainer, pl_module: LightningModule) -> None:
        if self.save_initial and trainer.is_global_zero:
            self._save(pl_module, 0)

    def on_train_epoch_end(self, trainer: Trainer, pl_module: LightningModule) -> None:
        completed = trainer.current_epoch + 1
        is_last = trainer.max_epochs is not None and completed == trainer.max_epochs
        if trainer.is_global_zero and (completed % self.every_n_epochs == 0 or is_last):
            self._save(pl_module, completed)
