import csv
from pathlib import Path

from lightning import Callback, LightningModule, Trainer

from sharpness.estimators import exact_last_layer_trace, hutchinson_trace
from sharpness.operators import ModelHessian, Scope
from utils.ranked_logger import RankedLogger

log = RankedLogger(__name__)

TRACE_FILE = "hessian_trace.csv"
TRACE_HEADER = ("epoch", "trace_estimate", "stderr", "exact_last_layer_trace")


class HessianTraceMonitor(Callback):
    """Tracks Hessian sharpness on a fixed train subset every `every_n_epochs` epochs.

    Rows go to ``hessian_trace.csv``; the latest estimate is left on the module as
    ``last_hessian_trace = (epoch, estimate)`` for the metrics table.
    """

    def __init__(
        self,
        output_dir: str | Path | None = None,
        every_n_epochs: int = 1,
        probes: int = 20,
        samples: int = 512,
        seed: int = 0,
        scope: str = Scope.ALL,
    ) -> None:
        super().__init__()
        if every_n_epochs < 1:
            raise ValueError(f"every_n_epochs must be >= 1, got {every_n_epochs}")
        self.path = Path(output_dir) / TRACE_FILE if output_dir is not None else None
        self.every_n_epochs = every_n_epochs
        self.probes = probes
        self.samples = samples
        self.seed = seed
        self.scope = Scope(scope)
        self.rows: list[tuple[int, float, float, float]] = []

    def on_fit_start(self, trainer: Trainer, pl_module: LightningModule) -> None:
        if self.path is not None and trainer.is_global_zero:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as stream:
                csv.writer(stream, lineterminator="\n").writerow(TRACE_HEADER)

    def on_train_epoch_end(self, trainer: Trainer, pl_module: LightningModule) -> None:
        epoch = trainer.current_epoch
        if epoch % self.every_n_epochs != 0:
            return

        train_set = trainer.datamodule.data_train
        inputs, labels = train_set.inputs[: self.samples], train_set.labels[: self.samples]
        operator = ModelHessian(pl_module.net, inputs, labels, pl_module.loss_kind, self.scope)
        trace = hutchinson_trace(operator, self.probes, self.seed + epoch)
        exact = exact_last_layer_trace(pl_module.net, inputs, labels, pl_module.loss_kind)

        row = (epoch, trace.estimate, trace.stderr, exact)
        self.rows.append(row)
        pl_module.last_hessian_trace = (epoch, trace.estimate)
        if self.path is not None and trainer.is_global_zero:
            with self.path.open("a", newline="") as stream:
                csv.writer(stream, lineterminator="\n").writerow([epoch, *(repr(v) for v in row[1:])])

        log.info(f"Hessian trace <epoch={epoch}, estimate={trace.estimate:.6g}, stderr={trace.stderr:.3g}, exact_last_layer={exact:.6g}>")
