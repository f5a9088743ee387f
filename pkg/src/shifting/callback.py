from pathlib import Path

from lightning import Callback, LightningModule, Trainer

from shifting.sampling import sample_os_batch
from shifting.solver import OsConfig, OsReport, apply_os
from utils.errors import OsContractViolation
from utils.ranked_logger import RankedLogger

log = RankedLogger(__name__)

REPORT_FILE = "os_reports.jsonl"


class StochasticOptimumShifting(Callback):
    """Applies OS to the final layer at the start of scheduled epochs, before any SGD step.

    Each application samples a fresh OS batch from the training split (seeded by
    the master seed and the epoch), appends its report to ``os_reports.jsonl``
    and records the epoch on the module as ``last_sos_epoch``. From
    `warmup_fraction` of the schedule on, the OS-batch loss change must stay
    within `loss_tolerance`.
    """

    def __init__(
        self,
        config: OsConfig,
        output_dir: str | Path | None = None,
        loss_tolerance: float = 1e-6,
        warmup_fraction: float = 0.5,
    ) -> None:
        super().__init__()
        self.config = config
        self.report_path = Path(output_dir) / REPORT_FILE if output_dir is not None else None
        self.loss_tolerance = loss_tolerance
        self.warmup_fraction = warmup_fraction
        self.reports: list[tuple[int, OsReport]] = []

    def on_fit_start(self, trainer: Trainer, pl_module: LightningModule) -> None:
        if self.report_path is not None and trainer.is_global_zero:
            self.report_path.parent.mkdir(parents=True, exist_ok=True)
            self.report_path.write_text("")

    def on_train_epoch_start(self, trainer: Trainer, pl_module: LightningModule) -> None:
        epoch = trainer.current_epoch
        if not self.config.applies_at(epoch):
            return

        train_set = trainer.datamodule.data_train
        index = sample_os_batch(
            train_set.labels, self.config.batch_size, self.config.sampling, self.config.batch_seed(epoch)
        )
        report = apply_os(
            pl_module.net,
            train_set.inputs[index],
            self.config,
            batch_targets=train_set.labels[index],
            kind=pl_module.loss_kind,
        )
        pl_module.last_sos_epoch = epoch
        self.reports.append((epoch, report))

        if self.report_path is not None and trainer.is_global_zero:
            with self.report_path.open("a") as stream:
                stream.write(report.to_json() + "\n")

        log.info(
            f"SOS applied <epoch={epoch}, rank={report.rank}, norm_before={report.norm_before:.6g}, "
            f"norm_after={report.norm_after:.6g}, logit_drift={report.logit_drift:.3e}>"
        )

        change = report.loss_change
        past_warmup = trainer.max_epochs is not None and epoch >= self.warmup_fraction * trainer.max_epochs
        if past_warmup and change is not None and abs(change) > self.loss_tolerance:
            raise OsContractViolation(
                f"SOS changed the batch loss <epoch={epoch}, loss_change={change:.3e}, tolerance={self.loss_tolerance}>"
            )
