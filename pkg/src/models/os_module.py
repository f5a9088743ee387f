import math
from functools import partial
from typing import Any

import torch
from lightning import LightningModule
from lightning.fabric.utilities import AttributeDict
from torchmetrics import MeanMetric
from torchmetrics.classification.accuracy import Accuracy

from models.components.losses import LossKind, compute_loss
from models.components.mixup import mixup_batch
from models.components.mlp import MlpModel
from models.components.optim import SAM, StepResult, sam_step, sgd_step
from utils.errors import DivergenceError


class OptimumShiftingLitModule(LightningModule):
    """`LightningModule` for MLP classification with manual SGD/SAM steps.

    Optimization is manual so that a step can be plain Nesterov SGD or a
    two-pass SAM step, and so that optimum shifting (a callback) can rewrite the
    final weight between epochs without involving autograd. The learning-rate
    scheduler is stepped once per epoch.

    Epoch aggregates are kept in torchmetrics objects and collected through
    `collect_epoch_metrics`; ``last_sos_epoch`` and ``last_hessian_trace`` are
    set by the OS and Hessian callbacks.
    """

    def __init__(
        self,
        net: MlpModel,
        optimizer: partial,
        scheduler: partial | None = None,
        loss: str = "cross_entropy",
        sam_rho: float | None = None,
        mixup_alpha: float | None = None,
        seed: int = 0,
    ) -> None:
        """Initialize a `OptimumShiftingLitModule`.

        :param net: The MLP to train.
        :param optimizer: Partial optimizer builder taking ``params`` and ``sam_rho``.
        :param scheduler: Partial scheduler builder taking ``optimizer`` and ``max_epochs``.
        :param loss: ``"cross_entropy"`` or ``"mse"``.
        :param sam_rho: SAM radius; ``None`` trains with plain SGD.
        :param mixup_alpha: Mixup Beta concentration; ``None`` disables mixup.
        :param seed: Seed of the per-batch mixup draws.
        """
        super().__init__()
        if sam_rho is not None and sam_rho <= 0:
            raise ValueError(f"sam_rho must be positive, got {sam_rho}")
        if mixup_alpha is not None and mixup_alpha <= 0:
            raise ValueError(f"mixup_alpha must be positive, got {mixup_alpha}")

        # this line allows to access init params with 'self.hparams' attribute
        self.save_hyperparameters(logger=False, ignore=["net"])

        assert isinstance(self.hparams, AttributeDict)
        self.hparams: AttributeDict

        self.automatic_optimization = False
        self.net = net
        self.loss_kind = LossKind(loss)

        classes = net.class_count
        self.train_acc = Accuracy(task="multiclass", num_classes=classes)
        self.test_acc = Accuracy(task="multiclass", num_classes=classes)
        self.train_loss = MeanMetric().set_dtype(torch.float64)
        self.test_loss = MeanMetric().set_dtype(torch.float64)

        self.last_sos_epoch: int | None = None
        self.last_hessian_trace: tuple[int, float] | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Perform a forward pass through the model `self.net`.

        :param x: A batch of flattened inputs.
        :return: A tensor of logits.
        """
        return self.net(x)

    def training_step(self, batch: tuple[torch.Tensor, torch.Tensor], batch_idx: int) -> torch.Tensor:
        """One SGD or SAM step on a (possibly mixed) training batch.

        :param batch: Inputs and integer labels.
        :param batch_idx: The index of the current batch.
        :return: The pre-step batch loss.
        """
        x, y = batch
        epoch = self.current_epoch
        targets: torch.Tensor = y
        if self.hparams.mixup_alpha is not None:
            x, targets, _ = mixup_batch(
                x, y, self.net.class_count, self.hparams.mixup_alpha, seed=(self.hparams.seed, epoch, batch_idx)
            )

        optimizer = self.optimizers()
        if self.hparams.sam_rho is not None:
            result: StepResult = sam_step(self.net, x, targets, optimizer, self.loss_kind, self.manual_backward)
        else:
            result = sgd_step(self.net, x, targets, optimizer, self.loss_kind, self.manual_backward)

        if not math.isfinite(result.loss):
            raise DivergenceError(epoch, result.loss)

        self.train_loss.update(torch.tensor(result.loss, dtype=torch.float64), weight=y.shape[0])
        self.train_acc.update(result.logits.argmax(dim=1), y)
        return torch.tensor(result.loss)

    def validation_step(self, batch: tuple[torch.Tensor, torch.Tensor], batch_idx: int) -> None:
        """Accumulate loss and accuracy on a batch of the evaluation (test) split.

        :param batch: Inputs and integer labels.
        :param batch_idx: The index of the current batch.
        """
        x, y = batch
        logits = self.forward(x)
        loss = compute_loss(logits, y, self.loss_kind)
        self.test_loss.update(loss, weight=y.shape[0])
        self.test_acc.update(logits.argmax(dim=1), y)

    def test_step(self, batch: tuple[torch.Tensor, torch.Tensor], batch_idx: int) -> None:
        self.validation_step(batch, batch_idx)

    def collect_epoch_metrics(self) -> dict[str, float]:
        """Computes and resets the epoch aggregates. Empty aggregates come back as NaN."""
        metrics = {}
        for name, metric in (
            ("train/loss", self.train_loss),
            ("train/acc", self.train_acc),
            ("test/loss", self.test_loss),
            ("test/acc", self.test_acc),
        ):
            metrics[name] = float(metric.compute()) if metric.update_count else math.nan
            metric.reset()
        return metrics

    def on_train_epoch_end(self) -> None:
        """Lightning hook that is called when a training epoch ends. Steps the LR schedule."""
        scheduler = self.lr_schedulers()
        if scheduler is not None:
            scheduler.step()

    def current_lr(self) -> float:
        optimizer = self.optimizers()
        return float(optimizer.param_groups[0]["lr"])

    def configure_optimizers(self) -> dict[str, Any]:
        """Builds the SGD (or SAM) optimizer and the per-epoch schedule.

        :return: A dict containing the configured optimizer and learning-rate scheduler.
        """
        optimizer = self.hparams.optimizer(params=self.net.parameters(), sam_rho=self.hparams.sam_rho)
        assert self.hparams.sam_rho is None or isinstance(optimizer, SAM)

        if self.hparams.scheduler is not None:
            scheduler = self.hparams.scheduler(optimizer=optimizer, max_epochs=self.trainer.max_epochs)
            if scheduler is not None:
                return {"optimizer": optimizer, "lr_scheduler": {"scheduler": scheduler, "interval": "epoch"}}
        return {"optimizer": optimizer}
