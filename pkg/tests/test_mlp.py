from pathlib import Path

import pytest
import torch

from models.components.checkpoint import list_checkpoints, load_checkpoint, save_checkpoint
from models.components.losses import (
    LossKind,
    accuracy,
    compute_loss,
    evaluate,
    loss_and_grad,
    loss_second_derivative_diag,
    prepare_targets,
)
from models.components.mlp import MlpModel
from utils import DataFormatError


def batch(seed: int, rows: int = 6, dim: int = 5, classes: int = 3) -> tuple[torch.Tensor, torch.Tensor]:
    generator = torch.Generator().manual_seed(seed)
    inputs = torch.randn(rows, dim, generator=generator, dtype=torch.float64)
    labels = torch.randint(0, classes, (rows,), generator=generator)
    return inputs, labels


def test_init_is_seeded_glorot() -> None:
    model = MlpModel([5, 7, 3], seed=4)
    same = MlpModel([5, 7, 3], seed=4)
    for a, b in zip(model.parameters(), same.parameters(), strict=True):
        assert torch.equal(a, b)

    bound = (6.0 / (5 + 7)) ** 0.5
    assert float(model.weights[0].abs().max()) <= bound
    assert all(float(b.abs().max()) == 0.0 for b in model.biases)
    assert model.final_weight.shape == (7, 3)
    assert (model.feature_dim, model.class_count) == (7, 3)


def test_forward_trace_layers() -> None:
    model = MlpModel([5, 7, 6, 3], seed=0)
    inputs, _ = batch(0)
    logits, trace = model.forward_trace(inputs)

    assert trace is not None
    assert len(trace.pre_activations) == 3
    assert len(trace.post_activations) == len(trace.relu_masks) == 2
    assert torch.equal(trace.post_activations[-1], model.features(inputs))
    assert torch.equal(logits, model(inputs))
    assert set(trace.relu_masks[0].unique().tolist()) <= {0.0, 1.0}


def test_single_layer_has_input_features() -> None:
    model = MlpModel([5, 3], seed=0)
    inputs, _ = batch(0)
    assert torch.equal(model.features(inputs), inputs)


def test_forward_rejects_wrong_width() -> None:
    with pytest.raises(ValueError):
        MlpModel([5, 3])(torch.zeros(2, 4, dtype=torch.float64))
    with pytest.raises(ValueError):
        MlpModel([5])


def test_prepare_targets() -> None:
    labels = torch.tensor([0, 2, 1])
    assert prepare_targets(labels, 3, LossKind.CROSS_ENTROPY).dtype == torch.int64
    assert prepare_targets(labels, 3, LossKind.MSE).tolist() == [[1, 0, 0], [0, 0, 1], [0, 1, 0]]
    with pytest.raises(ValueError):
        prepare_targets(torch.tensor([0, 3]), 3, LossKind.CROSS_ENTROPY)
    with pytest.raises(ValueError):
        prepare_targets(torch.zeros(2, 4, dtype=torch.float64), 3, LossKind.MSE)


def test_mse_convention() -> None:
    logits = torch.tensor([[1.0, 0.0], [0.0, 0.0]], dtype=torch.float64)
    # ((1-0)² + (0-1)² + (0-1)² + 0²) / 2
    assert float(compute_loss(logits, torch.tensor([1, 0]), LossKind.MSE)) == pytest.approx(1.5)


@pytest.mark.parametrize("kind", list(LossKind))
@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_central_differences(seed: int, kind: LossKind) -> None:
    model = MlpModel([5, 6, 3], seed=seed)
    inputs, labels = batch(seed)
    _, grads = loss_and_grad(model, inputs, labels, kind)

    h = 1e-6
    for name, param in model.named_parameters():
        numeric = torch.zeros_like(param)
        flat = param.data.view(-1)
        for i in range(flat.numel()):
            original = float(flat[i])
            flat[i] = original + h
            plus = float(compute_loss(model(inputs), labels, kind))
            flat[i] = original - h
            minus = float(compute_loss(model(inputs), labels, kind))
            flat[i] = original
            numeric.view(-1)[i] = (plus - minus) / (2 * h)
        scale = float(grads[name].abs().max()) + 1e-8
        assert float((grads[name] - numeric).abs().max()) <= 1e-5 * scale, name


@pytest.mark.parametrize("kind", list(LossKind))
def test_second_derivative_diag_matches_autograd(kind: LossKind) -> None:
    inputs, labels = batch(1, rows=4)
    logits = torch.randn(4, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(1))

    def loss(flat: torch.Tensor) -> torch.Tensor:
        return compute_loss(flat.view(4, 3), labels, kind)

    hessian = torch.autograd.functional.hessian(loss, logits.flatten())
    expected = torch.diagonal(hessian).view(4, 3)
    assert torch.allclose(loss_second_derivative_diag(logits, labels, kind), expected, atol=1e-12)


@pytest.mark.parametrize("classes", [2, 3, 10])
def test_second_derivative_diag_batch_convention(classes: int) -> None:
    """One sample with uniform logits gives (1/k)(1 − 1/k); a batch of n divides every entry by n."""
    single = loss_second_derivative_diag(
        torch.zeros(1, classes, dtype=torch.float64), torch.tensor([0]), LossKind.CROSS_ENTROPY
    )
    assert torch.allclose(single, torch.full((1, classes), (1 / classes) * (1 - 1 / classes), dtype=torch.float64))

    rows = 4
    batched = loss_second_derivative_diag(
        torch.zeros(rows, classes, dtype=torch.float64), torch.zeros(rows, dtype=torch.int64), LossKind.CROSS_ENTROPY
    )
    assert torch.allclose(batched, single.expand(rows, classes) / rows)

    mse = loss_second_derivative_diag(
        torch.zeros(rows, classes, dtype=torch.float64), torch.zeros(rows, dtype=torch.int64), LossKind.MSE
    )
    assert torch.all(mse == 2.0 / rows)


def test_accuracy_and_evaluate() -> None:
    logits = torch.tensor([[2.0, 0.0], [0.0, 1.0], [3.0, 0.0]], dtype=torch.float64)
    assert accuracy(logits, torch.tensor([0, 1, 1])) == pytest.approx(2 / 3)
    assert accuracy(logits, torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])) == pytest.approx(1.0)

    model = MlpModel([5, 4, 3], seed=0)
    inputs, labels = batch(2)
    loss, acc = evaluate(model, inputs, labels, LossKind.CROSS_ENTROPY)
    assert loss == pytest.approx(float(compute_loss(model(inputs), labels, LossKind.CROSS_ENTROPY)))
    assert 0.0 <= acc <= 1.0


def test_checkpoint_round_trip_is_bit_exact(tmp_path: Path) -> None:
    model = MlpModel([5, 7, 3], seed=9)
    with torch.no_grad():
        model.biases[0].add_(torch.linspace(-1.0, 1.0, 7, dtype=torch.float64) / 3.0)
    path = save_checkpoint(tmp_path / "checkpoints" / "epoch_3.ckpt", model, epoch=3, extra={"note": "x"})

    restored, meta = load_checkpoint(path)
    assert (meta.seed, meta.epoch, meta.extra) == (9, 3, {"note": "x"})
    for a, b in zip(model.parameters(), restored.parameters(), strict=True):
        assert torch.equal(a, b)


def test_corrupt_checkpoint(tmp_path: Path) -> None:
    path = tmp_path / "bad.ckpt"
    path.write_text("{not json")
    with pytest.raises(DataFormatError):
        load_checkpoint(path)

    path.write_text('{"schema_version": 99}')
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


def test_list_checkpoints_orders_by_epoch(tmp_path: Path) -> None:
    model = MlpModel([2, 2], seed=0)
    for epoch in (10, 2, 1):
        save_checkpoint(tmp_path / f"epoch_{epoch}.ckpt", model, epoch)

    assert [p.name for p in list_checkpoints(tmp_path)] == ["epoch_1.ckpt", "epoch_2.ckpt", "epoch_10.ckpt"]
    assert list_checkpoints(tmp_path / "epoch_2.ckpt") == [tmp_path / "epoch_2.ckpt"]
    with pytest.raises(FileNotFoundError):
        list_checkpoints(tmp_path / "missing.ckpt")
    with pytest.raises(FileNotFoundError):
        list_checkpoints(tmp_path / "empty")
