import copy

import pytest
import torch

from models.components.losses import LossKind, compute_loss, loss_and_grad
from models.components.mixup import mixup_batch
from models.components.mlp import MlpModel
from models.components.optim import SAM, build_optimizer, build_scheduler, sam_step, sgd_step


def quadratic() -> tuple[torch.nn.Parameter, torch.optim.Optimizer]:
    w = torch.nn.Parameter(torch.tensor([3.0, 4.0], dtype=torch.float64))
    return w, SAM([w], lr=0.1, rho=0.5)


def test_build_optimizer_kinds() -> None:
    model = MlpModel([4, 3], seed=0)
    sgd = build_optimizer(model.parameters())
    assert type(sgd) is torch.optim.SGD
    assert sgd.defaults["nesterov"] is True
    assert sgd.defaults["weight_decay"] == pytest.approx(1e-4)

    sam = build_optimizer(model.parameters(), sam_rho=0.05)
    assert isinstance(sam, SAM)
    assert sam.param_groups[0]["rho"] == pytest.approx(0.05)

    assert build_optimizer(model.parameters(), momentum=0.0).defaults["nesterov"] is False
    with pytest.raises(ValueError):
        build_optimizer(model.parameters(), lr=-1.0)


def test_sam_ascends_along_normalized_gradient() -> None:
    w, optimizer = quadratic()
    (w**2).sum().backward()  # grad (6, 8), norm 10
    optimizer.first_step(zero_grad=True)
    assert torch.allclose(w.detach(), torch.tensor([3.3, 4.4], dtype=torch.float64))

    (w**2).sum().backward()  # grad at the perturbed point (6.6, 8.8)
    optimizer.second_step()
    assert torch.allclose(w.detach(), torch.tensor([3.0 - 0.66, 4.0 - 0.88], dtype=torch.float64))


def test_sam_with_zero_gradient_takes_plain_step() -> None:
    w = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
    optimizer = SAM([w], lr=0.1, rho=0.5)
    (w**2).sum().backward()
    optimizer.first_step()
    assert torch.equal(w.detach(), torch.zeros(2, dtype=torch.float64))


def test_sam_step_needs_closure() -> None:
    w, optimizer = quadratic()

    def closure() -> torch.Tensor:
        optimizer.zero_grad()
        loss = (w**2).sum()
        loss.backward()
        return loss

    optimizer.step(closure)
    assert torch.allclose(w.detach(), torch.tensor([2.34, 3.12], dtype=torch.float64))
    with pytest.raises(NotImplementedError):
        optimizer.step()
    with pytest.raises(ValueError):
        SAM([w], lr=0.1, rho=-1.0)


def test_step_milestones_from_fractions() -> None:
    w = torch.nn.Parameter(torch.zeros(1))
    optimizer = torch.optim.SGD([w], lr=1.0)
    scheduler = build_scheduler(optimizer, max_epochs=8)
    assert scheduler is not None

    rates = []
    for _ in range(8):
        rates.append(optimizer.param_groups[0]["lr"])
        optimizer.step()
        scheduler.step()
    assert rates == pytest.approx([1.0] * 4 + [0.1] * 2 + [0.01] * 2)


def test_step_milestones_from_epochs() -> None:
    w = torch.nn.Parameter(torch.zeros(1))
    optimizer = torch.optim.SGD([w], lr=0.01)
    scheduler = build_scheduler(optimizer, max_epochs=200, milestone_epochs=[150, 50, 100], gamma=0.1)
    assert list(scheduler.milestones) == [50, 100, 150]


def test_cosine_constant_and_unknown_schedules() -> None:
    w = torch.nn.Parameter(torch.zeros(1))
    optimizer = torch.optim.SGD([w], lr=1.0)
    cosine = build_scheduler(optimizer, max_epochs=4, kind="cosine")
    for _ in range(4):
        optimizer.step()
        cosine.step()
    assert optimizer.param_groups[0]["lr"] == pytest.approx(0.0, abs=1e-12)

    assert build_scheduler(optimizer, max_epochs=4, kind="constant") is None
    with pytest.raises(ValueError):
        build_scheduler(optimizer, max_epochs=4, kind="warmup")


def test_mixup_is_seeded() -> None:
    inputs = torch.arange(12, dtype=torch.float64).view(6, 2)
    labels = torch.tensor([0, 1, 2, 0, 1, 2])
    x1, y1, lam1 = mixup_batch(inputs, labels, 3, alpha=1.0, seed=5)
    x2, y2, lam2 = mixup_batch(inputs, labels, 3, alpha=1.0, seed=5)
    assert lam1 == lam2
    assert torch.equal(x1, x2)
    assert torch.equal(y1, y2)
    assert 0.0 <= lam1 <= 1.0
    assert torch.allclose(y1.sum(dim=1), torch.ones(6, dtype=torch.float64))


def test_mixup_with_forced_lambda() -> None:
    inputs = torch.randn(5, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    labels = torch.tensor([0, 1, 1, 0, 1])
    x, y, lam = mixup_batch(inputs, labels, 2, alpha=0.2, seed=[1, 2], lam=1.0)
    assert lam == 1.0
    assert torch.equal(x, inputs)
    assert torch.equal(y.argmax(dim=1), labels)

    with pytest.raises(ValueError):
        mixup_batch(inputs, labels, 2, alpha=0.0, seed=0)
    with pytest.raises(ValueError):
        mixup_batch(inputs, labels, 2, alpha=1.0, seed=0, lam=1.5)


@pytest.mark.parametrize("kind", list(LossKind))
def test_sgd_step_reduces_loss(kind: LossKind) -> None:
    generator = torch.Generator().manual_seed(0)
    inputs = torch.randn(16, 4, generator=generator, dtype=torch.float64)
    labels = torch.randint(0, 3, (16,), generator=generator)
    model = MlpModel([4, 8, 3], seed=0)
    optimizer = torch.optim.SGD(model.parameters(), lr=0.05)

    first = sgd_step(model, inputs, labels, optimizer, kind)
    assert first.loss == pytest.approx(float(compute_loss(first.logits, labels, kind)))
    for _ in range(20):
        sgd_step(model, inputs, labels, optimizer, kind)
    assert float(compute_loss(model(inputs), labels, kind)) < first.loss


def test_sam_step_reports_loss_at_pre_step_weights() -> None:
    generator = torch.Generator().manual_seed(1)
    inputs = torch.randn(16, 4, generator=generator, dtype=torch.float64)
    labels = torch.randint(0, 3, (16,), generator=generator)
    model = MlpModel([4, 8, 3], seed=1)
    before = float(compute_loss(model(inputs), labels, LossKind.CROSS_ENTROPY))
    optimizer = build_optimizer(model.parameters(), lr=0.05, momentum=0.0, weight_decay=0.0, sam_rho=0.05)

    result = sam_step(model, inputs, labels, optimizer)
    assert result.loss == pytest.approx(before)
    assert all(p.grad is None or float(p.grad.abs().max()) == 0.0 for p in model.parameters())
    assert float(compute_loss(model(inputs), labels, LossKind.CROSS_ENTROPY)) < before


def regression_batch(seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    generator = torch.Generator().manual_seed(seed)
    inputs = torch.randn(12, 4, generator=generator, dtype=torch.float64)
    return inputs, torch.randint(0, 3, (12,), generator=generator)


@pytest.mark.parametrize("weight_decay", [0.0, 1e-2])
def test_sgd_step_without_momentum_is_a_gradient_step(weight_decay: float) -> None:
    """``w ← w − lr·(∇L(w) + λ·w)``."""
    inputs, labels = regression_batch(0)
    model = MlpModel([4, 6, 3], seed=0)
    before = {name: p.detach().clone() for name, p in model.named_parameters()}
    _, grads = loss_and_grad(model, inputs, labels, LossKind.CROSS_ENTROPY)

    optimizer = build_optimizer(model.parameters(), lr=0.05, momentum=0.0, weight_decay=weight_decay)
    sgd_step(model, inputs, labels, optimizer)

    for name, p in model.named_parameters():
        expected = before[name] - 0.05 * (grads[name] + weight_decay * before[name])
        assert torch.allclose(p.detach(), expected, rtol=0.0, atol=1e-14), name


def test_nesterov_matches_unrolled_recurrence() -> None:
    """Two steps of ``b ← μ·b + g``, ``w ← w − lr·(g + μ·b)`` with ``b₀ = 0``."""
    lr, mu = 0.05, 0.9
    inputs, labels = regression_batch(1)
    model = MlpModel([4, 6, 3], seed=1)
    reference = copy.deepcopy(model)

    optimizer = build_optimizer(model.parameters(), lr=lr, momentum=mu, weight_decay=0.0, nesterov=True)
    assert optimizer.defaults["nesterov"] is True
    for _ in range(2):
        sgd_step(model, inputs, labels, optimizer)

    buffers = {name: torch.zeros_like(p) for name, p in reference.named_parameters()}
    for _ in range(2):
        _, grads = loss_and_grad(reference, inputs, labels, LossKind.CROSS_ENTROPY)
        with torch.no_grad():
            for name, p in reference.named_parameters():
                buffers[name] = mu * buffers[name] + grads[name]
                p.sub_(lr * (grads[name] + mu * buffers[name]))

    for (name, p), q in zip(model.named_parameters(), reference.parameters(), strict=True):
        assert torch.allclose(p.detach(), q.detach(), rtol=0.0, atol=1e-13), name


def test_sam_without_radius_is_sgd_bit_for_bit() -> None:
    inputs, labels = regression_batch(2)
    plain_model = MlpModel([4, 6, 3], seed=2)
    sam_model = MlpModel([4, 6, 3], seed=2)
    plain = build_optimizer(plain_model.parameters(), lr=0.05)
    sam = build_optimizer(sam_model.parameters(), lr=0.05, sam_rho=0.0)
    assert isinstance(sam, SAM)

    for _ in range(3):
        expected = sgd_step(plain_model, inputs, labels, plain)
        result = sam_step(sam_model, inputs, labels, sam)
        assert result.loss == expected.loss

    for p, q in zip(plain_model.parameters(), sam_model.parameters(), strict=True):
        assert torch.equal(p, q)


def test_zero_learning_rate_freezes_parameters() -> None:
    inputs, labels = regression_batch(3)
    model = MlpModel([4, 6, 3], seed=3)
    before = [p.detach().clone() for p in model.parameters()]
    optimizer = build_optimizer(model.parameters(), lr=0.0)
    for _ in range(3):
        sgd_step(model, inputs, labels, optimizer)
    assert all(torch.equal(p, q) for p, q in zip(model.parameters(), before, strict=True))


def test_mixup_with_half_lambda_averages_labels() -> None:
    # row i is (2i, 2i + 1), so the partner index can be read off the mixed inputs
    inputs = torch.arange(16, dtype=torch.float64).view(8, 2)
    labels = torch.tensor([0, 1, 2, 3, 0, 1, 2, 3])
    x, y, lam = mixup_batch(inputs, labels, 4, alpha=1.0, seed=11, lam=0.5)
    assert lam == 0.5

    partner = ((2.0 * x - inputs)[:, 0] / 2.0).long()
    assert sorted(partner.tolist()) == list(range(8))
    one_hot = torch.nn.functional.one_hot(labels, 4).to(torch.float64)
    assert torch.equal(y, 0.5 * (one_hot + one_hot[partner]))
    assert torch.equal(y.sum(dim=0), one_hot.sum(dim=0))


def test_mixup_lambda_mean_is_one_half() -> None:
    inputs = torch.zeros(2, 1, dtype=torch.float64)
    labels = torch.tensor([0, 1])
    draws = [mixup_batch(inputs, labels, 2, alpha=1.0, seed=seed)[2] for seed in range(20000)]
    assert sum(draws) / len(draws) == pytest.approx(0.5, abs=0.01)
