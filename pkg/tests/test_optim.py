import numpy as np
import pytest

from ept.errors import ContractError, ParameterError
from ept.numeric import Tensor
from ept.optim import OptimizerState, Schedule, lr_at, optimizer_step


def test_schedule_examples():
    s = Schedule(peak=3e-4, warmup=500, total=5000)
    assert lr_at(0, s) == 0.0
    assert lr_at(500, s) == 3e-4
    assert lr_at(5000, s) == 0.0
    assert lr_at(250, s) == pytest.approx(1.5e-4)
    assert lr_at(2750, s) == pytest.approx(1.5e-4)
    with pytest.raises(ParameterError):
        lr_at(5001, s)
    with pytest.raises(ParameterError):
        lr_at(-1, s)


def _one(value, grad, wd=0.0, peak=0.1):
    p = {"w": Tensor(np.array([value]), requires_grad=True)}
    st = OptimizerState(Schedule(peak=peak, warmup=0, total=10), weight_decay=wd)
    lr = optimizer_step(p, {"w": np.array([grad])}, st)
    return p["w"].data[0], lr, st


def test_zero_gradient_zero_decay_is_identity():
    w, _, _ = _one(1.25, 0.0)
    assert w == 1.25


@pytest.mark.parametrize("g", [0.3, -2.0, 1e-3])
def test_first_step_moves_by_lr_against_the_gradient(g):
    w, lr, st = _one(1.0, g)
    # bias-corrected moments equal g and g^2 on the first step
    expect = 1.0 - lr * g / (abs(g) + 1e-8)
    assert w == pytest.approx(expect, abs=1e-15)
    assert abs(w - 1.0) == pytest.approx(lr, rel=1e-4)
    assert st.step == 1


def test_decoupled_decay_law():
    w, lr, _ = _one(2.0, 0.0, wd=0.01)
    assert w == 2.0 * (1 - lr * 0.01)


def test_decay_then_adam_order():
    w, lr, _ = _one(2.0, 0.5, wd=0.1)
    assert w == pytest.approx(2.0 * (1 - lr * 0.1) - lr * 0.5 / (0.5 + 1e-8), abs=1e-15)


def test_shape_mismatch():
    p = {"w": Tensor(np.zeros(2), requires_grad=True)}
    with pytest.raises(ContractError):
        optimizer_step(p, {"w": np.zeros(3)}, OptimizerState(Schedule(1.0, 0, 5)))


def test_two_steps_match_hand_rollout():
    p = {"w": Tensor(np.array([0.5]), requires_grad=True)}
    st = OptimizerState(Schedule(peak=0.2, warmup=1, total=4), weight_decay=0.0)
    b1, b2, eps = 0.9, 0.999, 1e-8
    w, m, v = 0.5, 0.0, 0.0
    for t, g in enumerate([1.0, -3.0], start=1):
        lr = optimizer_step(p, {"w": np.array([g])}, st)
        assert lr == lr_at(t - 1, st.schedule)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert p["w"].data[0] == pytest.approx(w, abs=1e-15)
