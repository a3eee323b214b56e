import numpy as np
import pytest

from src.core.exceptions import NumericalError
from src.core.optim import AdamW, AdamWState, OptimGroup, adamw_step
from src.core.tensor import Precision, Tensor

D = Precision.DOUBLE


def _param(values):
    return Tensor(np.asarray(values, dtype=np.float64), trainable=True, precision=D)


def test_zero_gradient_applies_decay_only():
    p = np.array([2.0, -4.0])
    adamw_step([p], [np.zeros(2)], AdamWState(), lr=0.1, weight_decay=0.5,
               beta1=0.9, beta2=0.999, eps=1e-8)
    np.testing.assert_array_equal(p, np.array([2.0, -4.0]) * (1.0 - 0.1 * 0.5))


def test_first_step_is_a_sign_step():
    p = np.array([1.0, 1.0, 1.0])
    g = np.array([3.0, -0.5, 1e-3])
    adamw_step([p], [g], AdamWState(), lr=0.01, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8)
    np.testing.assert_allclose(p, 1.0 - 0.01 * np.sign(g), atol=1e-6)


def test_two_steps_follow_the_recursion():
    lr, wd, b1, b2, eps = 0.05, 0.01, 0.9, 0.999, 1e-8
    rng = np.random.default_rng(0)
    p0 = rng.normal(size=4)
    grads = [rng.normal(size=4), rng.normal(size=4)]

    p = p0.copy()
    state = AdamWState()
    for g in grads:
        adamw_step([p], [g], state, lr, wd, b1, b2, eps)

    w, m, v = p0.copy(), np.zeros(4), np.zeros(4)
    for t, g in enumerate(grads, start=1):
        w = w - lr * wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    np.testing.assert_allclose(p, w, rtol=1e-10, atol=1e-12)
    assert state.step == 2


def test_groups_use_their_own_learning_rate():
    a, b = _param([1.0]), _param([1.0])
    a.grad = np.array([1.0])
    b.grad = np.array([1.0])
    AdamW([OptimGroup("main", [a], 1e-3), OptimGroup("lora", [b], 1e-1)], weight_decay=0.0).step()
    assert a.data[0] == pytest.approx(1.0 - 1e-3, abs=1e-9)
    assert b.data[0] == pytest.approx(1.0 - 1e-1, abs=1e-7)


def test_missing_gradient_counts_as_zero():
    p = _param([3.0])
    AdamW([OptimGroup("main", [p], 0.1)], weight_decay=0.2).step()
    assert p.data[0] == pytest.approx(3.0 * (1.0 - 0.02), abs=1e-12)


def test_non_finite_gradient_names_group_and_leaves_params():
    ok, bad = _param([1.0]), _param([2.0])
    ok.grad = np.array([0.5])
    bad.grad = np.array([np.nan])
    opt = AdamW([OptimGroup("segnet", [ok], 0.1), OptimGroup("lora", [bad], 0.1)])
    with pytest.raises(NumericalError, match="lora") as info:
        opt.step(epoch=3, batch=1)
    assert info.value.group == "lora"
    assert (info.value.epoch, info.value.batch) == (3, 1)
    assert ok.data[0] == 1.0 and bad.data[0] == 2.0
    assert opt.groups[0].state.step == 0


def test_zero_grad_clears_every_group():
    p = _param([1.0, 2.0])
    p.grad = np.array([5.0, 5.0])
    opt = AdamW([OptimGroup("main", [p], 0.1)])
    opt.zero_grad()
    np.testing.assert_array_equal(p.grad, [0.0, 0.0])
