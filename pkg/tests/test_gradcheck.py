import numpy as np
import pytest

from src.core import functional as F
from src.core.exceptions import ConfigError, EvaluationError
from src.core.gradcheck import GradReport, grad_check
from src.core.tensor import Precision, Tensor

D = Precision.DOUBLE


def test_square_gradient_at_three():
    x = Tensor([3.0], trainable=True, precision=D)
    report = grad_check(lambda: (x * x).sum(), [x], eps=1e-5, op_name="square")
    assert x.grad[0] == 6.0
    assert report.max_rel_err <= 1e-8
    assert report.n_params_checked == 1
    assert report.op_name == "square"


def test_matmul_sum_gradient():
    rng = np.random.default_rng(0)
    a = Tensor(rng.uniform(-1, 1, (3, 3)), trainable=True, precision=D)
    b = Tensor(rng.uniform(-1, 1, (3, 3)), trainable=True, precision=D)
    report = grad_check(lambda: (a @ b).sum(), [a, b])
    assert report.max_rel_err <= 1e-6
    assert report.n_params_checked == 18


def test_perturbation_restores_parameters():
    rng = np.random.default_rng(1)
    a = Tensor(rng.uniform(-1, 1, (2, 2)), trainable=True, precision=D)
    before = a.data.copy()
    grad_check(lambda: (a * a).sum(), [a])
    assert a.data.tobytes() == before.tobytes()


def test_max_entries_limits_checked_count():
    a = Tensor(np.linspace(-1, 1, 50), trainable=True, precision=D)
    report = grad_check(lambda: (a * a).sum(), [a], max_entries=5)
    assert report.n_params_checked == 5


def test_non_finite_value_names_parameter():
    a = Tensor([0.5], trainable=True, precision=D)
    b = Tensor([1e-6], trainable=True, precision=D)
    with pytest.raises(EvaluationError) as exc:
        grad_check(lambda: (a * b.log()).sum(), [a, b], eps=1e-5)
    assert exc.value.param_index == 1


def test_single_precision_is_rejected():
    x = Tensor([1.0], trainable=True)
    with pytest.raises(ConfigError, match="double precision"):
        grad_check(lambda: (x * x).sum(), [x])


def test_report_pass_threshold():
    assert GradReport("op", 5e-5, 1e-9, 3).passed()
    assert not GradReport("op", 2e-4, 1e-9, 3).passed()


def test_entry_on_relu_kink_is_skipped():
    x = Tensor([1e-6, 2.0], trainable=True, precision=D)
    report = grad_check(lambda: F.relu(x).sum(), [x], eps=1e-5, op_name="relu")
    assert report.n_kinks_skipped == 1
    assert report.n_params_checked == 1
    assert report.max_rel_err <= 1e-8


def test_smooth_function_has_no_kinks():
    x = Tensor([0.5, 1.5], trainable=True, precision=D)
    report = grad_check(lambda: F.relu(x).sum(), [x])
    assert report.n_kinks_skipped == 0
    assert report.n_params_checked == 2
