import numpy as np

from src.core.gradcheck import GradReport
from src.tools.gradcheck_suite import CHECKS, SuiteReport, run_suite


def test_every_operation_passes():
    report = run_suite(seed=0)
    assert [r.op_name for r in report.reports] == list(CHECKS)
    assert report.is_healthy, report.table()


def test_individual_checks_are_seed_stable():
    a = CHECKS["gate"](np.random.default_rng(3))
    b = CHECKS["gate"](np.random.default_rng(3))
    assert (a.max_rel_err, a.n_params_checked) == (b.max_rel_err, b.n_params_checked)


def test_failures_are_reported():
    report = SuiteReport([GradReport("good", 1e-9, 1e-12, 4), GradReport("bad", 0.5, 0.1, 4)])
    assert not report.is_healthy
    assert [r.op_name for r in report.failures] == ["bad"]
    table = report.table()
    assert "FAIL" in table and "ok" in table
    assert "Failed: 1" in report.summary()


def test_empty_report_is_not_healthy():
    assert not SuiteReport().is_healthy
