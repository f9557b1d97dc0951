import numpy as np
import pytest

from smac import gradsuite, ops
from smac.gradcheck import gradcheck
from smac.tensor import Tensor, make_node

CASES = {**gradsuite.OP_CASES, **gradsuite.BLOCK_CASES}


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("seed", range(5))
def test_case_passes_central_difference_check(name, seed):
    report = gradsuite.check_case(CASES[name], seed, h=1e-6, tol=1e-4)
    assert report.passed, f"{name} seed {seed}: {report.max_rel_err:.3e} at {report.worst}"


def test_gradcheck_catches_a_wrong_vjp():
    def bad_square(x):
        return make_node(x.data ** 2, (x,), lambda g: (g * x.data,), "bad_square")  # missing 2x

    x = Tensor(np.array([0.7, -1.3]), requires_grad=True)
    report = gradcheck(lambda: ops.sum_all(bad_square(x)), [x])
    assert not report.passed
    assert report.max_rel_err == pytest.approx(0.5)


def test_gradcheck_sampling_limits_checked_entries():
    x = Tensor(np.linspace(-1, 1, 50), requires_grad=True)
    report = gradcheck(lambda: ops.sum_all(ops.mul(x, x)), [x], sample=7)
    assert report.n_checked == 7 and report.passed


def test_suite_covers_every_attention_block():
    expected = {"nl_block", "mutual_attention", "contrast_attention", "mac_block",
                "selective_alpha", "smac_block", "sma_block"}
    assert expected <= set(gradsuite.BLOCK_CASES)


def test_format_table_marks_failures():
    rows = [gradsuite.SuiteRow("x", "op", 4, 5, 0.2, 0.0)]
    assert "FAIL" in gradsuite.format_table(rows)
