import numpy as np
import pytest

from stsg import tensor as T
from stsg.gradcheck import SUITE, check_gradients, format_table, numeric_grad, run_suite
from stsg.tensor import Tensor


@pytest.fixture(scope="module")
def clean_rows():
    return run_suite(seed=0)


def test_suite_passes(clean_rows):
    failing = [(r.block, r.max_rel_err) for r in clean_rows if not r.passed]
    assert failing == []


def test_one_row_per_registered_block(clean_rows):
    assert [r.block for r in clean_rows] == list(SUITE)
    table = format_table(clean_rows).splitlines()
    assert table[0] == "block,max_rel_err,tol,status" and len(table) == len(SUITE) + 1


def test_ffc_row_covers_fft_path(clean_rows):
    ops = next(r.ops for r in clean_rows if r.block == "ffc_block")
    assert {"rfft2", "irfft2"} <= ops


def test_only_subset_reproduces_rows(clean_rows):
    sub = run_suite(seed=0, only={"mhca", "ce_loss"})
    want = {r.block: r.max_rel_err for r in clean_rows}
    assert {r.block: r.max_rel_err for r in sub} == {k: want[k] for k in ("mhca", "ce_loss")}


def test_numeric_grad_quadratic():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    assert numeric_grad(lambda: T.sum_(x * x), x, (1,)) == pytest.approx(-4.0, abs=1e-8)


def test_check_gradients_detects_wrong_rule():
    x = Tensor(np.array([[0.3, -1.2], [2.0, 0.7]]), requires_grad=True)
    fn = lambda: T.sum_(T.tanh(x))  # noqa: E731
    assert check_gradients(fn, [x])[0] < 1e-8
    with T.corrupt_backward("tanh"):
        assert check_gradients(fn, [x])[0] > 0.1


@pytest.mark.slow
def test_mutation_sweep_fails_exactly_the_using_blocks(clean_rows):
    """Corrupting any backward rule fails every block row whose graph uses it and no other.

    The end-to-end row samples 20 entries, so it cannot promise to hit an op used
    by only a few parameters; it must still stay green for ops it never uses.
    """
    ops = sorted(set().union(*(r.ops for r in clean_rows)))
    mismatches = {}
    for op in ops:
        with T.corrupt_backward(op):
            failing = {r.block for r in run_suite(seed=0) if not r.passed}
        expected = {r.block for r in clean_rows if op in r.ops}
        if failing - {"network"} != expected - {"network"} or not failing <= expected:
            mismatches[op] = (sorted(failing), sorted(expected))
    assert mismatches == {}
