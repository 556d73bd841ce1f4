import numpy as np
import pytest

from marsseg.checks import CHECK_NAMES, format_rows, run_gradcheck_suite
from marsseg.gradcheck import finite_diff_check, relative_errors
from marsseg.losses import focal_loss
from marsseg.tensor import Tensor


@pytest.fixture(scope="module")
def suite_rows():
    return run_gradcheck_suite(seed=0, tol=1e-4, only=[n for n in CHECK_NAMES if n != "network"])


def test_suite_passes_at_default_tolerance(suite_rows):
    failed = [r.name for r in suite_rows if not r.passed]
    assert not failed
    assert all(r.max_rel_error <= 1e-4 for r in suite_rows)


def test_suite_fails_at_impossible_tolerance():
    rows = run_gradcheck_suite(seed=0, tol=1e-12, only=["conv2d", "softmax", "focal_loss"])
    assert not any(r.passed for r in rows)


def test_suite_table_is_deterministic():
    only = ["mul", "conv2d_dilated", "psa"]
    first = format_rows(run_gradcheck_suite(seed=3, only=only))
    second = format_rows(run_gradcheck_suite(seed=3, only=only))
    assert first == second
    assert first.splitlines()[0].split()[:2] == ["check", "max_rel_err"]


def test_suite_covers_every_block():
    for name in ("mini_aspp", "psa", "sppm", "combined_loss", "network"):
        assert name in CHECK_NAMES


def test_linear_function_has_zero_error(f64):
    x = Tensor(np.array([0.3, -1.2, 2.0]))
    report = finite_diff_check(lambda t: t.sum(), x)
    assert report.passed and report.max_rel_error == pytest.approx(0.0, abs=1e-9)


def test_focal_two_class_four_pixels(f64, rng):
    logits = Tensor(rng.standard_normal((1, 2, 2, 2)))
    target = np.array([[[0, 1], [1, 0]]])
    report = finite_diff_check(lambda t: focal_loss(t, target, [0.5, 0.5], 2.0), logits)
    assert report.passed, report.max_rel_error


def test_nondeterministic_function_warns(f64):
    calls = iter(range(10**6))
    x = Tensor(np.ones(2))

    def noisy(t):
        return t.sum() + float(next(calls))

    with pytest.warns(RuntimeWarning):
        report = finite_diff_check(noisy, x)
    assert not report.deterministic and not report.passed


def test_relative_error_floor_uses_global_scale():
    # an exact-zero gradient with roundoff noise is judged against the scale
    err = relative_errors(np.array([0.0]), np.array([1e-9]), scale=1.0)
    assert err[0] < 1e-4
    assert relative_errors(np.array([0.0]), np.array([1e-9]))[0] > 1e-4
