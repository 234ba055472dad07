import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from clusterstab.kde import EmpiricalKDE
from clusterstab.kernels import KernelSpec, ParameterError
from clusterstab.instability import (
    InstabilityCurve,
    Measure,
    confidence_bands,
    gamma_curve,
    gamma_importance,
    gamma_numeric,
    local_maxima,
    select_bandwidth,
    split_three,
    tree_instability,
    xi_alpha_heatmap,
    xi_curve,
    xi_fixed_alpha,
    xi_fixed_lambda,
)
from clusterstab.levelset import empirical_level

EPA = KernelSpec("epanechnikov", 1)


@pytest.fixture(scope="module")
def split600(mixture600):
    return split_three(mixture600, 0)


def brute_xi(pts, split, h, lam):
    mx, my = EmpiricalKDE(pts[split.x], EPA, h), EmpiricalKDE(pts[split.y], EPA, h)
    z = pts[split.z]
    return np.mean([(mx.evaluate([u])[0] > lam) != (my.evaluate([u])[0] > lam) for u in z[:, 0]])


def test_split_three_partition(mixture600):
    s = split_three(mixture600, 4)
    allidx = np.concatenate([s.x, s.y, s.z])
    assert s.n == 200 and s.dropped == 0
    assert np.array_equal(np.sort(allidx), np.arange(600))


def test_split_three_drops_with_warning():
    with pytest.warns(UserWarning, match="not divisible"):
        s = split_three(np.arange(11.0), 1)
    assert s.n == 3 and s.dropped == 2
    with pytest.raises(ParameterError):
        split_three([1.0, 2.0], 0)


def test_xi_fixed_lambda_matches_brute_force(mixture600, split600):
    for h, lam in [(0.3, 0.09), (1.0, 0.02), (2.5, 0.1)]:
        assert xi_fixed_lambda(mixture600, split600, EPA, h, lam) == pytest.approx(brute_xi(mixture600, split600, h, lam))


def test_xi_is_symmetric_in_x_and_y(mixture600, split600):
    a = xi_fixed_lambda(mixture600, split600, EPA, 0.4, 0.09)
    b = xi_fixed_lambda(mixture600, split600.swapped(), EPA, 0.4, 0.09)
    assert a == b


def test_xi_fixed_alpha_uses_own_thresholds(mixture600, split600):
    h, alpha = 0.7, 0.4
    pts = mixture600
    mx, my = EmpiricalKDE(pts[split600.x], EPA, h), EmpiricalKDE(pts[split600.y], EPA, h)
    lx = empirical_level(mx.evaluate(pts[split600.x]), alpha)
    ly = empirical_level(my.evaluate(pts[split600.y]), alpha)
    z = pts[split600.z]
    expected = np.mean((mx.evaluate(z) > lx) != (my.evaluate(z) > ly))
    assert xi_fixed_alpha(pts, split600, EPA, h, alpha) == pytest.approx(expected)


def test_tree_instability_vectorized(mixture600, split600):
    grid = np.linspace(0.01, 0.2, 20)
    curve = tree_instability(mixture600, split600, EPA, 0.5, grid)
    loop = [xi_fixed_lambda(mixture600, split600, EPA, 0.5, lam) for lam in grid]
    assert np.allclose(curve.values, loop)
    assert curve.axis == "lambda"


def test_xi_curve_threads_do_not_matter(mixture600, split600):
    grid = np.linspace(0.1, 3, 25)
    a = xi_curve(mixture600, split600, EPA, grid, lam=0.09, threads=1)
    b = xi_curve(mixture600, split600, EPA, grid, lam=0.09, threads=4)
    assert np.array_equal(a.values, b.values)
    with pytest.raises(ParameterError):
        xi_curve(mixture600, split600, EPA, grid, lam=0.09, alpha=0.5)
    with pytest.raises(ParameterError):
        xi_curve(mixture600, split600, EPA, [], lam=0.09)


def test_binned_xi_close_to_exact(mixture600, split600):
    grid = np.linspace(0.2, 3, 15)
    exact = xi_curve(mixture600, split600, EPA, grid, lam=0.05).values
    binned = xi_curve(mixture600, split600, EPA, grid, lam=0.05, n_bins=4000).values
    assert np.max(np.abs(exact - binned)) <= 0.02


def test_heatmap_values_and_csv(mixture600, split600, tmp_path):
    hg, ag = np.array([0.05, 0.5, 3.0]), np.array([0.2, 0.5, 0.8])
    heat = xi_alpha_heatmap(mixture600, split600, EPA, hg, ag)
    assert heat.values.shape == (3, 3)
    assert np.all((heat.values >= 0) & (heat.values <= 1))
    assert heat.values[1, 1] == pytest.approx(xi_fixed_alpha(mixture600, split600, EPA, 0.5, 0.5))
    path = tmp_path / "heat.csv"
    heat.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[1] == "h,alpha,value" and len(lines) == 2 + 9


def test_gamma_gaussian_two_points_closed_form():
    k = KernelSpec("gaussian", 1)
    for d, h in [(0.5, 1.0), (2.0, 0.7)]:
        g = gamma_numeric(EmpiricalKDE([0.0], k, h), EmpiricalKDE([d], k, h))
        assert g == pytest.approx(2 * norm.cdf(d / (2 * h)) - 1, abs=1e-6)


def test_gamma_exact_vs_dense_grid(mixture600, split600):
    mx = EmpiricalKDE(mixture600[split600.x], EPA, 0.6)
    my = EmpiricalKDE(mixture600[split600.y], EPA, 0.6)
    u = np.linspace(-6, 14, 400001)
    dense = 0.5 * np.sum(np.abs(mx.evaluate(u) - my.evaluate(u))) * (u[1] - u[0])
    assert gamma_numeric(mx, my) == pytest.approx(dense, abs=1e-7)


def test_gamma_trivial_cases():
    a = EmpiricalKDE([0.0, 1.0], EPA, 0.3)
    assert gamma_numeric(a, a) == pytest.approx(0.0, abs=1e-15)
    b = EmpiricalKDE([10.0, 11.0], EPA, 0.3)
    assert gamma_numeric(a, b) == pytest.approx(1.0)


def test_gamma_2d_trapezoid():
    k = KernelSpec("product-epanechnikov", 2)
    a = EmpiricalKDE([[0.0, 0.0]], k, 1.0)
    b = EmpiricalKDE([[0.5, 0.0]], k, 1.0)
    # product kernel: the second axis cancels, so this is the 1-D value
    one_d = gamma_numeric(EmpiricalKDE([0.0], EPA, 1.0), EmpiricalKDE([0.5], EPA, 1.0))
    assert gamma_numeric(a, b) == pytest.approx(one_d, abs=2e-3)


def test_gamma_numeric_refuses_3d():
    k = KernelSpec("gaussian", 3)
    a = EmpiricalKDE(np.zeros((2, 3)), k, 1.0)
    with pytest.raises(ParameterError):
        gamma_numeric(a, a)


def test_gamma_importance_agrees(mixture600, split600):
    x, y = mixture600[split600.x], mixture600[split600.y]
    exact = gamma_numeric(EmpiricalKDE(x, EPA, 1.0), EmpiricalKDE(y, EPA, 1.0))
    est = gamma_importance(x, y, EPA, 1.0, 40_000, seed=3)
    assert abs(est - exact) < 3 * np.sqrt(exact * (1 - exact) / 40_000) + 2e-3


def test_gamma_importance_3d():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(90, 3)), rng.normal(size=(90, 3))
    g = gamma_importance(x, y, KernelSpec("gaussian", 3), 0.8, 5000, seed=1)
    assert 0 < g < 1


def test_gamma_curve_endpoints(mixture600, split600):
    curve = gamma_curve(mixture600, split600, EPA, [1e-4, 20.0])
    assert curve.values[0] > 0.99
    assert curve.values[1] < 0.05
    with pytest.raises(ParameterError):
        gamma_curve(mixture600, split600, EPA, [1.0], method="magic")


def test_local_maxima():
    assert local_maxima([0, 1, 0, 2, 2, 1]) == [1, 3, 4]
    assert local_maxima([3, 3, 1, 2, 0]) == [3]
    assert local_maxima([1, 2, 3]) == []


def _curve(values, grid=None):
    grid = np.arange(1, len(values) + 1) * 0.1 if grid is None else grid
    return InstabilityCurve("h", grid, values)


def test_select_gamma_rule():
    c = _curve([1.0, 0.6, 0.3, 0.1, 0.05])
    choice = select_bandwidth(c, 0.3, "gamma_rule")
    assert choice.found and choice.h == pytest.approx(0.3)


def test_select_xi_rule_skips_first_peak():
    c = _curve([0.0, 0.4, 0.2, 0.3, 0.04, 0.0])
    choice = select_bandwidth(c, 0.05, "xi_rule")
    assert choice.h == pytest.approx(0.5)
    assert choice.first_local_max == pytest.approx(0.2)
    # without a local maximum the search starts at the first grid point
    mono = select_bandwidth(_curve([0.5, 0.2, 0.01]), 0.05, "xi_rule")
    assert mono.h == pytest.approx(0.3) and mono.first_local_max is None


def test_select_not_found_reports_argmin():
    choice = select_bandwidth(_curve([0.5, 0.3, 0.4]), 0.1, "gamma_rule")
    assert not choice.found and choice.h is None
    assert choice.argmin_h == pytest.approx(0.2) and choice.min_value == pytest.approx(0.3)
    with pytest.raises(ParameterError):
        select_bandwidth(_curve([0.5]), 1.5)


def test_confidence_bands(mixture600):
    grid = np.linspace(0.3, 3, 8)
    a = confidence_bands(mixture600, Measure("xi_lambda", 0.05), EPA, grid, 6, seed=2, threads=1)
    b = confidence_bands(mixture600, Measure("xi_lambda", 0.05), EPA, grid, 6, seed=2, threads=3)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.upper, b.upper)
    assert np.all(a.lower <= a.median) and np.all(a.median <= a.upper)
    one = confidence_bands(mixture600, Measure("gamma"), EPA, grid, 1, seed=2)
    assert one.meta["degenerate_bands"]
    assert np.array_equal(one.lower, one.upper)
    with pytest.raises(ParameterError):
        Measure("xi_alpha")


def test_curve_csv_round_trip(tmp_path):
    c = InstabilityCurve("h", [0.1, 0.2], [0.5, 0.25], np.array([0.4, 0.2]), np.array([0.5, 0.25]),
                         np.array([0.6, 0.3]), 5, {"measure": "gamma"})
    path = tmp_path / "c.csv"
    c.to_csv(path)
    back = InstabilityCurve.from_csv(path)
    assert back.n_splits == 5 and back.meta["measure"] == "gamma"
    assert np.array_equal(back.values, c.values) and np.array_equal(back.upper, c.upper)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 3.0), st.floats(0.001, 0.2))
def test_xi_in_unit_interval(seed, h, lam):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=30)
    split = split_three(pts, seed)
    v = xi_fixed_lambda(pts, split, EPA, h, lam)
    assert 0.0 <= v <= 1.0
    assert v * split.n == pytest.approx(round(v * split.n))
