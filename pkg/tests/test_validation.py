import numpy as np
import pytest
from scipy.stats import norm

from clusterstab.kde import THREE_MODE_MIXTURE, EmpiricalKDE
from clusterstab.kernels import KernelSpec, ParameterError
from clusterstab.validation import (
    DeskConfig,
    disagreement_mass,
    level_set_intervals,
    run_suites,
    simulate_xi,
    validate_identity,
    validate_risk,
    validate_smallh,
    validate_variance,
)

EPA = KernelSpec("epanechnikov", 1)


def integral_p_squared(mix):
    w, mu, s = mix.weights, mix.means[:, 0], mix.scales
    return sum(w[i] * w[j] * norm.pdf(mu[i] - mu[j], scale=np.hypot(s[i], s[j]))
               for i in range(w.size) for j in range(w.size))


def test_level_set_intervals_single_point():
    # 0.75/h (1 - t^2) > lam  <=>  |t| < sqrt(1 - lam h / 0.75)
    m = EmpiricalKDE([2.0], EPA, 0.5)
    iv = level_set_intervals(m, 0.6)
    r = 0.5 * np.sqrt(1 - 0.6 * 0.5 / 0.75)
    assert iv.shape == (1, 2)
    assert iv[0] == pytest.approx([2 - r, 2 + r], abs=1e-12)


def test_level_set_intervals_match_grid(mixture600):
    m = EmpiricalKDE(mixture600[:100], EPA, 0.4)
    iv = level_set_intervals(m, 0.1)
    u = np.linspace(-5, 12, 200001)
    inside = m.evaluate(u) > 0.1
    from_iv = np.zeros_like(inside)
    for a, b in iv:
        from_iv |= (u > a) & (u < b)
    assert np.mean(inside != from_iv) < 1e-4
    assert np.all(iv[1:, 0] > iv[:-1, 1])


def test_level_set_intervals_needs_compact_1d():
    with pytest.raises(ParameterError):
        level_set_intervals(EmpiricalKDE([0.0], KernelSpec("gaussian", 1), 1.0), 0.1)


def test_disagreement_mass_matches_quadrature():
    rng = np.random.default_rng(3)
    mx = EmpiricalKDE(rng.normal(size=8) * 2, EPA, 0.6)
    my = EmpiricalKDE(rng.normal(size=8) * 2, EPA, 0.6)
    u = np.linspace(-10, 10, 400001)
    diff = (mx.evaluate(u) > 0.12) != (my.evaluate(u) > 0.12)
    quad = np.sum(THREE_MODE_MIXTURE.evaluate(u)[diff]) * (u[1] - u[0])
    assert disagreement_mass(mx, my, 0.12, THREE_MODE_MIXTURE) == pytest.approx(quad, abs=1e-5)


def test_simulate_xi_is_seeded():
    a = simulate_xi(THREE_MODE_MIXTURE, EPA, 8, 0.6, 0.12, 20, 1)
    b = simulate_xi(THREE_MODE_MIXTURE, EPA, 8, 0.6, 0.12, 20, 1)
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a <= 1))


def test_identity_on_reduced_config():
    r = validate_identity(DeskConfig(reps=400))
    assert r["passed"], r


def test_variance_on_reduced_config():
    r = validate_variance(DeskConfig(reps=400), h_values=(0.6, 2.0))
    assert r["passed"], r


def test_smallh_ratio_equals_closed_form():
    # with every ball isolated, xi(h)/h -> 4 n int p^2
    n = 20
    r = validate_smallh(n=n, reps=100, halvings=2)
    assert r["passed"]
    assert r["ratio"][-1] == pytest.approx(4 * n * integral_p_squared(THREE_MODE_MIXTURE), rel=0.05)


def test_smallh_ball_identity_spherical():
    r = validate_smallh(n=10, reps=50, halvings=1, family="spherical")
    assert r["ball_identity_checked"] and r["ball_identity"]


def test_run_suites_skips_risk_by_default():
    r = run_suites("risk")
    assert r["skipped"] == ["risk"] and r["suites"] == []
    with pytest.raises(ParameterError):
        run_suites("nope")


@pytest.mark.extended
def test_risk_argmin_moves_left():
    r = validate_risk(ns=(200, 3200), reps=50)
    assert r["rows"][1]["argmin_h"] < r["rows"][0]["argmin_h"]
