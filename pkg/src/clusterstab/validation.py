"""Monte Carlo checks of the instability identities and bounds on a known mixture.

Each ``validate_*`` function returns a JSON-ready report with a boolean
``passed``. Acceptance uses three standard errors throughout.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .data import task_rng
from .kde import THREE_MODE_MIXTURE, EmpiricalKDE, OracleMixture
from .kernels import KernelSpec, ParameterError
from .oracle import pi_h_mc, risk_curve_mc

__all__ = [
    "DeskConfig",
    "simulate_xi",
    "level_set_intervals",
    "disagreement_mass",
    "validate_identity",
    "validate_variance",
    "validate_smallh",
    "validate_risk",
    "SUITES",
    "run_suites",
]


@dataclass(frozen=True)
class DeskConfig:
    """Small setting where the expectation of the instability is cheap to pin down."""

    n: int = 8
    h: float = 0.6
    lam: float = 0.12
    family: str = "epanechnikov"
    reps: int = 2000
    seed: int = 20240601

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(self.family, 1)


def _triple(base: OracleMixture, n: int, seed, r: int):
    rng = task_rng(seed, r)
    return base.sample(rng, n), base.sample(rng, n), base.sample(rng, n)


def simulate_xi(base: OracleMixture, kernel: KernelSpec, n: int, h: float, lam: float, reps: int, seed) -> np.ndarray:
    """Instability of ``reps`` independent (X, Y, Z) triples of size ``n``."""
    out = np.empty(reps)
    for r in range(reps):
        x, y, z = _triple(base, n, seed, r)
        px = EmpiricalKDE(x, kernel, h).evaluate(z)
        py = EmpiricalKDE(y, kernel, h).evaluate(z)
        out[r] = np.mean((px > lam) != (py > lam))
    return out


def level_set_intervals(model: EmpiricalKDE, lam: float) -> np.ndarray:
    """Maximal intervals where a 1-D compact-kernel KDE exceeds ``lam``, shape (k, 2)."""
    if model.dim != 1 or not model.kernel.compact:
        raise ParameterError("exact level-set intervals need a 1-D compact kernel")
    x = model.points[:, 0]
    b = np.unique(np.concatenate([x - model.h, x + model.h]))
    a, c = b[:-1], b[1:]
    cuts = [a, c]
    nodes = np.array([0.25, 0.5, 0.75])
    s = a[:, None] + (c - a)[:, None] * nodes[None, :]
    f = (model.evaluate(s.ravel()) - lam).reshape(s.shape)
    coef = np.linalg.solve(np.vander(nodes, 3, increasing=True), f.T).T
    for t in _unit_roots(coef):
        cuts.append(a + (c - a) * t)
    pts = np.unique(np.concatenate(cuts))
    mid = 0.5 * (pts[:-1] + pts[1:])
    inside = model.evaluate(mid) > lam
    lo, hi = pts[:-1][inside], pts[1:][inside]
    if lo.size == 0:
        return np.zeros((0, 2))
    joined = np.flatnonzero(lo[1:] > hi[:-1])
    starts = np.concatenate([[lo[0]], lo[joined + 1]])
    ends = np.concatenate([hi[joined], [hi[-1]]])
    return np.column_stack([starts, ends])


def _unit_roots(coef: np.ndarray):
    """Real roots in (0, 1) of c0 + c1 t + c2 t^2, as two arrays (nan when absent)."""
    c0, c1, c2 = coef[:, 0], coef[:, 1], coef[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = c1 * c1 - 4 * c2 * c0
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        quad = np.abs(c2) > 1e-14 * (np.abs(c0) + np.abs(c1) + 1e-300)
        r1 = np.where(quad, (-c1 - sq) / (2 * c2), -c0 / c1)
        r2 = np.where(quad, (-c1 + sq) / (2 * c2), np.nan)
    return [np.where((r > 0) & (r < 1), r, 0.0) for r in (r1, r2)]


def _interval_mass(intervals: np.ndarray, base: OracleMixture) -> float:
    if intervals.size == 0:
        return 0.0
    return float(np.sum(base.cdf(intervals[:, 1]) - base.cdf(intervals[:, 0])))


def disagreement_mass(model_x: EmpiricalKDE, model_y: EmpiricalKDE, lam: float, base: OracleMixture) -> float:
    """P(L_X Delta L_Y) under the mixture, computed from exact level-set intervals."""
    ix, iy = level_set_intervals(model_x, lam), level_set_intervals(model_y, lam)
    both = _intersect(ix, iy)
    return _interval_mass(ix, base) + _interval_mass(iy, base) - 2.0 * _interval_mass(both, base)


def _intersect(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out, i, j = [], 0, 0
    while i < len(a) and j < len(b):
        lo, hi = max(a[i, 0], b[j, 0]), min(a[i, 1], b[j, 1])
        if lo < hi:
            out.append((lo, hi))
        if a[i, 1] < b[j, 1]:
            i += 1
        else:
            j += 1
    return np.array(out).reshape(-1, 2)


def validate_identity(cfg: DeskConfig = DeskConfig(), base: OracleMixture = THREE_MODE_MIXTURE,
                      grid_points: int = 2001) -> dict:
    """Mean instability vs 2 * int pi (1 - pi) dP.

    The left side averages the instability of independent triples. The
    right side estimates pi on a grid from separate samples, corrects the
    plug-in product for its 1/R bias and integrates against p by the
    trapezoid rule; its standard error is a delete-one jackknife over the
    samples.
    """
    t0 = time.perf_counter()
    kernel = cfg.kernel
    xi = simulate_xi(base, kernel, cfg.n, cfg.h, cfg.lam, cfg.reps, cfg.seed)
    xi_mean = float(xi.mean())
    xi_se = float(xi.std(ddof=1) / math.sqrt(xi.size))

    lo, hi = base.bounding_box(7.0)
    u = np.linspace(lo[0], hi[0], grid_points)
    est = pi_h_mc(base, kernel, cfg.h, cfg.lam, u, cfg.n, cfg.reps, (cfg.seed, 1), keep_indicators=True)
    R = est.reps
    w = np.full(u.size, u[1] - u[0])
    w[[0, -1]] *= 0.5
    w *= base.evaluate(u)
    counts = est.indicators.sum(axis=0).astype(float)

    def integral(c, r):
        # 2 pi (1 - pi) with the unbiased r/(r - 1) correction
        p = c / r
        return float(np.sum(2.0 * p * (1.0 - p) * r / (r - 1.0) * w))

    value = integral(counts, R)
    loo = np.array([integral(counts - est.indicators[r], R - 1) for r in range(R)])
    jk_se = float(math.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))
    combined = math.hypot(xi_se, jk_se)
    z = abs(xi_mean - value) / combined
    return {
        "suite": "identity",
        "config": asdict(cfg),
        "xi_mean": xi_mean,
        "xi_se": xi_se,
        "identity_value": value,
        "identity_se": jk_se,
        "z": z,
        "passed": bool(z <= 3.0),
        "seconds": time.perf_counter() - t0,
    }


def validate_variance(cfg: DeskConfig = DeskConfig(), base: OracleMixture = THREE_MODE_MIXTURE,
                      h_values=(0.3, 0.6, 1.0, 2.0, 4.0)) -> dict:
    """Empirical variance of the instability against xi ((n + 1)/(2n) - xi).

    The standard error of the sample variance is sqrt((m4 - s^4) / N).
    """
    t0 = time.perf_counter()
    rows = []
    for k, h in enumerate(h_values):
        xi = simulate_xi(base, cfg.kernel, cfg.n, h, cfg.lam, cfg.reps, (cfg.seed, 2, k))
        m = float(xi.mean())
        var = float(xi.var(ddof=1))
        m4 = float(np.mean((xi - m) ** 4))
        se = math.sqrt(max(m4 - var**2, 0.0) / xi.size)
        bound = m * ((cfg.n + 1) / (2 * cfg.n) - m)
        rows.append({"h": h, "xi_mean": m, "variance": var, "bound": bound, "variance_se": se,
                     "passed": bool(var <= bound + 3 * se)})
    return {"suite": "variance", "config": asdict(cfg), "rows": rows,
            "passed": all(r["passed"] for r in rows), "seconds": time.perf_counter() - t0}


def validate_smallh(n: int = 50, lam: float = 0.12, reps: int = 400, halvings: int = 4, seed: int = 7,
                    base: OracleMixture = THREE_MODE_MIXTURE, family: str = "epanechnikov", band: float = 4.0) -> dict:
    """Below the minimal spacing the instability is the Z-fraction in 2n tiny balls and scales like h.

    Starting from half the smallest spacing seen across all triples, h is
    halved ``halvings`` times. For every triple and h the instability is
    checked to equal the fraction of Z inside the union of the 2n radius-h
    balls around X and Y; xi(h) is estimated by averaging the exact
    conditional mean P(L_X Delta L_Y) over the same triples at every h.
    """
    t0 = time.perf_counter()
    kernel = KernelSpec(family, 1)
    triples = [_triple(base, n, seed, r) for r in range(reps)]
    spacing = min(float(np.diff(np.sort(np.concatenate([x, y])[:, 0])).min()) for x, y, _ in triples)
    h0 = 0.5 * spacing
    hs = [h0 / 2**k for k in range(halvings + 1)]
    xi_hat, ball_identity = [], True
    for h in hs:
        masses = []
        for x, y, z in triples:
            mx, my = EmpiricalKDE(x, kernel, h), EmpiricalKDE(y, kernel, h)
            px, py = mx.evaluate(z), my.evaluate(z)
            xi = np.mean((px > lam) != (py > lam))
            centers = np.concatenate([x, y])[:, 0]
            in_balls = np.mean(np.min(np.abs(z[:, 0][:, None] - centers[None, :]), axis=1) < h)
            if family == "spherical" and xi != in_balls:
                ball_identity = False
            masses.append(disagreement_mass(mx, my, lam, base))
        xi_hat.append(float(np.mean(masses)))
    ratios = [v / h for v, h in zip(xi_hat, hs)]
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
    return {
        "suite": "smallh", "n": n, "lam": lam, "reps": reps, "kernel": family,
        "h": hs, "xi_hat": xi_hat, "ratio": ratios, "spread": spread,
        "ball_identity_checked": family == "spherical", "ball_identity": ball_identity,
        "passed": bool(spread <= band and ball_identity), "seconds": time.perf_counter() - t0,
    }


def validate_risk(ns=(200, 400, 800, 1600, 3200, 6400), reps: int = 50, lam: float = 0.09,
                  h_grid=None, seed: int = 11, base: OracleMixture = THREE_MODE_MIXTURE,
                  slope_range=(-0.48, -0.18)) -> dict:
    """Log-log slope of the loss-minimizing bandwidth against n / log n."""
    t0 = time.perf_counter()
    kernel = KernelSpec("epanechnikov", 1)
    h_grid = np.geomspace(0.05, 2.5, 48) if h_grid is None else np.asarray(h_grid, dtype=float)
    rows = []
    for i, n in enumerate(ns):
        curve = risk_curve_mc(base, kernel, h_grid, n, reps, (seed, i), lam=lam)
        rows.append({"n": n, "argmin_h": curve.argmin_h, "min_loss": float(curve.mean.min())})
    xs = np.log([r["n"] / math.log(r["n"]) for r in rows])
    ys = np.log([r["argmin_h"] for r in rows])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return {"suite": "risk", "lam": lam, "reps": reps, "rows": rows, "slope": slope,
            "target": -1.0 / 3.0, "slope_range": list(slope_range),
            "passed": bool(slope_range[0] <= slope <= slope_range[1]), "seconds": time.perf_counter() - t0}


SUITES = {
    "identity": validate_identity,
    "variance": validate_variance,
    "smallh": validate_smallh,
    "risk": validate_risk,
}

EXTENDED_ONLY = {"risk"}


def run_suites(name: str = "all", extended: bool = False) -> dict:
    """Run one suite or all of them; the risk suite is skipped unless ``extended``."""
    if name != "all" and name not in SUITES:
        raise ParameterError(f"unknown suite {name!r}; expected one of {sorted(SUITES)} or 'all'")
    names = list(SUITES) if name == "all" else [name]
    reports, skipped = [], []
    for s in names:
        if s in EXTENDED_ONLY and not extended:
            skipped.append(s)
            continue
        reports.append(SUITES[s]())
    return {"suites": reports, "skipped": skipped, "passed": all(r["passed"] for r in reports)}
