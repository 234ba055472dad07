"""Ground-truth quantities for known Gaussian mixtures.

Probability contents of level sets are always taken under the true
distribution P (the mixture), also when the level set is that of the
smoothed density p_h.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .data import task_rng
from .kde import EmpiricalKDE, NumericalError, OracleMixture, SmoothedOracle, as_points
from .kernels import KernelSpec, ParameterError
from .levelset import GridIntegrator, LevelSetQuery, estimate_lambda_alpha, symmetric_difference_loss

__all__ = [
    "TheoryProbe",
    "PiEstimate",
    "RiskCurve",
    "level_set_mass",
    "max_density",
    "true_lambda_alpha",
    "r_band_probability",
    "lipschitz_constant",
    "pi_h_mc",
    "risk_curve_mc",
    "theory_probe",
]


def _base(model) -> OracleMixture:
    if isinstance(model, OracleMixture):
        return model
    if isinstance(model, SmoothedOracle):
        return model.base
    raise ParameterError("oracle quantities need an OracleMixture or SmoothedOracle")


def _scan_grid(model, n_sd: float = 8.0, nodes: int = 20001):
    lo, hi = model.bounding_box(n_sd)
    return np.linspace(lo[0], hi[0], nodes)


def max_density(model) -> float:
    """Largest value of the (smoothed) oracle density."""
    if model.dim == 1:
        g = _scan_grid(model)
        v = model.evaluate(g)
        i = int(np.argmax(v))
        lo, hi = g[max(i - 1, 0)], g[min(i + 1, g.size - 1)]
        fine = np.linspace(lo, hi, 201)
        return float(max(v[i], model.evaluate(fine).max()))
    lo, hi = model.bounding_box(6.0)
    axes = [np.linspace(lo[j], hi[j], 401) for j in range(model.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return float(model.evaluate(np.column_stack([m.ravel() for m in mesh])).max())


def level_set_mass(model, lam: float, measure: OracleMixture | None = None) -> float:
    """P({u : p(u) > lam}) for the oracle density of ``model``.

    In 1-D the crossings of the density with ``lam`` are bracketed on a fine
    scan and refined by Brent's method; the mass is then a sum of CDF
    differences. In 2-D a 400 x 400 midpoint rule is used.
    """
    measure = measure or _base(model)
    if lam < 0:
        return 1.0
    if model.dim == 1:
        g = _scan_grid(model)
        f = model.evaluate(g) - lam
        above = f > 0
        if not above.any():
            return 0.0
        flips = np.flatnonzero(above[1:] != above[:-1])
        fn = lambda x: float(model.evaluate(np.array([x]))[0]) - lam
        roots = [brentq(fn, g[i], g[i + 1], xtol=1e-12) for i in flips]
        edges = np.concatenate([[-np.inf], roots, [np.inf]])
        start_inside = bool(above[0])
        mass = 0.0
        for k in range(edges.size - 1):
            if (k % 2 == 0) == start_inside:
                mass += float(measure.cdf(edges[k + 1]) - measure.cdf(edges[k]))
        return float(np.clip(mass, 0.0, 1.0))
    lo, hi = model.bounding_box(8.0)
    cells = 400
    axes = [lo[j] + (np.arange(cells) + 0.5) * (hi[j] - lo[j]) / cells for j in range(model.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    vol = float(np.prod((hi - lo) / cells))
    inside = model.evaluate(pts) > lam
    return float(np.sum(measure.evaluate(pts)[inside]) * vol)


def true_lambda_alpha(model, alpha: float, tol: float = 1e-6) -> float:
    """Largest level whose set has P-content at least ``alpha``.

    With a :class:`SmoothedOracle` this is the level of p_h, the content
    still measured under P.
    """
    if not 0 < alpha < 1:
        raise ParameterError(f"probability content must lie in (0, 1), got {alpha}")
    top = max_density(model)
    g = lambda lam: level_set_mass(model, lam) - alpha
    if g(0.0) < 0 or g(top) > 0:
        raise NumericalError("content bisection is not bracketed", float(g(0.0)))
    lo, hi = 0.0, top
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def r_band_probability(base, h: float, lam: float, eps: float, kernel: KernelSpec | None = None) -> float:
    """P({u : |p_h(u) - lam| < eps}) under the true distribution."""
    if not eps > 0:
        raise ParameterError("eps must be positive")
    base = _base(base)
    kernel = kernel or KernelSpec("epanechnikov", base.dim)
    model = base if h == 0 else SmoothedOracle(base, kernel, h)
    upper = level_set_mass(model, lam + eps)
    lower = 1.0 if lam - eps < 0 else level_set_mass(model, lam - eps)
    return float(max(lower - upper, 0.0))


def lipschitz_constant(base: OracleMixture) -> float:
    """max |grad p| on a fine grid."""
    if base.dim == 1:
        g = _scan_grid(base, nodes=200001)
        return float(np.max(np.abs(base.derivative(g))))
    lo, hi = base.bounding_box(6.0)
    axes = [np.linspace(lo[j], hi[j], 801) for j in range(base.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    vals = base.evaluate(np.column_stack([m.ravel() for m in mesh])).reshape(mesh[0].shape)
    grads = np.gradient(vals, *axes)
    return float(np.max(np.sqrt(sum(gr**2 for gr in grads))))


@dataclass(eq=False)
class PiEstimate:
    """Monte Carlo estimate of P_X(p_hat(u) > lam) at grid points ``u``."""

    u: np.ndarray
    pi: np.ndarray
    se: np.ndarray
    reps: int
    indicators: np.ndarray | None = field(default=None, repr=False)


def pi_h_mc(base, kernel: KernelSpec, h: float, lam: float, u_grid, n: int, reps: int, seed,
            keep_indicators: bool = False) -> PiEstimate:
    """Frequency of {p_hat_{h,X}(u) > lam} over ``reps`` independent samples of size ``n``.

    Sample ``r`` is drawn from stream (seed, r).
    """
    if reps < 100:
        raise ParameterError("use at least 100 replicates")
    base = _base(base)
    u = as_points(u_grid, base.dim)
    ind = np.empty((reps, u.shape[0]), dtype=bool)
    for r in range(reps):
        x = base.sample(task_rng(seed, r), n)
        ind[r] = EmpiricalKDE(x, kernel, h).evaluate(u) > lam
    pi = ind.mean(axis=0)
    se = np.sqrt(pi * (1 - pi) / reps)
    return PiEstimate(u, pi, se, reps, ind if keep_indicators else None)


@dataclass(eq=False)
class RiskCurve:
    h_grid: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    n: int
    reps: int

    @property
    def argmin_h(self) -> float:
        return float(self.h_grid[int(np.argmin(self.mean))])

    def to_dict(self) -> dict:
        return {"h": self.h_grid.tolist(), "mean_loss": self.mean.tolist(), "se": self.se.tolist(),
                "n": self.n, "reps": self.reps, "argmin_h": self.argmin_h}


def risk_curve_mc(base, kernel: KernelSpec, h_grid, n: int, reps: int, seed, lam: float | None = None,
                  alpha: float | None = None, integrator: GridIntegrator | None = None) -> RiskCurve:
    """Mean symmetric-difference loss of the plug-in level set over fresh samples.

    Each replicate draws one sample and scores it at every bandwidth.
    """
    if reps < 2:
        raise ParameterError("need at least two replicates")
    base = _base(base)
    query = LevelSetQuery(lam=lam, alpha=alpha)
    h_grid = np.asarray(h_grid, dtype=float).ravel()
    integrator = integrator or GridIntegrator()
    true_level = lam if lam is not None else true_lambda_alpha(base, alpha)
    fixed = LevelSetQuery(lam=true_level)
    losses = np.empty((reps, h_grid.size))
    for r in range(reps):
        x = base.sample(task_rng(seed, r), n)
        for j, h in enumerate(h_grid):
            model = EmpiricalKDE(x, kernel, h)
            est_level = lam if query.lam is not None else estimate_lambda_alpha(model, alpha)
            losses[r, j] = symmetric_difference_loss(base, (model, est_level), fixed, integrator).value
    return RiskCurve(h_grid, losses.mean(axis=0), losses.std(axis=0, ddof=1) / np.sqrt(reps), n, reps)


@dataclass(eq=False)
class TheoryProbe:
    """Oracle quantities at one (level or content, h, eps) setting."""

    h: float
    eps: float
    lam: float | None = None
    alpha: float | None = None
    lambda_alpha: float | None = None
    r_h_eps: float | None = None
    pi_h: PiEstimate | None = None
    xi_mc: float | None = None
    xi_se: float | None = None
    loss_mc: float | None = None
    loss_se: float | None = None
    lipschitz: float | None = None
    kernel_moment: float | None = None

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "pi_h"}
        if self.pi_h is not None:
            out["pi_h"] = {"u": self.pi_h.u[:, 0].tolist(), "pi": self.pi_h.pi.tolist(), "se": self.pi_h.se.tolist()}
        return out


def theory_probe(base, kernel: KernelSpec, h: float, eps: float, lam: float | None = None,
                 alpha: float | None = None) -> TheoryProbe:
    """Deterministic oracle quantities; Monte Carlo fields are filled by the validators."""
    base = _base(base)
    if alpha is not None:
        lam_target = true_lambda_alpha(SmoothedOracle(base, kernel, h) if h > 0 else base, alpha)
    else:
        lam_target = lam
    return TheoryProbe(
        h=h, eps=eps, lam=lam, alpha=alpha,
        lambda_alpha=lam_target if alpha is not None else None,
        r_h_eps=r_band_probability(base, h, lam_target, eps, kernel),
        lipschitz=lipschitz_constant(base),
        kernel_moment=kernel.first_moment(),
    )
