"""Plug-in level sets, indexed by density level or by probability content."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import make_rng
from .kde import EmpiricalKDE, as_points, eval_density
from .kernels import ParameterError

__all__ = [
    "LevelSetQuery",
    "SampleLevelSet",
    "GridIntegrator",
    "MonteCarloIntegrator",
    "LossEstimate",
    "membership",
    "empirical_level",
    "estimate_lambda_alpha",
    "content_level_set",
    "symmetric_difference_loss",
]


@dataclass(frozen=True)
class LevelSetQuery:
    """Either a density level ``lam`` or a probability content ``alpha``."""

    lam: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if (self.lam is None) == (self.alpha is None):
            raise ParameterError("give exactly one of a level or a probability content")
        if self.lam is not None and not self.lam >= 0:
            raise ParameterError(f"level must be nonnegative, got {self.lam}")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ParameterError(f"probability content must lie in (0, 1), got {self.alpha}")

    @classmethod
    def by_level(cls, lam: float) -> "LevelSetQuery":
        return cls(lam=lam)

    @classmethod
    def by_content(cls, alpha: float) -> "LevelSetQuery":
        return cls(alpha=alpha)


@dataclass(frozen=True, eq=False)
class SampleLevelSet:
    """Level set represented by membership of a finite set of points."""

    model: object
    threshold: float
    member_mask: np.ndarray
    eval_points: np.ndarray
    density: np.ndarray

    @property
    def members(self) -> np.ndarray:
        return self.eval_points[self.member_mask]

    def to_csv(self, path) -> None:
        """Columns: coordinates, density value, member flag (0/1)."""
        d = self.eval_points.shape[1]
        header = ",".join([f"x{j}" for j in range(d)] + ["density", "member"])
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(f"# meta: threshold={self.threshold!r}\n{header}\n")
            for x, p, m in zip(self.eval_points, self.density, self.member_mask):
                fh.write(",".join(repr(float(v)) for v in x) + f",{float(p)!r},{int(m)}\n")


def membership(model, lam: float, points) -> SampleLevelSet:
    """Members of {u : p(u) > lam} among ``points`` (strict inequality)."""
    if not lam >= 0:
        raise ParameterError(f"level must be nonnegative, got {lam}")
    pts = as_points(points, model.dim)
    dens = eval_density(model, pts)
    return SampleLevelSet(model, float(lam), dens > lam, pts, dens)


def empirical_level(values, alpha: float) -> float:
    """sup{lam : #{v > lam} / n >= alpha} for a finite list of values.

    The supremum is the ceil(n alpha)-th largest value, ties kept.
    """
    if not 0 < alpha < 1:
        raise ParameterError(f"probability content must lie in (0, 1), got {alpha}")
    v = np.sort(np.asarray(values, dtype=float))[::-1]
    if v.size == 0:
        raise ParameterError("need at least one density value")
    # round away representation noise such as 200 * 0.95 = 190.00000000000003
    k = max(1, math.ceil(round(v.size * alpha, 9)))
    return float(v[k - 1])


def estimate_lambda_alpha(model: EmpiricalKDE, alpha: float) -> float:
    """Level whose estimated set holds a fraction ``alpha`` of the model's own sample."""
    if not isinstance(model, EmpiricalKDE):
        raise ParameterError("the content level is estimated from an empirical KDE and its own sample")
    return empirical_level(model.evaluate(model.points), alpha)


def content_level_set(model: EmpiricalKDE, alpha: float, eval_points) -> SampleLevelSet:
    """The estimated set holding probability content ``alpha``, on ``eval_points``."""
    return membership(model, estimate_lambda_alpha(model, alpha), eval_points)


@dataclass(frozen=True)
class GridIntegrator:
    """Midpoint rule over the oracle's bounding box."""

    cells_per_axis: int | None = None
    n_sd: float = 8.0


@dataclass(frozen=True)
class MonteCarloIntegrator:
    """Average of the set-difference indicator over draws from the oracle."""

    n_draws: int = 1_000_000
    seed: int = 0


@dataclass(frozen=True)
class LossEstimate:
    """P(L delta L_hat) with its numerical accuracy.

    ``error`` is the cell width for grid quadrature and the standard error
    for Monte Carlo.
    """

    value: float
    error: float
    method: str


def _grid(true_model, integrator: GridIntegrator):
    d = true_model.dim
    cells = integrator.cells_per_axis or (2000 if d == 1 else 400)
    lo, hi = true_model.bounding_box(integrator.n_sd)
    axes = [lo[j] + (np.arange(cells) + 0.5) * (hi[j] - lo[j]) / cells for j in range(d)]
    width = (hi - lo) / cells
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    return pts, float(np.prod(width)), float(np.max(width))


def symmetric_difference_loss(true_model, est, query: LevelSetQuery, integrator=None) -> LossEstimate:
    """P(L Delta L_hat) where L is the level set of ``true_model``.

    P is the true distribution: ``true_model`` itself for a mixture, its
    base mixture for a :class:`SmoothedOracle`.

    ``est`` is a :class:`SampleLevelSet` or a ``(model, threshold)`` pair.
    For a content query the true threshold is the oracle's level for that
    content; the estimate's threshold is used as given.
    """
    if isinstance(est, SampleLevelSet):
        est_model, est_level = est.model, est.threshold
    else:
        est_model, est_level = est
    if query.lam is not None:
        true_level = query.lam
    else:
        from .oracle import true_lambda_alpha

        true_level = true_lambda_alpha(true_model, query.alpha)
    # a smoothed oracle defines the true set, but mass is still taken under P
    measure = getattr(true_model, "base", true_model)
    if integrator is None:
        integrator = GridIntegrator() if true_model.dim <= 2 else MonteCarloIntegrator()
    if isinstance(integrator, GridIntegrator):
        pts, vol, width = _grid(true_model, integrator)
        p = eval_density(true_model, pts)
        diff = (p > true_level) != (eval_density(est_model, pts) > est_level)
        weight = p if measure is true_model else eval_density(measure, pts)
        return LossEstimate(float(np.sum(weight[diff]) * vol), width, "grid")
    rng = make_rng(integrator.seed)
    pts = measure.sample(rng, integrator.n_draws)
    diff = (eval_density(true_model, pts) > true_level) != (eval_density(est_model, pts) > est_level)
    m = diff.mean()
    return LossEstimate(float(m), float(np.sqrt(m * (1 - m) / diff.size)), "monte-carlo")
