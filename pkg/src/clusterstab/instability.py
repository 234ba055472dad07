"""Split-sample instability of level sets, cluster trees and density estimates.

Every statistic compares kernel estimates fitted on two disjoint thirds X
and Y of a sample and, where a set comparison is involved, measures the
disagreement on the held-out third Z.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import make_rng, task_rng
from .kde import BinnedKDE, EmpiricalKDE, as_points, binned_fit
from .kernels import KernelSpec, ParameterError
from .levelset import empirical_level

__all__ = [
    "SplitTriple",
    "InstabilityCurve",
    "Heatmap",
    "Measure",
    "BandwidthChoice",
    "split_three",
    "fit_pair",
    "xi_fixed_lambda",
    "xi_fixed_alpha",
    "xi_curve",
    "xi_alpha_heatmap",
    "tree_instability",
    "gamma_numeric",
    "gamma_importance",
    "gamma_curve",
    "confidence_bands",
    "select_bandwidth",
    "local_maxima",
]

log = logging.getLogger(__name__)


def _threads(threads: int | None) -> int:
    return max(1, threads if threads else (os.cpu_count() or 1))


def _map(fn, items, threads):
    items = list(items)
    if _threads(threads) == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=_threads(threads)) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True, eq=False)
class SplitTriple:
    """Three disjoint, equally sized index sets into a parent sample."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    dropped: int = 0

    @property
    def n(self) -> int:
        return self.x.size

    def swapped(self) -> "SplitTriple":
        return SplitTriple(self.y, self.x, self.z, self.dropped)


def split_three(parent, seed) -> SplitTriple:
    """Random partition of ``parent`` into thirds X, Y, Z.

    When the size is not divisible by three the leftover points (at most
    two, chosen at random) are dropped with a warning.
    """
    pts = as_points(parent)
    size = pts.shape[0]
    if size < 3:
        raise ParameterError(f"need at least 3 points to split, got {size}")
    n = size // 3
    dropped = size - 3 * n
    if dropped:
        warnings.warn(f"sample size {size} is not divisible by 3; dropping {dropped} point(s)", stacklevel=2)
    perm = make_rng(seed).permutation(size)
    return SplitTriple(np.sort(perm[:n]), np.sort(perm[n:2 * n]), np.sort(perm[2 * n:3 * n]), dropped)


def fit_pair(parent, split: SplitTriple, kernel: KernelSpec, h: float, n_bins: int | None = None):
    """KDEs on X and on Y (binned when ``n_bins`` is given)."""
    pts = as_points(parent, kernel.dim)
    if n_bins:
        return binned_fit(pts[split.x], kernel, h, n_bins), binned_fit(pts[split.y], kernel, h, n_bins)
    return EmpiricalKDE(pts[split.x], kernel, h), EmpiricalKDE(pts[split.y], kernel, h)


def _disagreement(px: np.ndarray, py: np.ndarray, lx, ly) -> np.ndarray:
    """Fraction of points where exactly one estimate exceeds its threshold.

    ``lx`` and ``ly`` may be arrays of thresholds; the result then has one
    entry per threshold.
    """
    lx = np.atleast_1d(np.asarray(lx, dtype=float))
    ly = np.atleast_1d(np.asarray(ly, dtype=float))
    return np.mean((px[:, None] > lx[None, :]) != (py[:, None] > ly[None, :]), axis=0)


def xi_fixed_lambda(parent, split: SplitTriple, kernel: KernelSpec, h: float, lam: float,
                    n_bins: int | None = None) -> float:
    """Fraction of Z in the symmetric difference of the two estimated level sets at ``lam``."""
    return float(tree_instability(parent, split, kernel, h, [lam], n_bins=n_bins).values[0])


def _own_levels(model, own_points, alphas) -> np.ndarray:
    vals = np.sort(model.evaluate(own_points))[::-1]
    return np.array([empirical_level(vals, a) for a in np.atleast_1d(alphas)])


def xi_fixed_alpha(parent, split: SplitTriple, kernel: KernelSpec, h: float, alpha: float,
                   n_bins: int | None = None) -> float:
    """Fraction of Z on which the two estimated content-``alpha`` sets disagree.

    Each threshold is estimated from its own sample's density values.
    """
    if not 0 < alpha < 1:
        raise ParameterError(f"probability content must lie in (0, 1), got {alpha}")
    return float(_xi_alpha_values(parent, split, kernel, h, [alpha], n_bins)[0])


def _xi_alpha_values(parent, split, kernel, h, alphas, n_bins=None) -> np.ndarray:
    pts = as_points(parent, kernel.dim)
    mx, my = fit_pair(pts, split, kernel, h, n_bins)
    z = pts[split.z]
    lx = _own_levels(mx, pts[split.x], alphas)
    ly = _own_levels(my, pts[split.y], alphas)
    return _disagreement(mx.evaluate(z), my.evaluate(z), lx, ly)


@dataclass(eq=False)
class InstabilityCurve:
    """Instability values over a grid, with optional pointwise bands.

    ``axis`` names the grid variable (``"h"`` or ``"lambda"``).
    """

    axis: str
    grid: np.ndarray
    values: np.ndarray
    lower: np.ndarray | None = None
    median: np.ndarray | None = None
    upper: np.ndarray | None = None
    n_splits: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape:
            raise ParameterError("grid and values must have the same length")

    @property
    def has_bands(self) -> bool:
        return self.lower is not None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(_meta_line(dict(self.meta, axis=self.axis, n_splits=self.n_splits)))
            fh.write("grid_value,instability,lower,median,upper\n")
            for i, (g, v) in enumerate(zip(self.grid, self.values)):
                band = ("", "", "") if not self.has_bands else (
                    repr(float(self.lower[i])), repr(float(self.median[i])), repr(float(self.upper[i])))
                fh.write(",".join([repr(float(g)), repr(float(v)), *band]) + "\n")

    @classmethod
    def from_csv(cls, path) -> "InstabilityCurve":
        grid, vals, lo, med, up = [], [], [], [], []
        meta = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("# meta:"):
                    meta = json.loads(line[len("# meta:"):])
                    continue
                if line.startswith("#") or line.startswith("grid_value"):
                    continue
                cells = line.split(",")
                grid.append(float(cells[0]))
                vals.append(float(cells[1]))
                if len(cells) >= 5 and cells[2]:
                    lo.append(float(cells[2]))
                    med.append(float(cells[3]))
                    up.append(float(cells[4]))
        if not grid:
            raise ParameterError(f"{path} holds no curve rows")
        bands = len(lo) == len(grid)
        return cls(meta.get("axis", "h"), np.array(grid), np.array(vals),
                   np.array(lo) if bands else None, np.array(med) if bands else None,
                   np.array(up) if bands else None, int(meta.get("n_splits", 1)), meta)

    def to_dict(self) -> dict:
        out = {"axis": self.axis, "grid": self.grid.tolist(), "values": self.values.tolist(),
               "n_splits": self.n_splits, "meta": self.meta}
        if self.has_bands:
            out.update(lower=self.lower.tolist(), median=self.median.tolist(), upper=self.upper.tolist())
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


@dataclass(eq=False)
class Heatmap:
    """Fixed-content instability over an (h, alpha) grid; ``values[i, j]`` is at (h_i, alpha_j)."""

    h_grid: np.ndarray
    alpha_grid: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def argmax(self) -> tuple[float, float, float]:
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.h_grid[i]), float(self.alpha_grid[j]), float(self.values[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(_meta_line(self.meta))
            fh.write("h,alpha,value\n")
            for i, h in enumerate(self.h_grid):
                for j, a in enumerate(self.alpha_grid):
                    fh.write(f"{float(h)!r},{float(a)!r},{float(self.values[i, j])!r}\n")


def _meta_line(meta: dict) -> str:
    return "# meta: " + json.dumps(meta, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return str(obj)


def tree_instability(parent, split: SplitTriple, kernel: KernelSpec, h: float, lambda_grid,
                     n_bins: int | None = None) -> InstabilityCurve:
    """Level-set instability across a grid of levels at one bandwidth.

    Both estimates are fitted once and thresholded at every level.
    """
    grid = np.asarray(lambda_grid, dtype=float).ravel()
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ParameterError("the level grid must be increasing")
    pts = as_points(parent, kernel.dim)
    mx, my = fit_pair(pts, split, kernel, h, n_bins)
    z = pts[split.z]
    vals = _disagreement(mx.evaluate(z), my.evaluate(z), grid, grid)
    return InstabilityCurve("lambda", grid, vals, meta={"h": float(h), "kernel": kernel.family})


def xi_curve(parent, split: SplitTriple, kernel: KernelSpec, h_grid, lam: float | None = None,
             alpha: float | None = None, n_bins: int | None = None, threads: int | None = None) -> InstabilityCurve:
    """Fixed-level (``lam``) or fixed-content (``alpha``) instability over bandwidths."""
    if (lam is None) == (alpha is None):
        raise ParameterError("give exactly one of lam and alpha")
    h_grid = _check_grid(h_grid)
    if lam is not None:
        fn = lambda h: xi_fixed_lambda(parent, split, kernel, h, lam, n_bins)
    else:
        fn = lambda h: xi_fixed_alpha(parent, split, kernel, h, alpha, n_bins)
    vals = _map(fn, h_grid, threads)
    meta = {"measure": "xi_lambda" if lam is not None else "xi_alpha",
            "level": lam if lam is not None else alpha, "kernel": kernel.family}
    return InstabilityCurve("h", h_grid, np.array(vals), meta=meta)


def xi_alpha_heatmap(parent, split: SplitTriple, kernel: KernelSpec, h_grid, alpha_grid,
                     n_bins: int | None = None, threads: int | None = None) -> Heatmap:
    h_grid = _check_grid(h_grid)
    alpha_grid = np.asarray(alpha_grid, dtype=float).ravel()
    if alpha_grid.size == 0 or np.any((alpha_grid <= 0) | (alpha_grid >= 1)):
        raise ParameterError("alpha grid must be nonempty and inside (0, 1)")
    rows = _map(lambda h: _xi_alpha_values(parent, split, kernel, h, alpha_grid, n_bins), h_grid, threads)
    return Heatmap(h_grid, alpha_grid, np.vstack(rows), meta={"kernel": kernel.family})


def _check_grid(h_grid) -> np.ndarray:
    grid = np.asarray(h_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ParameterError("bandwidth grid is empty")
    if np.any(grid <= 0):
        raise ParameterError("bandwidths must be positive")
    return grid


# --- total variation -------------------------------------------------------

def _breakpoints_1d(models) -> np.ndarray:
    pts = np.concatenate([np.concatenate([m.points[:, 0] - m.h, m.points[:, 0] + m.h]) for m in models])
    return np.unique(pts)


def _abs_poly_integral(a: np.ndarray, b: np.ndarray, f) -> np.ndarray:
    """Exact integral of |q| where q is a quadratic (degree <= 2) on each [a, b].

    ``f`` evaluates q at arrays of interior points. The quadratic is
    recovered from three interior Gauss nodes, split at its real roots and
    integrated in closed form piece by piece.
    """
    nodes = np.array([0.1, 0.5, 0.9])
    width = b - a
    s = a[:, None] + width[:, None] * nodes[None, :]
    vals = f(s.ravel()).reshape(s.shape)
    # q(a + width * t) = c0 + c1 t + c2 t^2 via Lagrange on the three nodes
    v = np.linalg.solve(np.vander(nodes, 3, increasing=True), vals.T).T
    c0, c1, c2 = v[:, 0], v[:, 1], v[:, 2]
    cuts = [np.zeros_like(a), np.ones_like(a)]
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = c1 * c1 - 4 * c2 * c0
        sq = np.sqrt(np.where(disc > 0, disc, 0.0))
        quad = np.abs(c2) > 1e-14 * (np.abs(c1) + np.abs(c0) + 1e-300)
        r1 = np.where(quad, (-c1 - sq) / (2 * c2), np.where(c1 != 0, -c0 / c1, 0.0))
        r2 = np.where(quad, (-c1 + sq) / (2 * c2), 0.0)
    for r in (r1, r2):
        cuts.append(np.where(np.isfinite(r) & (r > 0) & (r < 1), r, 0.0))
    t = np.sort(np.column_stack(cuts), axis=1)
    prim = lambda x: c0[:, None] * x + c1[:, None] * x**2 / 2 + c2[:, None] * x**3 / 3
    pieces = np.abs(np.diff(prim(t), axis=1))
    return width * pieces.sum(axis=1)


def gamma_numeric(model_x, model_y, grid_spec=None) -> float:
    """Half the L1 distance between two density estimates, by quadrature.

    For two 1-D empirical KDEs with compact polynomial kernels the
    integrand is piecewise quadratic between the support breakpoints
    X_i +- h, Y_j +- h, and the integral is computed exactly on each piece.
    Otherwise a trapezoid rule runs over the union of the supports padded by
    the kernel radius: ``grid_spec`` is the number of nodes per axis
    (default 20001 in 1-D, 401 in 2-D).
    """
    if model_x.dim != model_y.dim:
        raise ParameterError("the two models live in different dimensions")
    d = model_x.dim
    if d > 2:
        raise ParameterError("numeric total variation is limited to d <= 2; use gamma_importance")
    exact = (
        d == 1 and grid_spec is None
        and all(isinstance(m, EmpiricalKDE) and m.kernel.compact for m in (model_x, model_y))
    )
    if exact:
        b = _breakpoints_1d((model_x, model_y))
        a, c = b[:-1], b[1:]
        keep = c > a
        f = lambda u: model_x.evaluate(u) - model_y.evaluate(u)
        total = _abs_poly_integral(a[keep], c[keep], f).sum()
        return float(np.clip(0.5 * total, 0.0, 1.0))
    lo, hi = _support_box(model_x)
    lo2, hi2 = _support_box(model_y)
    lo, hi = np.minimum(lo, lo2), np.maximum(hi, hi2)
    nodes = int(grid_spec or (20001 if d == 1 else 401))
    axes = [np.linspace(lo[j], hi[j], nodes) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    diff = np.abs(model_x.evaluate(pts) - model_y.evaluate(pts)).reshape(mesh[0].shape)
    integral = diff
    for j in reversed(range(d)):
        integral = np.trapezoid(integral, axes[j], axis=j) if hasattr(np, "trapezoid") else np.trapz(integral, axes[j], axis=j)
    return float(0.5 * integral)


def _support_box(model):
    if isinstance(model, BinnedKDE):
        return np.array([a[0] for a in model.axes]), np.array([a[-1] for a in model.axes])
    pad = model.h * model.kernel.axis_radius
    return model.points.min(axis=0) - pad, model.points.max(axis=0) + pad


def gamma_importance(x, y, kernel: KernelSpec, h: float, n_draws: int, seed) -> float:
    """Importance-sampling estimate of the total variation instability.

    Draws U_i from the equal mixture g of the two estimates (pick X or Y by
    a fair coin, pick a point uniformly, add h W with W ~ K) and averages
    |p_X(U) - p_Y(U)| / (p_X(U) + p_Y(U)).
    """
    if int(n_draws) != n_draws or n_draws < 1:
        raise ParameterError("the number of draws must be a positive integer")
    xs = as_points(x, kernel.dim)
    ys = as_points(y, kernel.dim)
    mx, my = EmpiricalKDE(xs, kernel, h), EmpiricalKDE(ys, kernel, h)
    rng = make_rng(seed)
    n_draws = int(n_draws)
    coin = rng.random(n_draws) < 0.5
    ix = rng.integers(0, xs.shape[0], size=n_draws)
    iy = rng.integers(0, ys.shape[0], size=n_draws)
    centers = np.where(coin[:, None], xs[ix], ys[iy])
    u = centers + mx.h * kernel.sample(rng, n_draws)
    px, py = mx.evaluate(u), my.evaluate(u)
    denom = px + py
    # each draw sits inside the support of the estimate it was drawn from
    assert np.all(denom > 0), "importance draw fell outside both supports"
    return float(np.mean(np.abs(px - py) / denom))


def gamma_curve(parent, split: SplitTriple, kernel: KernelSpec, h_grid, method: str = "numeric",
                n_draws: int = 10_000, seed=0, n_bins: int | None = None,
                threads: int | None = None) -> InstabilityCurve:
    """Total variation instability over bandwidths."""
    h_grid = _check_grid(h_grid)
    pts = as_points(parent, kernel.dim)
    if method == "numeric":
        fn = lambda h: gamma_numeric(*fit_pair(pts, split, kernel, h, n_bins))
        vals = _map(fn, h_grid, threads)
    elif method == "importance":
        vals = _map(
            lambda ih: gamma_importance(pts[split.x], pts[split.y], kernel, ih[1], n_draws, task_rng(seed, ih[0])),
            enumerate(h_grid), threads,
        )
    else:
        raise ParameterError(f"unknown method {method!r}; expected 'numeric' or 'importance'")
    meta = {"measure": "gamma", "method": method, "kernel": kernel.family}
    return InstabilityCurve("h", h_grid, np.array(vals), meta=meta)


# --- repeated splits and selection -----------------------------------------

@dataclass(frozen=True)
class Measure:
    """Which instability to band: ``xi_lambda`` (level), ``xi_alpha`` (content) or ``gamma``."""

    kind: str
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("xi_lambda", "xi_alpha", "gamma"):
            raise ParameterError(f"unknown measure {self.kind!r}")
        if self.kind != "gamma" and self.value is None:
            raise ParameterError(f"{self.kind} needs a level or content value")

    def curve(self, parent, split, kernel, h_grid, n_bins=None, seed=0) -> np.ndarray:
        if self.kind == "xi_lambda":
            return xi_curve(parent, split, kernel, h_grid, lam=self.value, n_bins=n_bins, threads=1).values
        if self.kind == "xi_alpha":
            return xi_curve(parent, split, kernel, h_grid, alpha=self.value, n_bins=n_bins, threads=1).values
        return gamma_curve(parent, split, kernel, h_grid, n_bins=n_bins, threads=1, seed=seed).values


def confidence_bands(parent, measure: Measure, kernel: KernelSpec, h_grid, n_splits: int,
                     level: float = 0.95, seed=0, n_bins: int | None = None,
                     threads: int | None = None) -> InstabilityCurve:
    """Pointwise quantile bands of an instability curve over repeated random splits.

    Split ``s`` uses its own stream derived from (seed, s), so the result is
    the same for any thread count. ``values`` holds the median curve.
    """
    if int(n_splits) != n_splits or n_splits < 1:
        raise ParameterError("n_splits must be a positive integer")
    if not 0 < level < 1:
        raise ParameterError("level must lie in (0, 1)")
    h_grid = _check_grid(h_grid)
    pts = as_points(parent, kernel.dim)
    if pts.shape[0] % 3:
        warnings.warn(f"sample size {pts.shape[0]} is not divisible by 3; extra points are dropped per split")

    def one(s):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            split = split_three(pts, task_rng(seed, s))
        return measure.curve(pts, split, kernel, h_grid, n_bins, seed=task_rng(seed, s, 1))

    curves = np.vstack(_map(one, range(int(n_splits)), threads))
    tail = (1.0 - level) / 2.0
    lower, median, upper = np.quantile(curves, [tail, 0.5, 1.0 - tail], axis=0)
    meta = {"measure": measure.kind, "value": measure.value, "level": level, "seed": seed,
            "kernel": kernel.family, "n_bins": n_bins}
    if n_splits == 1:
        meta["degenerate_bands"] = True
    return InstabilityCurve("h", h_grid, median, lower, median, upper, int(n_splits), meta)


def local_maxima(values) -> list[int]:
    """Indices of interior local maxima.

    A point qualifies if it is >= both neighbours and > at least one of
    them; a plateau that starts at index 0 does not count.
    """
    v = np.asarray(values, dtype=float)
    out = []
    for i in range(1, v.size - 1):
        if v[i] >= v[i - 1] and v[i] >= v[i + 1] and (v[i] > v[i - 1] or v[i] > v[i + 1]):
            if np.all(v[: i + 1] == v[i]):
                continue
            out.append(i)
    return out


@dataclass(frozen=True)
class BandwidthChoice:
    h: float | None
    found: bool
    index: int | None
    rule: str
    beta: float
    argmin_h: float
    min_value: float
    first_local_max: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def select_bandwidth(curve: InstabilityCurve, beta: float, rule: str = "gamma_rule") -> BandwidthChoice:
    """Smallest stable bandwidth on the curve's grid.

    ``gamma_rule``: first h with value <= beta. ``xi_rule``: discard
    everything up to and including the first local maximum, then take the
    first h with value < beta; with no local maximum nothing is discarded.
    """
    if not 0 < beta < 1:
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    v = np.asarray(curve.values, dtype=float)
    if v.size == 0:
        raise ParameterError("empty curve")
    grid = np.asarray(curve.grid, dtype=float)
    k = int(np.argmin(v))
    argmin_h, min_value = float(grid[k]), float(v[k])
    first_max = None
    if rule == "gamma_rule":
        hits = np.flatnonzero(v <= beta)
    elif rule == "xi_rule":
        maxima = local_maxima(v)
        start = maxima[0] + 1 if maxima else 0
        first_max = float(grid[maxima[0]]) if maxima else None
        hits = start + np.flatnonzero(v[start:] < beta)
    else:
        raise ParameterError(f"unknown rule {rule!r}; expected 'xi_rule' or 'gamma_rule'")
    if hits.size == 0:
        return BandwidthChoice(None, False, None, rule, beta, argmin_h, min_value, first_max)
    i = int(hits[0])
    return BandwidthChoice(float(grid[i]), True, i, rule, beta, argmin_h, min_value, first_max)
