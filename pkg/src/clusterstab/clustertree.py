"""Connected components of sample level sets and the cluster tree over a level grid."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .kde import as_points, eval_density
from .kernels import ParameterError

__all__ = [
    "UnionFind",
    "ComponentLabeling",
    "connected_components",
    "TreeNode",
    "ClusterTree",
    "build_tree",
    "grid_tree",
    "StableLevelReport",
    "detect_stable_levels",
]


class UnionFind:
    """Disjoint sets over 0..n-1 with union by size and path halving."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Component label per point; ``-1`` marks points outside the member set."""

    labels: np.ndarray
    n_components: int

    def groups(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == k) for k in range(self.n_components)]


def _edges(points: np.ndarray, radius: float) -> np.ndarray:
    if points.shape[0] < 2:
        return np.zeros((0, 2), dtype=int)
    if points.shape[1] == 1:
        order = np.argsort(points[:, 0], kind="stable")
        gaps = np.diff(points[order, 0])
        close = np.flatnonzero(gaps <= radius)
        return np.column_stack([order[close], order[close + 1]])
    return cKDTree(points).query_pairs(radius, output_type="ndarray")


def connected_components(points, linking_radius: float, mask=None) -> ComponentLabeling:
    """Single-linkage components of the member points.

    Two members share a label iff a chain of members joins them with every
    step at most ``linking_radius`` long. Labels are numbered in order of
    first appearance, so the result does not depend on the union order.
    """
    if not linking_radius > 0:
        raise ParameterError(f"linking radius must be positive, got {linking_radius}")
    pts = as_points(points)
    n = pts.shape[0]
    member = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(member)
    labels = np.full(n, -1, dtype=int)
    if idx.size == 0:
        return ComponentLabeling(labels, 0)
    uf = UnionFind(idx.size)
    for a, b in _edges(pts[idx], linking_radius):
        uf.union(int(a), int(b))
    roots = np.fromiter((uf.find(i) for i in range(idx.size)), dtype=int, count=idx.size)
    _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    labels[idx] = rank[inverse]
    return ComponentLabeling(labels, int(first.size))


@dataclass
class TreeNode:
    """A cluster alive on [birth, death) of the level grid."""

    id: int
    birth: float
    death: float | None
    parent: int | None
    members: np.ndarray
    children: list = field(default_factory=list)
    birth_alpha: float | None = None
    death_alpha: float | None = None


@dataclass(eq=False)
class ClusterTree:
    lambda_grid: np.ndarray
    nodes: list
    roots: list

    @property
    def leaves(self) -> list:
        return [n for n in self.nodes if not n.children]

    @property
    def splits(self) -> list:
        """Nodes that end by dividing into two or more clusters."""
        return [n for n in self.nodes if len(n.children) >= 2]

    def split_levels(self) -> list[float]:
        return sorted(n.death for n in self.splits)

    def split_contents(self) -> list[float]:
        return [n.death_alpha for n in sorted(self.splits, key=lambda n: n.death)]

    def check_nesting(self) -> bool:
        """Any two nodes are nested or disjoint (compared on birth members)."""
        sets = [set(n.members.tolist()) for n in self.nodes]
        for i in range(len(sets)):
            for j in range(i + 1, len(sets)):
                a, b = sets[i], sets[j]
                if not (a <= b or b <= a or not (a & b)):
                    return False
        return True

    def to_dict(self) -> dict:
        return {
            "lambda_grid": [float(v) for v in self.lambda_grid],
            "roots": list(self.roots),
            "n_leaves": len(self.leaves),
            "n_splits": len(self.splits),
            "nodes": [
                {
                    "id": n.id,
                    "birth_lambda": n.birth,
                    "death_lambda": n.death,
                    "birth_alpha": n.birth_alpha,
                    "death_alpha": n.death_alpha,
                    "parent": n.parent,
                    "children": list(n.children),
                    "member_count": int(n.members.size),
                }
                for n in self.nodes
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _content(weights, mask) -> float:
    return float(weights[mask].sum() / weights.sum())


def build_tree(model, points, lambda_grid, linking_radius: float, weights=None,
               min_content: float = 0.0) -> ClusterTree:
    """Cluster tree of the sample level sets of ``model`` on ``points``.

    A component at one grid level continues the node of the component that
    contains it at the previous level; a node with two or more successors
    splits, one with none dies. ``weights`` (default uniform) give each
    point's share of probability and label every node with the content
    alpha of the level set at its birth and death. Components holding less
    than ``min_content`` of the total weight are ignored.
    """
    grid = np.asarray(lambda_grid, dtype=float).ravel()
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ParameterError("the level grid must be nonempty and strictly increasing")
    if not 0 <= min_content < 1:
        raise ParameterError("min_content must lie in [0, 1)")
    pts = as_points(points, model.dim)
    dens = eval_density(model, pts)
    w = np.ones(pts.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    total = float(w.sum())
    nodes: list[TreeNode] = []
    roots: list[int] = []
    prev_owner = np.full(pts.shape[0], -1)  # node id holding each point at the previous level
    for lam in grid:
        mask = dens > lam
        comp = connected_components(pts, linking_radius, mask)
        alpha = _content(w, mask)
        groups = [g for g in comp.groups() if w[g].sum() >= min_content * total]
        owner = np.full(pts.shape[0], -1)
        successors: dict[int, list[int]] = {}
        for k, g in enumerate(groups):
            parent = int(prev_owner[g[0]])
            if parent >= 0:
                successors.setdefault(parent, []).append(k)
            else:
                node = TreeNode(len(nodes), float(lam), None, None, g, birth_alpha=alpha)
                nodes.append(node)
                roots.append(node.id)
                owner[g] = node.id
        for node_id in np.unique(prev_owner[prev_owner >= 0]):
            node = nodes[int(node_id)]
            kids = successors.get(int(node_id), [])
            if len(kids) == 1:
                owner[groups[kids[0]]] = node.id
                continue
            node.death = float(lam)
            node.death_alpha = alpha
            for k in kids:
                child = TreeNode(len(nodes), float(lam), None, node.id, groups[k], birth_alpha=alpha)
                nodes.append(child)
                node.children.append(child.id)
                owner[groups[k]] = child.id
        prev_owner = owner
    return ClusterTree(grid, nodes, roots)


def _eval_grid(model, points_per_axis: int | None):
    d = model.dim
    m = points_per_axis or (4001 if d == 1 else 201)
    if hasattr(model, "bounding_box"):
        lo, hi = model.bounding_box(8.0)
    else:
        pad = model.h * model.kernel.axis_radius
        lo, hi = model.points.min(axis=0) - pad, model.points.max(axis=0) + pad
    axes = [np.linspace(lo[j], hi[j], m) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    step = (hi - lo) / (m - 1)
    return np.column_stack([g.ravel() for g in mesh]), step


def grid_tree(model, n_levels: int = 1024, points_per_axis: int | None = None, lambda_grid=None,
              min_content: float = 0.0) -> ClusterTree:
    """Cluster tree of ``model`` traced on a regular grid over its support.

    Grid nodes are linked to their axis and diagonal neighbours, and each
    node carries density times cell volume as weight, so the alpha labels
    are probability contents under the model itself. The default level
    grid has ``n_levels`` values strictly between 0 and the grid maximum.
    """
    pts, step = _eval_grid(model, points_per_axis)
    dens = eval_density(model, pts)
    if lambda_grid is None:
        if n_levels < 1:
            raise ParameterError("need at least one level")
        lambda_grid = np.linspace(0.0, float(dens.max()), n_levels + 2)[1:-1]
    radius = 1.01 * float(np.sqrt(np.sum(step**2)))
    if model.dim == 1:
        radius = 1.5 * float(step[0])
    return build_tree(model, pts, lambda_grid, radius, weights=dens * float(np.prod(step)),
                      min_content=min_content)


@dataclass(frozen=True)
class StableLevelReport:
    lam: float
    h: float | None
    eps: float
    stable: bool
    reason: str  # "ok", "count_changed", "nesting_violated" or "empty"
    truncated: bool = False
    n_components: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def detect_stable_levels(model, points, h, eps: float, lambda_grid, linking_radius: float,
                         candidates=None) -> list[StableLevelReport]:
    """Check each candidate level for constant component structure on (lam - eps, lam + eps).

    ``lambda_grid`` supplies the levels examined inside each window and must
    step by less than eps / 2. ``candidates`` defaults to the grid itself.
    Windows reaching below 0 or above the largest density value on
    ``points`` are cut there and flagged ``truncated``.
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    grid = np.asarray(lambda_grid, dtype=float).ravel()
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ParameterError("the level grid must be strictly increasing with at least two levels")
    if np.max(np.diff(grid)) >= eps / 2:
        raise ParameterError("the level grid step must be smaller than eps / 2")
    pts = as_points(points, model.dim)
    dens = eval_density(model, pts)
    top = float(dens.max())
    cache: dict[float, np.ndarray] = {}

    def labels_at(lam):
        if lam not in cache:
            cache[lam] = connected_components(pts, linking_radius, dens > lam).labels
        return cache[lam]

    reports = []
    for lam in (grid if candidates is None else np.asarray(candidates, dtype=float).ravel()):
        lam = float(lam)
        truncated = lam - eps < 0 or lam + eps > top
        window = grid[(grid > lam - eps) & (grid < lam + eps) & (grid >= 0)]
        window = np.union1d(window, [lam])
        counts = [int(labels_at(v).max() + 1) for v in window]
        n_here = int(labels_at(lam).max() + 1)
        if lam >= top or min(counts) == 0:
            reports.append(StableLevelReport(lam, h, eps, False, "empty", truncated, n_here))
            continue
        if len(set(counts)) > 1:
            reports.append(StableLevelReport(lam, h, eps, False, "count_changed", truncated, n_here))
            continue
        nested = True
        for lo_lam, hi_lam in zip(window[:-1], window[1:]):
            lo_lab, hi_lab = labels_at(lo_lam), labels_at(hi_lam)
            parents = {int(lo_lab[np.flatnonzero(hi_lab == k)[0]]) for k in range(counts[0])}
            if len(parents) != counts[0]:
                nested = False
                break
        reason = "ok" if nested else "nesting_violated"
        reports.append(StableLevelReport(lam, h, eps, nested, reason, truncated, n_here))
    return reports
