import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterstab.clustertree import (
    UnionFind,
    build_tree,
    connected_components,
    detect_stable_levels,
    grid_tree,
)
from clusterstab.kde import THREE_MODE_MIXTURE, EmpiricalKDE, OracleMixture
from clusterstab.kernels import KernelSpec, ParameterError
from clusterstab.oracle import level_set_mass

EPA = KernelSpec("epanechnikov", 1)


def test_union_find():
    uf = UnionFind(5)
    assert uf.union(0, 1)
    assert uf.union(3, 4)
    assert not uf.union(1, 0)
    assert uf.find(0) == uf.find(1) != uf.find(3)
    uf.union(1, 4)
    assert len({uf.find(i) for i in range(5)}) == 2


def test_components_1d_chain():
    pts = np.array([0.0, 0.4, 0.8, 3.0, 3.3, 10.0])
    comp = connected_components(pts, 0.5)
    assert comp.n_components == 3
    assert comp.labels.tolist() == [0, 0, 0, 1, 1, 2]


def test_components_respect_mask():
    pts = np.array([0.0, 0.4, 0.8])
    comp = connected_components(pts, 0.5, mask=[True, False, True])
    assert comp.n_components == 2
    assert comp.labels.tolist() == [0, -1, 1]


def test_components_2d_square_lattice():
    g = np.arange(5.0)
    xx, yy = np.meshgrid(g, g)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    assert connected_components(pts, 1.0).n_components == 1
    assert connected_components(pts, 0.9).n_components == 25


def test_components_errors():
    with pytest.raises(ParameterError):
        connected_components([0.0, 1.0], 0.0)
    assert connected_components([0.0], 1.0, mask=[False]).n_components == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(0.1, 5.0))
def test_components_match_sorted_gaps(xs, r):
    x = np.array(xs)
    comp = connected_components(x, r)
    gaps = np.diff(np.sort(x))
    assert comp.n_components == 1 + int(np.sum(gaps > r))


@pytest.fixture(scope="module")
def oracle_tree():
    return grid_tree(THREE_MODE_MIXTURE, n_levels=1024)


def test_oracle_tree_topology(oracle_tree):
    assert len(oracle_tree.leaves) == 3
    assert len(oracle_tree.splits) == 2
    assert oracle_tree.check_nesting()


def test_oracle_split_levels_are_the_valley_heights(oracle_tree):
    # splits happen at the two local minima of the mixture density
    u = np.linspace(-2, 9, 200001)
    p = THREE_MODE_MIXTURE.evaluate(u)
    interior = np.flatnonzero((p[1:-1] < p[:-2]) & (p[1:-1] < p[2:])) + 1
    valleys = np.sort(p[interior])
    step = oracle_tree.lambda_grid[1] - oracle_tree.lambda_grid[0]
    assert np.allclose(oracle_tree.split_levels(), valleys, atol=step)


def test_oracle_split_contents(oracle_tree):
    expected = [level_set_mass(THREE_MODE_MIXTURE, lam) for lam in oracle_tree.split_levels()]
    assert oracle_tree.split_contents() == pytest.approx(expected, abs=2e-3)


def test_single_gaussian_has_one_leaf():
    tree = grid_tree(OracleMixture([1.0], [0.0], [1.0]), n_levels=200)
    assert len(tree.leaves) == 1
    assert tree.splits == []


def test_tree_json_has_both_labels(oracle_tree):
    d = json.loads(oracle_tree.to_json())
    assert d["n_leaves"] == 3
    node = d["nodes"][0]
    assert {"birth_lambda", "death_lambda", "birth_alpha", "death_alpha"} <= set(node)
    alphas = [n["birth_alpha"] for n in d["nodes"]]
    assert all(0 <= a <= 1 for a in alphas)


def test_build_tree_on_points():
    # two dense clumps joined by a sparse bridge
    x = np.concatenate([np.linspace(-1, 1, 101), np.arange(1.15, 9.0, 0.15), np.linspace(9, 11, 101)])
    m = EmpiricalKDE(x, EPA, 0.3)
    tree = build_tree(m, x, np.linspace(0.005, 0.15, 30), 0.2)
    assert len(tree.roots) == 1
    assert len(tree.leaves) == 2
    assert len(tree.splits) == 1
    root = tree.nodes[tree.roots[0]]
    assert 0.02 < root.death < 0.06
    assert tree.check_nesting()


def test_build_tree_rejects_bad_grid():
    m = EmpiricalKDE([0.0], EPA, 1.0)
    with pytest.raises(ParameterError):
        build_tree(m, [0.0], [0.2, 0.1], 1.0)


def test_stable_levels_on_oracle():
    g = np.linspace(-5, 12, 2001)
    step = g[1] - g[0]
    grid = np.arange(0.005, 0.2, 0.002)
    reports = detect_stable_levels(THREE_MODE_MIXTURE, g, None, 0.01, grid, 1.5 * step,
                                   candidates=[0.02, 0.0678, 0.09, 0.25])
    by_lam = {round(r.lam, 4): r for r in reports}
    assert by_lam[0.02].stable and by_lam[0.02].n_components == 1
    assert not by_lam[0.0678].stable and by_lam[0.0678].reason == "count_changed"
    assert by_lam[0.09].stable and by_lam[0.09].n_components == 2
    assert by_lam[0.25].reason == "empty"


def test_stable_levels_requires_fine_grid():
    with pytest.raises(ParameterError):
        detect_stable_levels(THREE_MODE_MIXTURE, [0.0], None, 0.01, [0.0, 0.01], 1.0)


def test_min_content_prunes_small_clusters():
    x = np.concatenate([np.linspace(-1, 1, 200), [20.0]])
    m = EmpiricalKDE(x, EPA, 0.5)
    grid = np.linspace(0.001, 0.2, 20)
    assert len(build_tree(m, x, grid, 0.3).roots) == 2
    pruned = build_tree(m, x, grid, 0.3, min_content=0.01)
    assert len(pruned.roots) == 1 and len(pruned.leaves) == 1
    with pytest.raises(ParameterError):
        build_tree(m, x, grid, 0.3, min_content=1.0)
