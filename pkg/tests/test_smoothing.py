import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import policyconv as pc
from policyconv.smoothing import (
    ActionTree,
    build_tree,
    full_tree_depth,
    gaussian_kernel_value,
    pairwise_sq_distances,
)
from policyconv.harness import TOY_MU, TOY_PI, toy_components


def _random_instance(seed, n_actions=None, d=3):
    rng = np.random.default_rng(seed)
    n = n_actions or int(rng.integers(4, 40))
    emb = pc.EmbeddingTable(rng.standard_normal((n, d)))
    raw = rng.random(n)
    return emb, raw / raw.sum()


# -- tree construction -------------------------------------------------------

def brute_force_best_split(points):
    """Exhaustively minimize within-cluster sum of squared distances over
    all bipartitions (test oracle for the bisecting split)."""
    n = len(points)
    best, best_cost = None, np.inf
    for mask in range(1, 2 ** (n - 1)):
        left = [i for i in range(n) if (mask >> i) & 1]
        right = [i for i in range(n) if not (mask >> i) & 1]
        cost = 0.0
        for side in (left, right):
            if side:
                centroid = points[side].mean(axis=0)
                cost += float(((points[side] - centroid) ** 2).sum())
        if cost < best_cost:
            best_cost, best = cost, (frozenset(left), frozenset(right))
    return best


def test_build_tree_matches_exhaustive_split():
    emb = pc.EmbeddingTable([[0.0], [1.0], [10.0], [11.0]])
    tree = build_tree(emb, depth=3, seed=0)
    got = {frozenset(c) for c in (tuple(x) for x in tree.clusters(2))}
    best = brute_force_best_split(emb.vectors)
    assert got == {best[0], best[1]}
    assert got == {frozenset({0, 1}), frozenset({2, 3})}


def test_build_tree_depth_one_is_singletons():
    emb = pc.EmbeddingTable(np.random.default_rng(0).standard_normal((6, 2)))
    tree = build_tree(emb, depth=1, seed=0)
    assert tree.depth == 1
    assert [list(c) for c in tree.clusters(1)] == [[i] for i in range(6)]


def test_build_tree_toy_partitions():
    _, tree, _, _, _ = toy_components()
    assert [set(c) for c in tree.clusters(3)] == [{0, 1, 2, 3}]
    assert {frozenset(c) for c in tree.clusters(2)} == {
        frozenset({0, 1}),
        frozenset({2, 3}),
    }
    assert all(len(c) == 1 for c in tree.clusters(1))


def test_build_tree_depth_too_large():
    emb = pc.EmbeddingTable(np.zeros((4, 1)))
    with pytest.raises(ValueError):
        build_tree(emb, depth=4)


def test_build_tree_deterministic_given_seed():
    emb = pc.EmbeddingTable(np.random.default_rng(5).standard_normal((32, 4)))
    t1 = build_tree(emb, depth=5, seed=9)
    t2 = build_tree(emb, depth=5, seed=9)
    assert np.array_equal(t1.labels, t2.labels)


def test_tree_nestedness():
    emb = pc.EmbeddingTable(np.random.default_rng(3).standard_normal((30, 3)))
    tree = build_tree(emb, depth=full_tree_depth(30), seed=1)
    for level in range(2, tree.depth + 1):
        coarse = tree.level_labels(level)
        fine = tree.level_labels(level - 1)
        for c in np.unique(fine):
            assert len(np.unique(coarse[fine == c])) == 1


def test_tree_serialization_roundtrip():
    emb = pc.EmbeddingTable(np.random.default_rng(4).standard_normal((10, 2)))
    tree = build_tree(emb, depth=3, seed=2)
    text = tree.serialize()
    back = ActionTree.deserialize(text)
    for level in range(1, tree.depth + 1):
        got = {frozenset(c) for c in map(tuple, back.clusters(level))}
        want = {frozenset(c) for c in map(tuple, tree.clusters(level))}
        assert got == want


def test_full_tree_depth_bound():
    for n in (2, 3, 4, 500, 2000):
        assert 2 ** (full_tree_depth(n) - 1) <= n < 2 ** full_tree_depth(n)


# -- similarity rows ---------------------------------------------------------

def test_tree_similarity_row_toy():
    emb, tree, _, _, _ = toy_components()
    sm = pc.TreeSmoother(2, tree=tree).fit(emb)
    np.testing.assert_allclose(sm.similarity_row(0), [0.5, 0.5, 0.0, 0.0])


def test_knn_similarity_row():
    emb = pc.EmbeddingTable([[0.0], [1.0], [10.0]])
    sm = pc.KNNSmoother(2).fit(emb)
    np.testing.assert_allclose(sm.similarity_row(0), [0.5, 0.5, 0.0])


def test_ball_similarity_row():
    emb = pc.EmbeddingTable([[0.0], [1.0], [10.0]])
    sm = pc.BallSmoother(2.0).fit(emb)
    np.testing.assert_allclose(sm.similarity_row(0), [0.5, 0.5, 0.0])


def test_kernel_self_similarity_closed_form():
    emb = pc.EmbeddingTable([[0.0], [1.0]])
    sm = pc.KernelSmoother(1.0).fit(emb)
    assert sm.similarity_row(0)[0] == pytest.approx(1.0 / math.sqrt(2 * math.pi))
    assert gaussian_kernel_value([0.0], 1.0) == pytest.approx(0.3989422804014327)


def test_kernel_row_matches_closed_form_product():
    rng = np.random.default_rng(8)
    emb = pc.EmbeddingTable(rng.standard_normal((6, 3)))
    sm = pc.KernelSmoother(0.7).fit(emb)
    row = sm.similarity_row(2)
    for a in range(6):
        want = gaussian_kernel_value(emb[2] - emb[a], 0.7)
        assert row[a] == pytest.approx(want, rel=1e-12)


def test_ball_zero_radius_rejected():
    with pytest.raises(ValueError):
        pc.BallSmoother(0.0)


def test_knn_tau_bounds():
    emb = pc.EmbeddingTable(np.zeros((3, 1)))
    with pytest.raises(ValueError):
        pc.KNNSmoother(4).fit(emb)
    with pytest.raises(ValueError):
        pc.KNNSmoother(0)


# -- convolution -------------------------------------------------------------

def test_convolve_toy_level2():
    emb, tree, _, _, _ = toy_components()
    sm = pc.TreeSmoother(2, tree=tree).fit(emb)
    np.testing.assert_allclose(sm.convolve(TOY_PI), [0.1, 0.1, 0.4, 0.4])
    np.testing.assert_allclose(sm.convolve(TOY_MU), [0.2, 0.2, 0.3, 0.3])


def test_convolve_toy_level3_uniform():
    emb, tree, _, _, _ = toy_components()
    sm = pc.TreeSmoother(3, tree=tree).fit(emb)
    np.testing.assert_allclose(sm.convolve(TOY_MU), [0.25] * 4)
    for a in range(4):
        assert sm.convolve_at(TOY_PI, a) == pytest.approx(0.25)


def test_convolve_identity_level1():
    emb, tree, _, _, _ = toy_components()
    sm = pc.TreeSmoother(1, tree=tree).fit(emb)
    np.testing.assert_array_equal(sm.convolve(TOY_PI), TOY_PI)
    assert sm.is_identity()


@pytest.mark.parametrize("kind,tau", [("tree", 3), ("knn", 4), ("ball", 1.5)])
def test_row_stochastic_smoothers(kind, tau):
    emb, _ = _random_instance(11, n_actions=25)
    sm = pc.make_smoother(kind, tau).fit(emb)
    for a in range(25):
        assert sm.similarity_row(a).sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind,tau", [("tree", 2), ("tree", 4), ("knn", 3), ("ball", 2.0)])
def test_uniform_fixed_point(kind, tau):
    emb, _ = _random_instance(12, n_actions=20)
    sm = pc.make_smoother(kind, tau).fit(emb)
    uniform = np.full(20, 1 / 20)
    np.testing.assert_allclose(sm.convolve(uniform), uniform, atol=1e-12)


def test_tree_mass_conservation():
    emb, policy = _random_instance(13, n_actions=24)
    tree = build_tree(emb, full_tree_depth(24), seed=0)
    for tau in range(1, tree.depth + 1):
        sm = pc.TreeSmoother(tau, tree=tree).fit(emb)
        assert sm.convolve(policy).sum() == pytest.approx(1.0, abs=1e-9)


def test_identity_limits():
    emb, policy = _random_instance(14, n_actions=15)
    d2 = pairwise_sq_distances(emb)
    min_nonzero = d2[d2 > 0].min()
    for sm in (
        pc.TreeSmoother(1).fit(emb),
        pc.KNNSmoother(1).fit(emb),
        pc.BallSmoother(min_nonzero * 0.5).fit(emb),
    ):
        np.testing.assert_array_equal(sm.convolve(policy), policy)


def test_convolve_bounds_within_policy_range():
    emb, policy = _random_instance(15, n_actions=18)
    for sm in (pc.TreeSmoother(3).fit(emb), pc.KNNSmoother(5).fit(emb), pc.BallSmoother(1.0).fit(emb)):
        out = sm.convolve(policy)
        assert np.all(out >= policy.min() - 1e-12)
        assert np.all(out <= policy.max() + 1e-12)


def test_convolve_matches_similarity_rows():
    emb, policy = _random_instance(16, n_actions=12)
    for kind, tau in (("tree", 2), ("knn", 3), ("ball", 2.0), ("kernel", 0.8)):
        sm = pc.make_smoother(kind, tau).fit(emb)
        for a in range(12):
            want = float(policy @ sm.similarity_row(a))
            assert sm.convolve_at(policy, a) == pytest.approx(want, rel=1e-12)
            assert sm.convolve(policy)[a] == pytest.approx(want, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=2, max_value=12))
def test_row_stochasticity_property(seed, tau):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(tau, 2 * tau + 20))
    emb = pc.EmbeddingTable(rng.standard_normal((n, 2)))
    sm = pc.KNNSmoother(tau).fit(emb)
    sums = [sm.similarity_row(a).sum() for a in range(n)]
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)
