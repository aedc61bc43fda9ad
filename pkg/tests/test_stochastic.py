import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochlq.errors import InvalidGridError, ShapeError
from stochlq.stochastic import (
    AdaptedProcess,
    TimeGrid,
    build_chain,
    build_tree,
    conditional_expectation,
    martingale_representation,
    pair_processes,
    pair_terminal,
    process_norm,
)


def test_single_step_tree():
    tree = build_tree(1, 0.0, 1.0)
    assert tree.n_leaves == 2
    np.testing.assert_array_equal(tree.child_increments(0), [1.0, -1.0])


def test_three_level_atoms_are_uniform():
    tree = build_tree(3, 0.0, 1.0)
    assert tree.n_leaves == 8
    assert tree.prob(3) == 1 / 8
    assert tree.prob(3) * tree.n_leaves == 1.0


def test_increment_size_follows_dt():
    tree = build_tree(2, 0.0, 0.5)
    assert tree.dt == 0.25
    np.testing.assert_array_equal(np.unique(np.abs(tree.child_increments(1))), [0.5])


@pytest.mark.parametrize("K,t0,T", [(0, 0.0, 1.0), (-2, 0.0, 1.0), (2, 1.0, 1.0), (2, 1.0, 0.5)])
def test_invalid_grid(K, t0, T):
    with pytest.raises(InvalidGridError):
        build_tree(K, t0, T)


def test_grid_times():
    grid = TimeGrid(0.5, 1.5, 4)
    np.testing.assert_allclose(grid.times, [0.5, 0.75, 1.0, 1.25, 1.5])


def test_siblings_have_opposite_increments():
    tree = build_tree(4, 0.0, 2.0)
    for k in range(4):
        inc = tree.child_increments(k).reshape(-1, 2)
        np.testing.assert_array_equal(inc[:, 0], tree.sqrt_dt)
        np.testing.assert_array_equal(inc[:, 1], -tree.sqrt_dt)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_conditional_expectation_examples(k):
    tree = build_tree(3, 0.0, 1.0)
    n = tree.n_nodes(k + 1)
    np.testing.assert_array_equal(conditional_expectation(np.full(n, 2.5), tree, k), 2.5)
    dw = tree.child_increments(k)
    np.testing.assert_allclose(conditional_expectation(dw, tree, k), 0.0, atol=1e-15)
    np.testing.assert_allclose(conditional_expectation(dw**2, tree, k), tree.dt, rtol=1e-14)


def test_conditional_expectation_level_mismatch():
    tree = build_tree(3, 0.0, 1.0)
    with pytest.raises(ShapeError):
        conditional_expectation(np.zeros(3), tree, 1)


def test_martingale_representation_examples():
    tree = build_tree(3, 0.0, 1.0)
    dw = tree.child_increments(1)
    E, Z = martingale_representation(dw, tree, 1)
    np.testing.assert_allclose(E, 0.0, atol=1e-15)
    np.testing.assert_allclose(Z, 1.0, rtol=1e-14)
    E, Z = martingale_representation(np.full(4, -3.0), tree, 1)
    np.testing.assert_array_equal(E, -3.0)
    np.testing.assert_array_equal(Z, 0.0)
    a, b = np.array([1.0, -2.0]), np.array([0.5, 4.0])
    E, Z = martingale_representation(np.repeat(a, 2) + np.repeat(b, 2) * dw, tree, 1)
    np.testing.assert_allclose(E, a, rtol=1e-14)
    np.testing.assert_allclose(Z, b, rtol=1e-14)


def test_rademacher_moments():
    tree = build_tree(4, 0.0, 1.0)
    for k in range(4):
        dw = tree.child_increments(k)
        assert abs(dw.mean()) == 0.0
        assert np.isclose((dw**2).mean(), tree.dt, rtol=1e-14)
        assert abs((dw**3).mean()) < 1e-16
        # fourth moment is dt^2, not the Gaussian 3 dt^2
        assert np.isclose((dw**4).mean(), tree.dt**2, rtol=1e-14)


def test_pair_processes_examples():
    tree = build_tree(2, 0.0, 1.0)
    zero = AdaptedProcess.zeros(tree, 0, 2, 1)
    assert pair_processes(zero, zero) == 0.0
    one = AdaptedProcess.constant(tree, 0, 2, np.ones(1))
    assert np.isclose(pair_processes(one, one), 1.0, rtol=1e-15)


def test_deterministic_orthogonal_to_martingale_part(rng):
    tree = build_tree(3, 0.0, 1.0)
    u = AdaptedProcess.from_time_table(tree, 0, list(rng.standard_normal((3, 2))))
    # v_k = u_k times the next increment, placed on level k+1 nodes
    v = AdaptedProcess(
        tree, 1, [np.repeat(u[k], 2, axis=0) * tree.child_increments(k)[:, None] for k in range(2)]
    )
    assert abs(pair_processes(u.restrict(1, 3), v)) < 1e-15


def test_pair_terminal_examples():
    tree = build_tree(4, 0.0, 2.0)
    n = tree.n_leaves
    assert pair_terminal(np.zeros((n, 1)), np.zeros((n, 1)), tree) == 0.0
    assert np.isclose(pair_terminal(np.ones((n, 1)), np.ones((n, 1)), tree), 1.0, rtol=1e-15)
    W = tree.brownian(4)[:, None]
    # E[W(T)^2] from the tree
    expected = sum(w**2 for w in W.ravel()) / n
    assert np.isclose(pair_terminal(W, W, tree), expected, rtol=1e-14)
    assert np.isclose(expected, 2.0, rtol=1e-14)


def test_tower_property(rng):
    tree = build_tree(5, 0.0, 1.0)
    X = rng.standard_normal((tree.n_nodes(5), 3))
    twice = tree.conditional_expectation(tree.conditional_expectation(X, 4), 3)
    direct = X.reshape(tree.n_nodes(3), 4, 3).mean(axis=1)
    np.testing.assert_allclose(twice, direct, rtol=1e-14, atol=1e-15)


def test_reconstruction_at_children(rng):
    tree = build_tree(4, 0.0, 1.0)
    for k in range(4):
        X = rng.standard_normal((tree.n_nodes(k + 1), 2))
        E, Z = tree.martingale_representation(X, k)
        rebuilt = tree.expand(E, k) + tree.expand(Z, k) * tree.child_increments(k)[:, None]
        np.testing.assert_allclose(rebuilt, X, rtol=1e-14, atol=1e-15)


def test_adaptedness_is_structural(rng):
    tree = build_tree(3, 0.0, 1.0)
    x = rng.standard_normal(tree.n_nodes(1))
    leaves = tree.expand_to(x, 1, 3)
    assert np.all(leaves[:4] == x[0]) and np.all(leaves[4:] == x[1])


def test_node_paths_round_trip():
    tree = build_tree(3, 0.0, 1.0)
    for k in range(4):
        for n, path in enumerate(tree.paths(k)):
            assert len(path) == k
            assert tree.node_index(path) == n
    assert tree.paths(1) == ["u", "d"]


def test_chain_is_deterministic():
    chain = build_chain(32, 0.0, 1.0)
    assert chain.is_chain
    assert chain.n_nodes(32) == 1
    np.testing.assert_array_equal(chain.child_increments(5), 0.0)


def test_flat_round_trip(rng):
    tree = build_tree(3, 0.0, 1.0)
    u = AdaptedProcess(tree, 1, [rng.standard_normal((tree.n_nodes(k), 2)) for k in (1, 2)])
    back = AdaptedProcess.from_flat(tree, 1, 3, (2,), u.flatten())
    assert all(np.array_equal(a, b) for a, b in zip(u.levels, back.levels))
    assert u.weights().size == u.size


def test_incompatible_processes_rejected():
    tree = build_tree(3, 0.0, 1.0)
    with pytest.raises(ShapeError):
        pair_processes(AdaptedProcess.zeros(tree, 0, 3, 2), AdaptedProcess.zeros(tree, 1, 3, 2))


def _process(data, tree, dim=2):
    rng = np.random.default_rng(data)
    return AdaptedProcess(tree, 0, [rng.standard_normal((tree.n_nodes(k), dim)) for k in range(tree.K)])


seeds = st.integers(0, 2**32 - 1)
scalars = st.floats(-10, 10, allow_nan=False)


@given(seeds, seeds, seeds, scalars, scalars)
def test_pairing_bilinear_and_symmetric(s1, s2, s3, a, b):
    tree = build_tree(3, 0.0, 1.0)
    u, v, w = (_process(s, tree) for s in (s1, s2, s3))
    lhs = pair_processes(u * a + v * b, w)
    rhs = a * pair_processes(u, w) + b * pair_processes(v, w)
    scale = (abs(a) + abs(b) + 1) * process_norm(w) * (process_norm(u) + process_norm(v))
    assert abs(lhs - rhs) <= 1e-13 * scale
    assert pair_processes(u, w) == pytest.approx(pair_processes(w, u), rel=1e-14, abs=1e-15)


@given(seeds)
def test_pairing_positive_definite(s):
    tree = build_tree(3, 0.0, 1.0)
    u = _process(s, tree)
    assert pair_processes(u, u) > 0
    assert pair_processes(u * 0.0, u * 0.0) == 0.0


@given(seeds, st.integers(0, 4))
def test_conditional_expectation_preserves_mean(s, k):
    tree = build_tree(5, 0.0, 1.0)
    X = np.random.default_rng(s).standard_normal(tree.n_nodes(k + 1))
    assert np.isclose(tree.conditional_expectation(X, k).mean(), X.mean(), rtol=1e-12, atol=1e-14)


@given(seeds, st.integers(0, 4))
def test_martingale_reconstruction_property(s, k):
    tree = build_tree(5, 0.0, 3.0)
    X = np.random.default_rng(s).standard_normal((tree.n_nodes(k + 1), 3))
    E, Z = tree.martingale_representation(X, k)
    rebuilt = tree.expand(E, k) + tree.expand(Z, k) * tree.child_increments(k)[:, None]
    np.testing.assert_allclose(rebuilt, X, rtol=1e-13, atol=1e-14)
