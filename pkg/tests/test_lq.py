import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochlq.diagnostics import (
    adjoint_pairing_residuals,
    expansion_residual,
    random_control,
)
from stochlq.errors import CapacityError, IndefiniteError
from stochlq.forward import solve_forward, terminal_value
from stochlq.instances import random_lq_problem, scalar_benchmark
from stochlq.lq import (
    OperatorBundle,
    PsiSystem,
    check_finiteness,
    cost,
    frechet_gradient,
    optimality_residual,
    psi1_matrix,
    solve_open_loop,
)
from stochlq.model import make_problem, validate_conditions
from stochlq.oracles import brute_force_minimizer
from stochlq.stochastic import AdaptedProcess, build_chain, build_tree, pair_processes, process_norm


def _all_zero(p):
    return all(not np.any(v) for v in p.levels)


# operator bundle

def test_apply_M_of_zero(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=3)
    assert _all_zero(OperatorBundle(spec).apply_M(spec.zero_control()))


def test_apply_hatN_pure_semigroup():
    tree = build_tree(3, 0.0, 1.5)
    lam = np.array([-1.0, -2.0])
    spec = make_problem(tree, lam, 1, t_index=1, b=1.0, sigma=0.5)
    eta = np.array([0.3, -1.2])
    out = OperatorBundle(spec).apply_hatN(eta)
    np.testing.assert_allclose(out, np.broadcast_to(np.exp(lam * 1.0) * eta, out.shape), rtol=1e-14)


def test_compute_h_without_sources(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=3)
    quiet = spec.replace(b=spec.zero_like(spec.coeffs.b), sigma=spec.zero_like(spec.coeffs.sigma))
    assert _all_zero(OperatorBundle(quiet).compute_h())


def test_bundle_reassembles_state(rng):
    spec = random_lq_problem(rng, N=2, m=2, K=4, t_index=1)
    ops = OperatorBundle(spec)
    u = random_control(spec, rng)
    x = solve_forward(spec, u)
    total = ops.apply_M(u) + ops.apply_N(spec.eta) + ops.compute_h()
    for k in x.levels_range():
        assert np.abs(total[k] - x[k]).max() <= 1e-14 * max(1.0, np.abs(x[k]).max())
    np.testing.assert_allclose(
        ops.apply_hatM(u) + ops.apply_hatN(spec.eta) + terminal_value(ops.compute_h()), terminal_value(x),
        rtol=1e-13, atol=1e-14,
    )


def test_adjoint_of_zero(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=3)
    ops = OperatorBundle(spec)
    assert _all_zero(ops.apply_M_star(spec.zero_like(spec.coeffs.b)))
    assert not np.any(ops.apply_hatN_star(np.zeros((8, 2))))


@given(st.integers(0, 2**32 - 1), st.integers(0, 3))
def test_adjoint_pairings(seed, t_index):
    rng = np.random.default_rng(seed)
    spec = random_lq_problem(rng, N=3, m=2, K=4, t_index=t_index)
    res = adjoint_pairing_residuals(spec, rng)
    assert max(res) <= 1e-12


# Psi system

@given(st.integers(0, 2**32 - 1))
def test_psi1_self_adjoint(seed):
    rng = np.random.default_rng(seed)
    spec = random_lq_problem(rng, N=2, m=2, K=4, with_S=bool(seed % 2), standard=bool(seed % 3))
    psi = PsiSystem(spec)
    u, v = random_control(spec, rng), random_control(spec, rng)
    a, b = pair_processes(psi.apply_psi1(u), v), pair_processes(u, psi.apply_psi1(v))
    assert abs(a - b) <= 1e-12 * max(abs(a), abs(b))


@given(st.integers(0, 2**32 - 1))
def test_psi1_coercive_for_standard_problems(seed):
    rng = np.random.default_rng(seed)
    spec = random_lq_problem(rng, N=2, m=1, K=4, delta=0.4)
    delta = validate_conditions(spec).delta
    u = random_control(spec, rng)
    assert pair_processes(PsiSystem(spec).apply_psi1(u), u) >= delta * pair_processes(u, u) * (1 - 1e-12)


def test_psi1_reduces_to_R(rng):
    spec = random_lq_problem(rng, N=2, m=2, K=3)
    spec = spec.replace(
        Q=spec.zero_like(spec.weights.Q), S=spec.zero_like(spec.weights.S), G=np.zeros_like(spec.weights.G)
    )
    u = random_control(spec, rng)
    out = PsiSystem(spec).apply_psi1(u)
    for k in u.levels_range():
        expected = np.einsum("nij,nj->ni", spec.weights.R[k], u[k])
        np.testing.assert_allclose(out[k], expected, rtol=1e-14, atol=1e-15)


def test_phi2_equals_r_without_sources():
    tree = build_tree(3, 0.0, 1.0)
    r = np.array([0.7, -0.2])
    spec = make_problem(tree, [-1.0, -2.0], 2, B=np.ones((2, 2)), Q=1.0, G=1.0, r=r)
    phi2 = PsiSystem(spec).phi2
    for k in phi2.levels_range():
        np.testing.assert_allclose(phi2[k], np.broadcast_to(r, phi2[k].shape), rtol=1e-15)


# cost

def test_cost_of_zero_problem():
    tree = build_tree(3, 0.0, 1.0)
    spec = make_problem(tree, [-1.0], 1)
    assert cost(spec) == 0.0


def test_cost_with_only_terminal_linear_weight():
    tree = build_tree(3, 0.0, 1.0)
    spec = make_problem(tree, [-1.0, -2.0], 1, Q=1.0, G=1.0, g=np.ones(2))
    assert cost(spec) == 0.0
    assert PsiSystem(spec).phi3 == 0.0


def test_scalar_benchmark_cost_at_half():
    spec = scalar_benchmark(build_tree(4, 0.0, 1.0))
    u = AdaptedProcess.constant(spec.tree, 0, 4, np.array([-0.5]))
    assert cost(spec, u) == pytest.approx(0.25, rel=1e-14)


def test_cost_matches_explicit_sum(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=3, with_S=True)
    u = random_control(spec, rng)
    x = solve_forward(spec, u)
    w, tree = spec.weights, spec.tree
    total = 0.0
    for k in range(3):
        for n in range(tree.n_nodes(k)):
            xk, uk = x[k][n], u[k][n]
            running = (
                xk @ w.Q[k][n] @ xk + uk @ w.R[k][n] @ uk + 2 * uk @ w.S[k][n] @ xk
                + 2 * w.q[k][n] @ xk + 2 * w.r[k][n] @ uk
            )
            total += spec.dt * tree.prob(k) * running
    for n in range(tree.n_leaves):
        xT = x[3][n]
        total += tree.prob(3) * (xT @ w.G[n] @ xT + 2 * w.g[n] @ xT)
    assert cost(spec, u) == pytest.approx(0.5 * total, rel=1e-13)


@given(st.integers(0, 2**32 - 1))
def test_cost_consistency_direct_vs_psi(seed):
    rng = np.random.default_rng(seed)
    spec = random_lq_problem(rng, N=2, m=1, K=4, t_index=int(rng.integers(0, 3)), with_S=True)
    u = random_control(spec, rng)
    direct, psi_form = cost(spec, u), PsiSystem(spec).cost(u)
    assert abs(direct - psi_form) <= 1e-10 * max(abs(direct), 1e-300)


# gradient

def test_gradient_reduces_to_Ru():
    tree = build_tree(3, 0.0, 1.0)
    rng = np.random.default_rng(5)
    spec = make_problem(tree, [-1.0, -2.0], 1, B=np.ones((2, 1)), R=2.0, eta=[1.0, 1.0], b=0.3)
    u = random_control(spec, rng)
    g = frechet_gradient(spec, u)
    for k in u.levels_range():
        np.testing.assert_allclose(g[k], 2.0 * u[k], rtol=1e-15)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1e-3, 1e-2, 1e-1, 1.0]), st.sampled_from([1.0, 2.0]))
def test_expansion_identity(seed, eps, s_factor):
    rng = np.random.default_rng(seed)
    spec = random_lq_problem(rng, N=2, m=2, K=4, with_S=True, standard=bool(seed % 2))
    spec = spec.replace(s_factor=s_factor)
    assert expansion_residual(spec, random_control(spec, rng), random_control(spec, rng), eps) <= 1e-11


def test_gradient_matches_psi_form(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=4, with_S=True)
    u = random_control(spec, rng)
    g1, g2 = frechet_gradient(spec, u), PsiSystem(spec).gradient(u)
    assert process_norm(g1 - g2) <= 1e-12 * process_norm(g1)


# finiteness

def test_finiteness_identity_R():
    tree = build_tree(3, 0.0, 1.0)
    res = check_finiteness(make_problem(tree, [-1.0, -2.0], 1, B=np.ones((2, 1))))
    assert res.nonneg
    assert res.min_eig == pytest.approx(1.0, abs=1e-12)
    assert res.max_eig == pytest.approx(1.0, abs=1e-12)


def test_finiteness_negative_R():
    tree = build_tree(3, 0.0, 1.0)
    res = check_finiteness(make_problem(tree, [-1.0, -2.0], 1, B=np.ones((2, 1)), R=-1.0))
    assert not res.nonneg
    assert res.min_eig == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_finiteness_bounded_by_delta(seed):
    rng = np.random.default_rng(seed)
    spec = random_lq_problem(rng, N=2, m=2, K=3)
    res = check_finiteness(spec)
    assert res.nonneg
    assert res.min_eig >= validate_conditions(spec).delta - 1e-10


def test_finiteness_capacity_and_iterative(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=4)
    with pytest.raises(CapacityError):
        check_finiteness(spec, dense_threshold=5)
    dense = check_finiteness(spec)
    lanczos = check_finiteness(spec, dense_threshold=5, iterative=True)
    assert lanczos.method == "lanczos"
    assert lanczos.min_eig == pytest.approx(dense.min_eig, rel=1e-8)


def test_psi1_matrix_symmetric_in_weighted_coordinates(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=3, with_S=True)
    P = psi1_matrix(spec)
    w = spec.zero_control().weights()
    WP = w[:, None] * P
    assert np.abs(WP - WP.T).max() <= 1e-12 * np.abs(WP).max()


# open-loop minimizer

def test_zero_linear_terms_give_zero_control(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=3).homogeneous()
    u, diag = solve_open_loop(spec)
    assert process_norm(u) == 0.0
    assert diag.cost == 0.0


@pytest.mark.parametrize("K", [4, 8])
def test_scalar_benchmark_solution(K):
    spec = scalar_benchmark(build_tree(K, 0.0, 1.0))
    u, diag = solve_open_loop(spec)
    for k in u.levels_range():
        np.testing.assert_allclose(u[k], -0.5, rtol=1e-12)
    assert diag.cost == pytest.approx(0.25, rel=1e-12)
    assert abs(diag.cost - 0.25) <= 1.0 / K


def test_scalar_benchmark_on_chain():
    spec = scalar_benchmark(build_chain(32, 0.0, 1.0))
    _, diag = solve_open_loop(spec)
    assert diag.cost == pytest.approx(0.25, rel=1e-12)


def test_matches_dense_oracle():
    rng = np.random.default_rng(7)
    spec = random_lq_problem(rng, N=2, m=1, K=5)
    assert spec.control_dim == 31
    u, diag = solve_open_loop(spec)
    oracle = brute_force_minimizer(spec)
    assert process_norm(u - oracle.u_star) <= 1e-8
    assert abs(diag.cost - oracle.cost) <= 1e-10 * max(1.0, abs(oracle.cost))
    assert diag.gradient_norm <= 1e-8


def test_minimality_under_perturbations(rng):
    spec = random_lq_problem(rng, N=2, m=2, K=4, with_S=True)
    u, diag = solve_open_loop(spec)
    for _ in range(100):
        v = random_control(spec, rng, scale=float(rng.uniform(1e-3, 2.0)))
        assert cost(spec, u + v) >= diag.cost - 1e-9
        assert cost(spec, u + v) > diag.cost


def test_optimality_residual_examples(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=4)
    u, _ = solve_open_loop(spec)
    assert optimality_residual(spec, u) <= 1e-8
    delta = validate_conditions(spec).delta
    v = random_control(spec, rng)
    assert optimality_residual(spec, u + v) >= delta * process_norm(v) - 1e-8
    zero = make_problem(build_tree(3, 0.0, 1.0), [-1.0], 1)
    assert optimality_residual(zero, zero.zero_control()) == 0.0


def test_indefinite_problem_raises():
    tree = build_tree(3, 0.0, 1.0)
    spec = make_problem(tree, [-1.0], 1, B=1.0, R=-1.0, r=1.0)
    with pytest.raises(IndefiniteError):
        solve_open_loop(spec, precondition=False)


def test_semidefinite_problem_falls_back_to_least_squares():
    tree = build_tree(2, 0.0, 1.0)
    # Psi1 = 0 with a linear term: CG meets zero curvature at once
    spec = make_problem(tree, [-1.0], 1, R=0.0, Q=1.0, eta=[1.0], r=1.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        u, diag = solve_open_loop(spec)
    assert diag.method == "lstsq"
    assert any("least-squares" in str(w.message) for w in caught)
    assert process_norm(u) == 0.0


def test_semidefinite_partial_rank():
    tree = build_tree(2, 0.0, 1.0)
    # R vanishes on the second control component, which also has no effect on the state
    R = np.diag([1.0, 0.0])
    B = np.array([[1.0, 0.0]])
    spec = make_problem(tree, [0.0], 2, B=B, R=R, G=1.0, eta=[1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        u, diag = solve_open_loop(spec, mode="lstsq")
    assert diag.gradient_norm <= 1e-8
    for k in u.levels_range():
        assert np.abs(u[k][:, 1]).max() <= 1e-10


def test_diagnostics_fields(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=3)
    _, diag = solve_open_loop(spec)
    assert diag.converged and diag.method == "pcg"
    assert 0 < diag.iterations <= 10 * spec.control_dim
    assert diag.residual_history[-1] <= 1e-10 * diag.residual_history[0]
