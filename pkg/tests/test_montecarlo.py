import numpy as np
import pytest

from stochlq.errors import ShapeError
from stochlq.forward import solve_forward
from stochlq.instances import random_lq_problem
from stochlq.model import make_problem
from stochlq.montecarlo import build_ensemble, mc_backward, mc_duality_check, mc_forward, time_table
from stochlq.stochastic import build_chain


def _spec(K=6, **kw):
    chain = build_chain(K, 0.0, 1.0)
    base = dict(eta=[1.0, -0.5], B=np.array([[1.0], [0.3]]), C=0.2, D=np.array([[0.1], [0.0]]),
                sigma=[0.3, 0.1], Q=1.0, G=1.0)
    base.update(kw)
    return make_problem(chain, [-1.0, -4.0], 1, **base)


def test_same_seed_same_paths():
    a = build_ensemble(5, 0.0, 1.0, 200, seed=3)
    b = build_ensemble(5, 0.0, 1.0, 200, seed=3)
    c = build_ensemble(5, 0.0, 1.0, 200, seed=4)
    np.testing.assert_array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)


def test_increment_statistics():
    ens = build_ensemble(4, 0.0, 1.0, 200_000, seed=1)
    assert abs(ens.increments.mean()) < 5e-3
    assert ens.increments.var() == pytest.approx(0.25, rel=1e-2)


def test_noise_free_paths_match_chain():
    spec = _spec(C=0.0, D=0.0, sigma=0.0, A1=0.3)
    ens = build_ensemble(6, 0.0, 1.0, 50, seed=0)
    x = mc_forward(spec, ens)
    ref = solve_forward(spec)
    for k in range(7):
        np.testing.assert_allclose(x[k], np.broadcast_to(ref[k][0], x[k].shape), rtol=1e-13)


def test_regression_reproduces_polynomials():
    ens = build_ensemble(4, 0.0, 1.0, 1000, seed=2)
    W = ens.brownian[3]
    values = np.stack([1 + W, W**3 - 2 * W], axis=1)
    np.testing.assert_allclose(ens.conditional_expectation(values, 3), values, atol=1e-10)


def test_backward_constant_terminal():
    spec = _spec(C=0.0)
    ens = build_ensemble(6, 0.0, 1.0, 300, seed=0)
    bw = mc_backward(spec.replace(A=spec.A.__class__([0.0, 0.0])), ens, np.full((300, 2), 2.0))
    np.testing.assert_allclose(bw.y[0], 2.0, rtol=1e-12)
    np.testing.assert_allclose(bw.Y, 0.0, atol=1e-12)


def test_duality_within_statistical_bound():
    spec = _spec()
    ens = build_ensemble(6, 0.0, 1.0, 4000, seed=5)
    rng = np.random.default_rng(0)
    W = ens.brownian
    u = np.stack([W[k][:, None] * rng.standard_normal(1) for k in range(6)])
    xi = np.stack([W[k][:, None] * rng.standard_normal(2) for k in range(6)])
    yT = np.outer(1.0 + W[6], rng.standard_normal(2))
    res = mc_duality_check(spec, ens, u, yT, xi)
    assert res.within_bound
    assert res.residual <= 3 * res.stderr + 1e-12 * res.scale


def test_node_dependent_tables_rejected(rng):
    spec = random_lq_problem(rng, N=2, m=1, K=3)
    with pytest.raises(ShapeError):
        time_table(spec, "B")


def test_grid_mismatch_rejected():
    spec = _spec(K=6)
    with pytest.raises(ShapeError):
        mc_forward(spec, build_ensemble(5, 0.0, 1.0, 10))
