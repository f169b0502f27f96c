import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import LinearGaussianPomdp, kalman_filter_means, kalman_gains, riccati_affine
from nioc.envs import instantiate
from nioc.exceptions import NoConvergenceWarning
from nioc.model import PomdpModel
from nioc.solvers import (
    SolverSettings, ekf_gains, ekf_step, expected_cost, ilqg_backward_pass, ilqg_solve, linearize,
    mce_policy_sample, rollout, simulate,
)

small_dims = st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(2, 12))


@settings(max_examples=20, deadline=None)
@given(dims=small_dims, seed=st.integers(0, 2**31))
def test_backward_pass_matches_riccati(dims, seed):
    n, m, nu, T = dims
    rng = np.random.default_rng(seed)
    lg = LinearGaussianPomdp(rng, n, m, nu, T, 0.0, partial=False)
    model = lg.model()
    # an arbitrary, dynamically inconsistent nominal
    xs, us = rng.standard_normal((T, n)), rng.standard_normal((T - 1, nu))
    law = ilqg_backward_pass(model, xs, us)
    Ls, ks, Huu = riccati_affine(lg.A, lg.B, lg.Q, lg.R, lg.Qf, lg.x_star, lg.x_final, T)
    for t in range(T - 1):
        np.testing.assert_allclose(law.L[t], Ls[t], atol=1e-8, rtol=0)
        np.testing.assert_allclose(law.m[t] + us[t], Ls[t] @ xs[t] + ks[t], atol=1e-8, rtol=0)
        np.testing.assert_allclose(law.Quu[t], Huu[t], rtol=1e-7)


def test_filter_aware_pass_keeps_lqr_gains_under_additive_noise(rng):
    # separation principle: with additive noise the belief planner equals LQR
    lg = LinearGaussianPomdp(rng, 3, 2, 2, 10, 0.0)
    model = lg.model()
    xs, us = rng.standard_normal((10, 3)), rng.standard_normal((9, 2))
    lin = linearize(model, xs, us, observation=True)
    law_po = ilqg_backward_pass(model, xs, us, gains=ekf_gains(model, lin), lin=lin)
    law_fo = ilqg_backward_pass(model, xs, us, lin=lin)
    np.testing.assert_allclose(law_po.L, law_fo.L, atol=1e-9)
    np.testing.assert_allclose(law_po.m, law_fo.m, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(dims=small_dims, seed=st.integers(0, 2**31))
def test_ekf_equals_kalman_filter(dims, seed):
    n, m, nu, T = dims
    rng = np.random.default_rng(seed)
    # stable systems keep the states O(1), where an absolute 1e-10 is meaningful
    lg = LinearGaussianPomdp(rng, n, m, nu, T, 0.0, max_radius=0.95)
    model = lg.model()
    xs, us = rng.standard_normal((T, n)), rng.standard_normal((T - 1, nu))
    ys = rng.standard_normal((T - 1, m))
    gains = ekf_gains(model, linearize(model, xs, us, observation=True))
    Ks, Ps = kalman_gains(lg.A, lg.G, lg.H, lg.D, lg.P1, T)
    np.testing.assert_allclose(gains.K, np.array(Ks), atol=1e-9)
    np.testing.assert_allclose(gains.P, np.array(Ps), atol=1e-9)
    b = [lg.x1]
    for t in range(T - 1):
        b.append(ekf_step(model, b[-1], us[t], ys[t], gains.K[t]))
    ref = kalman_filter_means(lg.A, lg.B, lg.H, Ks, lg.x1, us, ys)
    np.testing.assert_allclose(np.array(b), ref, atol=1e-10, rtol=0)


def test_policy_samples_have_mce_covariance(rng):
    model = instantiate("lqg", None, "full", temperature=0.5)
    res = ilqg_solve(model)
    xi = rng.standard_normal((100_000, 1))
    b = np.tile(res.x_nom[3], (100_000, 1))
    u = mce_policy_sample(res.law, b, xi, 3)
    expected = 0.5 / res.law.Quu[3, 0, 0]
    se = expected * np.sqrt(2.0 / u.shape[0])
    assert abs(u.var() - expected) < 4 * se
    assert u.mean() == pytest.approx(res.u_nom[3, 0], abs=4 * np.sqrt(expected / u.shape[0]))


def test_zero_temperature_policy_is_deterministic():
    model = instantiate("lqg", None, "full", temperature=0.0)
    res = ilqg_solve(model)
    u = mce_policy_sample(res.law, res.x_nom[2], np.array([3.0]), 2)
    np.testing.assert_allclose(u, res.u_nom[2])


def test_ilqg_solves_lq_problem_in_one_step(rng):
    lg = LinearGaussianPomdp(rng, 2, 2, 1, 15, 0.0, partial=False)
    model = lg.model()
    res = ilqg_solve(model)
    Ls, ks, _ = riccati_affine(lg.A, lg.B, lg.Q, lg.R, lg.Qf, lg.x_star, lg.x_final, 15)
    x = lg.x1
    for t in range(14):
        u = Ls[t] @ x + ks[t]
        np.testing.assert_allclose(res.u_nom[t], u, atol=1e-7)
        x = lg.A @ x + lg.B @ u
    assert res.converged and res.iterations <= 3


def test_solver_cost_is_monotone():
    res = ilqg_solve(instantiate("pendulum", None, "full"))
    assert np.all(np.diff(res.cost_history) < 0)


def test_solver_warns_without_convergence():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = ilqg_solve(instantiate("pendulum", None, "full"), SolverSettings(max_iter=1))
    assert not res.converged
    assert any(issubclass(w.category, NoConvergenceWarning) for w in caught)


def test_expected_cost_matches_monte_carlo(rng):
    lg = LinearGaussianPomdp(rng, 2, 2, 1, 10, 1e-2)
    model = lg.model()
    res = ilqg_solve(model, SolverSettings(objective="deterministic"))
    predicted = expected_cost(model, res.x_nom, res.u_nom, res.law, res.gains)
    xs, us = lg.sample(rng, 20_000, return_controls=True)
    costs = model.trajectory_cost(xs, us)
    se = costs.std() / np.sqrt(costs.size)
    assert abs(costs.mean() - predicted) < 4 * se


def test_rollout_with_zero_step_reproduces_nominal():
    model = instantiate("pendulum", None, "full")
    res = ilqg_solve(model)
    xs, us = rollout(model, res.law, 0.0)
    np.testing.assert_allclose(xs, res.x_nom, atol=1e-12)


@pytest.mark.parametrize("variant", ["full", "partial"])
def test_simulate_is_seeded_and_extendable(variant):
    model = instantiate("lqg", None, variant)
    res = ilqg_solve(model, variant=variant)
    a = simulate(model, res.law, res.gains, 5, seed=3, variant=variant)
    b = simulate(model, res.law, res.gains, 5, seed=3, variant=variant)
    c = simulate(model, res.law, res.gains, 2, seed=3, variant=variant)
    d = simulate(model, res.law, res.gains, 5, seed=4, variant=variant)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.states[:2], c.states)
    assert not np.allclose(a.states, d.states)
    assert a.to_json() == b.to_json()


def test_simulate_drops_diverging_trajectories():
    def dynamics(x, u, v):
        return np.where(v > 2.0, np.inf, x + u + 0.1 * v)

    model = PomdpModel(
        name="blowup", n=1, u_dim=1, v_dim=1, T=20, dynamics=dynamics,
        running_cost=lambda x, u: np.sum(u * u, -1), final_cost=lambda x: np.sum(x * x, -1),
        x1=np.ones(1),
    )
    res = ilqg_solve(model)
    data = simulate(model, res.law, None, 30, seed=0)
    assert 0 < len(data.metadata["failed_seeds"]) < 30
    assert len(data) + len(data.metadata["failed_seeds"]) == 30
    assert np.all(np.isfinite(data.states))


def test_partial_simulation_needs_gains():
    model = instantiate("lqg", None, "partial")
    res = ilqg_solve(model, variant="partial")
    with pytest.raises(ValueError, match="gains"):
        simulate(model, res.law, None, 2, variant="partial")
