import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from oracles import LinearGaussianPomdp, riccati_affine
from nioc.baseline import baseline_log_likelihood, baseline_log_likelihood_given_controls
from nioc.envs import instantiate
from nioc.solvers import ilqg_solve, simulate


def _oracle_baseline(lg, states, controls):
    Ls, ks, Huu = riccati_affine(lg.A, lg.B, lg.Q, lg.R, lg.Qf, lg.x_star, lg.x_final, lg.T)
    total = 0.0
    for t in range(lg.T - 1):
        x, u = states[t], controls[t]
        total += multivariate_normal(lg.A @ x + lg.B @ u, lg.G @ lg.G.T).logpdf(states[t + 1])
        pol = multivariate_normal(Ls[t] @ x + ks[t], lg.temperature * np.linalg.inv(Huu[t]))
        total += pol.logpdf(u)
    return total


@settings(max_examples=10, deadline=None)
@given(n=st.integers(1, 3), nu=st.integers(1, 3), T=st.integers(2, 12), seed=st.integers(0, 2**31))
def test_given_controls_matches_soft_lqr_oracle(n, nu, T, seed):
    rng = np.random.default_rng(seed)
    lg = LinearGaussianPomdp(rng, n, 1, nu, T, 1e-3, partial=False)
    states, controls = lg.sample(rng, 2, return_controls=True)
    got = baseline_log_likelihood_given_controls(lg.model(), states, controls, per_trajectory=True)
    want = [_oracle_baseline(lg, s, c) for s, c in zip(states, controls)]
    np.testing.assert_allclose(got, want, atol=1e-6, rtol=0)


def _navigation_data(theta):
    model = instantiate("navigation", theta, "partial")
    res = ilqg_solve(model, variant="partial")
    return simulate(model, res.law, res.gains, 4, seed=2, variant="partial").states


def test_observation_noise_does_not_enter_the_baseline():
    theta = {"c_a": 0.1, "c_v": 0.1, "sigma_m": 0.3, "sigma_o": 0.1}
    states = _navigation_data(theta)
    a = baseline_log_likelihood(instantiate("navigation", theta, "partial"), states)
    b = baseline_log_likelihood(instantiate("navigation", {**theta, "sigma_o": 2.0}, "partial"), states)
    assert np.isfinite(a)
    assert a == b


def test_single_trajectory_and_short_inputs():
    model = instantiate("lqg", None, "full")
    res = ilqg_solve(model)
    states = simulate(model, res.law, res.gains, 3, seed=0).states
    batch = baseline_log_likelihood(model, states, per_trajectory=True)
    assert baseline_log_likelihood(model, states[1], per_trajectory=True) == pytest.approx(batch[1])
    assert baseline_log_likelihood(model, states[:, :1]) == 0.0


def test_zero_temperature_is_rejected():
    from nioc.solvers import SolverSettings

    model = instantiate("lqg", None, "full")
    res = ilqg_solve(model)
    states = simulate(model, res.law, res.gains, 2, seed=0).states
    with pytest.raises(ValueError, match="temperature"):
        baseline_log_likelihood(model, states, settings=SolverSettings(temperature=0.0))
