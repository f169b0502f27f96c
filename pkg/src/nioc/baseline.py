"""Maximum-causal-entropy baseline likelihood over states and estimated controls.

The baseline has no model of partial observability: the agent is assumed
to act on the true state with the MCE policy of the system linearized around
the observed trajectory, and controls are treated as known point estimates.
The likelihood then factorizes over steps into a transition density and a
policy density.
"""

import numpy as np

from nioc.exceptions import DivergedValueRecursion, NonFiniteValue, SingularCovariance
from nioc.gaussian import Gaussian, gaussian_logpdf
from nioc.likelihood import prepare
from nioc.solvers import SolverSettings, ilqg_backward_pass, linearize

_FAILURES = (SingularCovariance, NonFiniteValue, DivergedValueRecursion, np.linalg.LinAlgError)


def _t(a):
    return np.swapaxes(a, -1, -2)


def _baseline_terms(model, states, controls, settings):
    prep = prepare(model, states, controls)
    u = prep.controls
    lin = linearize(model, states, u, observation=False)
    law = ilqg_backward_pass(model, states, u, settings, None, lin)
    if law.temperature <= 0.0:
        raise ValueError("the MCE baseline needs a positive temperature")
    transition = gaussian_logpdf(Gaussian(lin.f0, lin.G @ _t(lin.G), False), states[:, 1:], prep.basis)
    # the policy mean at the observed state is m_t + u_t, evaluated at u_t
    policy = gaussian_logpdf(Gaussian(np.zeros_like(law.m), law.policy_cov(), False), -law.m)
    return np.sum(transition + policy, axis=-1)


def baseline_log_likelihood_given_controls(model, states, controls, settings=None, per_trajectory=False):
    """Baseline log likelihood with the given controls in place of estimates.

    Args:
        model: the POMDP at the parameters being evaluated (its observation
            model, if any, is ignored).
        states: ``(T, n)`` or ``(N, T, n)``.
        controls: ``(T-1, u)`` or ``(N, T-1, u)``.
        settings: SolverSettings (temperature, regularization floor).
        per_trajectory: return one value per trajectory instead of the sum.
    """
    settings = settings or SolverSettings()
    states = np.asarray(states, dtype=float)
    single = states.ndim == 2
    if single:
        states = states[None]
        if controls is not None:
            controls = np.asarray(controls, dtype=float)[None]
    if states.shape[1] <= 1:
        values = np.zeros(states.shape[0])
    else:
        try:
            values = _baseline_terms(model, states, controls, settings)
        except _FAILURES:
            values = np.empty(states.shape[0])
            for i in range(states.shape[0]):
                c = None if controls is None else controls[i : i + 1]
                try:
                    values[i] = _baseline_terms(model, states[i : i + 1], c, settings)[0]
                except _FAILURES:
                    values[i] = -np.inf
        values = np.where(np.isfinite(values), values, -np.inf)
    if per_trajectory:
        return values[0] if single else values
    return float(np.sum(values))


def baseline_log_likelihood(model, states, settings=None, per_trajectory=False):
    """Baseline log likelihood with controls estimated by least squares.

    Sum over steps of ``log N(x_{t+1}; f(x_t, u_t, 0), G G')`` and
    ``log N(u_t; L_t (x_t - x_t) + m_t + u_t, temperature * inv(Quu_t))``,
    with the control law of the fully observable problem linearized around
    ``(x, u_hat)``. Transition densities are taken in the same subspace as in
    the main likelihood.
    """
    return baseline_log_likelihood_given_controls(model, states, None, settings, per_trajectory)
