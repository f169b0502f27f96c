"""Approximate likelihood of state trajectories under a POMDP agent model.

The researcher observes states only. The agent's controls are estimated by
least squares, the agent's control law and filter are linearized once around
the observed trajectory, and the agent's unobserved belief is tracked as a
Gaussian that is propagated through the joint state-belief dynamics and
conditioned on every observed state.

Densities are evaluated in the subspace through which the next state is
random (the range of the control and noise matrices). Directions outside it
are deterministic functions of the current state, identical for every
parameter value, and would otherwise make the covariance singular.
"""

import hashlib
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from nioc.derivatives import jacobian
from nioc.exceptions import (
    DivergedValueRecursion,
    NoConvergenceWarning,
    NonFiniteValue,
    SingularCovariance,
)
from nioc.gaussian import Gaussian, GaussianJoint, gaussian_condition, gaussian_logpdf, symmetrize
from nioc.solvers import (
    ControlLaw,
    FilterGains,
    SolverSettings,
    dynamics_with_noise_columns,
    ekf_gains,
    ilqg_backward_pass,
    linearize,
    observation_with_noise_columns,
)

LM_LAMBDA0 = 1e-6
LM_LAMBDA_MAX = 1e6
LM_MAX_ITER = 50
LM_GRAD_TOL = 1e-10
LM_STEP_TOL = 1e-12
RANK_TOL = 1e-9

_FAILURES = (SingularCovariance, NonFiniteValue, DivergedValueRecursion, np.linalg.LinAlgError)


def _t(a):
    return np.swapaxes(a, -1, -2)


def _mv(mat, vec):
    return np.einsum("...ij,...j->...i", mat, vec)


def _control_jacobian(model, x, u):
    def fn(z):
        return model.f0(x[..., None, :], z)

    jac = jacobian(fn, u)
    return jac.value, jac.blocks[0]


def estimate_controls(model, states, return_info=False):
    """Least-squares controls ``argmin_u |x_{t+1} - f(x_t, u, 0)|^2`` per step.

    Levenberg-Marquardt from ``u = 0``, independently for every step and
    trajectory (batched). The damping starts at 1e-6, is multiplied by 10
    after a rejected step and divided by 10 after an accepted one, capped at
    1e6. Iteration stops at 50 iterations, gradient norm < 1e-10 or step
    norm < 1e-12.

    Args:
        model: the POMDP.
        states: ``(T, n)`` or ``(N, T, n)``.
        return_info: also return the boolean array of steps that did not
            converge.

    Returns:
        ``u_hat`` of shape ``(..., T-1, u)`` (and the non-convergence mask).
        Non-converged steps keep their last iterate and trigger a
        NoConvergenceWarning naming them.
    """
    states = np.asarray(states, dtype=float)
    x, target = states[..., :-1, :], states[..., 1:, :]
    u = np.zeros(x.shape[:-1] + (model.u_dim,))
    lam = np.full(x.shape[:-1], LM_LAMBDA0)
    active = np.ones(x.shape[:-1], dtype=bool)
    eye = np.eye(model.u_dim)
    pred, J = _control_jacobian(model, x, u)
    res = target - pred
    cost = np.sum(res * res, axis=-1)
    for _ in range(LM_MAX_ITER):
        grad = np.einsum("...ki,...k->...i", J, res)
        active &= np.linalg.norm(grad, axis=-1) >= LM_GRAD_TOL
        if not active.any():
            break
        JtJ = _t(J) @ J
        step = np.linalg.solve(JtJ + lam[..., None, None] * eye, grad[..., None])[..., 0]
        step = np.where(active[..., None], step, 0.0)
        u_try = u + step
        pred_try = model.f0(x, u_try)
        res_try = target - pred_try
        cost_try = np.sum(res_try * res_try, axis=-1)
        better = active & (cost_try <= cost) & np.isfinite(cost_try)
        u = np.where(better[..., None], u_try, u)
        cost = np.where(better, cost_try, cost)
        lam = np.where(better, np.maximum(lam / 10.0, 1e-12), np.minimum(lam * 10.0, LM_LAMBDA_MAX))
        small = np.linalg.norm(step, axis=-1) < LM_STEP_TOL
        active &= ~(better & small)
        active &= ~(~better & (lam >= LM_LAMBDA_MAX))
        pred, J = _control_jacobian(model, x, u)
        res = target - pred
    grad = np.einsum("...ki,...k->...i", J, res)
    unconverged = np.linalg.norm(grad, axis=-1) >= LM_GRAD_TOL
    # a rejected step at maximal damping or a negligible step is a stationary point
    unconverged &= active
    if unconverged.any():
        idx = [tuple(int(i) for i in ix) for ix in np.argwhere(unconverged)[:5]]
        warnings.warn(f"control estimation did not converge at steps {idx}", NoConvergenceWarning)
    if not np.all(np.isfinite(u)):
        raise NonFiniteValue("estimated controls are not finite")
    return (u, unconverged) if return_info else u


def _orthonormal_range(mats):
    """Orthonormal basis of the column space; rank chosen over the whole batch."""
    U, s, _ = np.linalg.svd(mats, full_matrices=False)
    top = np.max(s, axis=-1, keepdims=True)
    rank = int(np.max(np.sum(s > RANK_TOL * np.maximum(top, 1e-300), axis=-1)))
    return U[..., : max(rank, 1)]


def noise_basis(model, states, controls):
    """Basis of the subspace in which ``x_{t+1}`` is random given ``x_t``.

    Spanned by the control matrix and the noise matrix of the dynamics at
    ``(x_t, u_hat_t)``. Noise directions already inside the control range
    add nothing, so for the registered tasks the basis does not depend on
    the parameters.
    """
    x = states[..., :-1, :]
    jac = jacobian(lambda z: model.f0(x[..., None, :], z), controls)
    _, G = dynamics_with_noise_columns(model, x, controls)
    if model.v_dim == 0:
        return _orthonormal_range(jac.blocks[0])
    return _orthonormal_range(np.concatenate([jac.blocks[0], G], axis=-1))


@dataclass(frozen=True)
class PreparedData:
    """Parameter-independent quantities of one batch of trajectories."""

    states: np.ndarray
    controls: np.ndarray
    basis: np.ndarray


_PREPARED_CACHE = OrderedDict()
_CACHE_SIZE = 32


def prepare(model, states, controls=None):
    """Estimate controls (unless given) and the density basis.

    Results are cached per ``(model.dynamics_key, states)`` when the model
    declares a dynamics key, because both only depend on the noiseless
    dynamics (and the noise directions).
    """
    states = np.asarray(states, dtype=float)
    key = None
    if controls is None and model.dynamics_key is not None:
        digest = hashlib.sha1(states.tobytes()).hexdigest()
        key = (model.dynamics_key, states.shape, digest, model.v_dim)
        hit = _PREPARED_CACHE.get(key)
        if hit is not None:
            _PREPARED_CACHE.move_to_end(key)
            return hit
    if controls is None:
        controls = estimate_controls(model, states)
    controls = np.asarray(controls, dtype=float)
    prepared = PreparedData(states, controls, noise_basis(model, states, controls))
    if key is not None:
        _PREPARED_CACHE[key] = prepared
        while len(_PREPARED_CACHE) > _CACHE_SIZE:
            _PREPARED_CACHE.popitem(last=False)
    return prepared


@dataclass(frozen=True)
class LinearizationContext:
    """Agent control law and filter linearized around the observed trajectory.

    Attributes:
        controls: estimated (or given) controls ``(..., T-1, u)``.
        law: ControlLaw with nominal ``(states, controls)``.
        gains: FilterGains, None for the fully observable variant.
        basis: orthonormal density bases ``(..., T-1, n, k)``.
    """

    controls: np.ndarray
    law: ControlLaw
    gains: Optional[FilterGains]
    basis: np.ndarray


def build_linearization(model, states, settings=None, variant=None, controls=None, planner="belief"):
    """One backward pass (and, if partially observable, one EKF pass) around the data.

    Args:
        model: the POMDP at the parameters being evaluated.
        states: ``(T, n)`` or ``(N, T, n)``.
        settings: SolverSettings (temperature and regularization floor).
        variant: ``"full"`` or ``"partial"``.
        controls: use these controls instead of estimating them.
        planner: ``"belief"`` for the filter-aware backward pass,
            ``"certainty-equivalent"`` for the fully observable one even
            when the agent filters.
    """
    settings = settings or SolverSettings()
    variant = variant or ("partial" if model.partial else "full")
    prep = prepare(model, states, controls)
    partial = variant == "partial"
    lin = linearize(model, prep.states, prep.controls, observation=partial)
    gains = ekf_gains(model, lin) if partial else None
    use_gains = gains if partial and planner == "belief" else None
    law = ilqg_backward_pass(model, prep.states, prep.controls, settings, use_gains, lin)
    return LinearizationContext(prep.controls, law, gains, prep.basis)


@dataclass(frozen=True)
class JointStep:
    """Gaussian over ``(x_{t+1}, b_{t+1})`` given ``x_{1:t}`` and its Jacobian blocks."""

    joint: GaussianJoint
    Jb: np.ndarray
    Jv: np.ndarray
    Jw: np.ndarray
    Jxi: np.ndarray
    belief_cov: np.ndarray

    def covariance_from_blocks(self):
        """``J_b S_b J_b' + J_v J_v' + J_w J_w' + J_xi J_xi'``."""
        return (
            self.Jb @ self.belief_cov @ _t(self.Jb)
            + self.Jv @ _t(self.Jv)
            + self.Jw @ _t(self.Jw)
            + self.Jxi @ _t(self.Jxi)
        )


def joint_step(model, ctx, x_t, belief, t, chol=None):
    """Linearized joint dynamics of state and belief mean at step ``t``.

    Jacobians are taken at ``(x_t, mu_b, v=0, w=0, xi=0)``. With
    ``u_b = L_t (mu_b - x_t) + m_t + u_hat_t`` the policy mean at the belief
    mean, the blocks are

    * ``J_b = [B(x_t) L_t ; A(mu_b) + B(mu_b) L_t - K_t H(mu_b)]``
    * ``J_v = [G(x_t) ; 0]`` (motor noise acts on the true state)
    * ``J_w = [0 ; K_t D(x_t)]`` (the observation is taken at the true state)
    * ``J_xi = [B(x_t) C_t ; B(mu_b) C_t]`` with ``C_t`` the Cholesky factor of
      the MCE policy covariance.

    Args:
        model: the POMDP.
        ctx: LinearizationContext (with filter gains).
        x_t: observed states ``(..., n)``.
        belief: Gaussian over the belief mean, batched like ``x_t``.
        t: step index (0-based).
        chol: precomputed policy Cholesky factors ``(..., T-1, u, u)``.

    Returns:
        JointStep.
    """
    n, nu = model.n, model.u_dim
    law, K = ctx.law, ctx.gains.K[..., t, :, :]
    L = law.L[..., t, :, :]
    C = (law.policy_chol() if chol is None else chol)[..., t, :, :]
    mu_b = belief.mean
    u_b = _mv(L, mu_b - x_t) + law.m[..., t, :] + law.u_nom[..., t, :]

    points = np.stack([np.concatenate([x_t, u_b], -1), np.concatenate([mu_b, u_b], -1)])
    dyn = jacobian(lambda z: model.f0(z[..., :n], z[..., n:]), points, (n, nu))
    f_x, f_b = dyn.value[0], dyn.value[1]
    B_x = dyn.blocks[1][0]
    A_b, B_b = dyn.blocks[0][1], dyn.blocks[1][1]
    _, G = dynamics_with_noise_columns(model, x_t, u_b)

    obs = jacobian(model.h0, mu_b)
    h_b, H_b = obs.value, obs.blocks[0]
    h_x, D = observation_with_noise_columns(model, x_t)

    mean_x = f_x
    mean_b = f_b + _mv(K, h_x - h_b)
    BxL = B_x @ L
    Jb = np.concatenate([BxL, A_b + B_b @ L - K @ H_b], axis=-2)
    zeros_v = np.zeros(G.shape)
    Jv = np.concatenate([G, zeros_v], axis=-2)
    KD = K @ D
    Jw = np.concatenate([np.zeros(KD.shape), KD], axis=-2)
    Jxi = np.concatenate([B_x @ C, B_b @ C], axis=-2)
    cov = Jb @ belief.cov @ _t(Jb) + Jv @ _t(Jv) + Jw @ _t(Jw) + Jxi @ _t(Jxi)
    cov = symmetrize(cov)
    joint = GaussianJoint(mean_x, mean_b, cov[..., :n, :n], cov[..., :n, n:], cov[..., n:, n:])
    return JointStep(joint, Jb, Jv, Jw, Jxi, belief.cov)


def _batched(states):
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        return states[None], True
    if states.ndim != 3:
        raise ValueError(f"states must be (T, n) or (N, T, n), got shape {states.shape}")
    return states, False


def _partial_loglik(model, states, settings, controls, planner):
    ctx = build_linearization(model, states, settings, "partial", controls, planner)
    N, T, n = states.shape
    chol = ctx.law.policy_chol()
    belief = Gaussian(np.broadcast_to(model.x1, (N, n)).copy(), np.broadcast_to(model.belief_cov, (N, n, n)), False)
    total = np.zeros(N)
    for t in range(T - 1):
        step = joint_step(model, ctx, states[:, t], belief, t, chol)
        basis = ctx.basis[:, t]
        x_next = states[:, t + 1]
        marginal = Gaussian(step.joint.mean_x, step.joint.cov_xx, False)
        total += gaussian_logpdf(marginal, x_next, basis)
        belief = gaussian_condition(step.joint, x_next, basis)
        if not (np.all(np.isfinite(belief.mean)) and np.all(np.isfinite(belief.cov))):
            raise NonFiniteValue(f"belief became non-finite at step {t}")
    return total


def _full_loglik(model, states, settings, controls):
    ctx = build_linearization(model, states, settings, "full", controls)
    n, nu = model.n, model.u_dim
    x = states[:, :-1]
    u = ctx.law.m + ctx.controls
    jac = jacobian(lambda z: model.f0(x[..., None, :], z), u)
    _, G = dynamics_with_noise_columns(model, x, u)
    B = jac.blocks[0]
    BC = B @ ctx.law.policy_chol()
    cov = G @ _t(G) + BC @ _t(BC)
    g = Gaussian(jac.value, cov, False)
    return np.sum(gaussian_logpdf(g, states[:, 1:], ctx.basis), axis=-1)


def log_likelihood(model, states, settings=None, variant=None, controls=None, planner="belief",
                   per_trajectory=False):
    """Approximate ``log p(x_{2:T} | x_1, theta)`` of observed state trajectories.

    The initial state is conditioned on, so a trajectory with ``T = 1``
    scores 0. A trajectory whose evaluation hits a singular covariance or a
    non-finite value scores ``-inf``.

    Args:
        model: the POMDP instantiated at the parameters being evaluated.
        states: ``(T, n)`` or ``(N, T, n)``.
        settings: SolverSettings.
        variant: ``"partial"`` (belief tracking) or ``"full"``; defaults to
            the model's variant.
        controls: known controls to linearize around instead of estimates.
        planner: which agent planner the control law follows (see
            ``build_linearization``).
        per_trajectory: return one value per trajectory instead of the sum.
    """
    states, single = _batched(states)
    variant = variant or ("partial" if model.partial else "full")
    if states.shape[1] <= 1:
        values = np.zeros(states.shape[0])
    else:
        if variant == "partial":
            def fn(s, c=controls):
                return _partial_loglik(model, s, settings, c, planner)
        else:
            def fn(s, c=controls):
                return _full_loglik(model, s, settings, c)
        try:
            values = fn(states)
        except _FAILURES:
            if controls is not None:
                cs = np.asarray(controls, dtype=float).reshape((states.shape[0],) + (states.shape[1] - 1, model.u_dim))
                values = np.array([
                    _safe(lambda s=states[i:i + 1], c=cs[i:i + 1]: fn(s, c)) for i in range(states.shape[0])
                ])
            else:
                values = np.array([_safe(lambda s=states[i:i + 1]: fn(s)) for i in range(states.shape[0])])
        values = np.where(np.isfinite(values), values, -np.inf)
    if per_trajectory:
        return values[0] if single else values
    return float(np.sum(values))


def _safe(thunk):
    try:
        return float(thunk()[0])
    except _FAILURES:
        return -np.inf


def log_likelihood_fullobs(model, states, settings=None, controls=None, per_trajectory=False):
    """Fully observable likelihood: per-step Gaussians with no belief tracking.

    ``x_{t+1} ~ N(f(x_t, pi(x_t), 0), G G' + B C C' B')`` with all Jacobians
    at ``(x_t, pi(x_t), 0)``.
    """
    return log_likelihood(model, states, settings, "full", controls, per_trajectory=per_trajectory)


def dataset_log_likelihood(model, dataset, settings=None, variant=None, planner="belief", per_trajectory=False):
    """Sum of trajectory log likelihoods, in trajectory order.

    Args:
        dataset: a Dataset or an ``(N, T, n)`` array.
    """
    states = dataset.states if hasattr(dataset, "states") else np.asarray(dataset, dtype=float)
    values = log_likelihood(model, states, settings, variant, planner=planner, per_trajectory=True)
    values = np.atleast_1d(values)
    if per_trajectory:
        return values
    return float(np.sum(values))
