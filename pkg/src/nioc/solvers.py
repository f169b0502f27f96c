"""Forward problem: iLQG control laws, EKF gains, MCE policies, simulation.

Arrays carry optional leading batch dimensions, so one call can handle the
linearizations of many trajectories at once. Time is always the axis right
after the batch dimensions.
"""

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from nioc.derivatives import hessian_quadratize, jacobian, project_psd
from nioc.exceptions import (
    DivergedValueRecursion,
    NoConvergenceWarning,
    NonFiniteValue,
    SingularCovariance,
)
from nioc.gaussian import jittered_cholesky, symmetrize
from nioc.model import Dataset, Trajectory, mix_seed

T_ = np.swapaxes


def _t(a):
    return T_(a, -1, -2)


def _mv(mat, vec):
    return (mat @ vec[..., None])[..., 0]


def _noise_vec(dmat, M, cols):
    """``sum_i dmat_i' M cols[:, i]`` for noise-matrix derivatives ``dmat (..., k, r, d)``."""
    Mc = _t(M @ cols)
    return (_t(dmat) @ Mc[..., None])[..., 0].sum(-2)


def _noise_mat(da, M, db):
    """``sum_i da_i' M db_i``."""
    return (_t(da) @ (M[..., None, :, :] @ db)).sum(-3)


@dataclass(frozen=True)
class SolverSettings:
    """Knobs of the iLQG solver.

    Attributes:
        max_iter: outer iterations of ``ilqg_solve``.
        tol: stop once the nominal state trajectory moves less than this.
        line_search: step scalings tried on the offsets ``m_t``, in order.
        reg_floor: eigenvalue floor for ``Quu``.
        temperature: MCE temperature; None uses the model's value.
        value_hessian_limit: norm above which the backward pass is declared
            diverged.
        objective: ``"deterministic"`` accepts line-search steps on the
            noiseless rollout cost, ``"expected"`` on ``expected_cost``.
            None picks ``"expected"`` for the filter-aware planner (whose
            benefit of gathering information only shows in the expected
            cost) and ``"deterministic"`` otherwise.
    """

    max_iter: int = 100
    tol: float = 1e-6
    line_search: tuple = tuple(2.0 ** -k for k in range(11))
    reg_floor: float = 1e-8
    temperature: Optional[float] = None
    value_hessian_limit: float = 1e12
    objective: Optional[str] = None

    def __post_init__(self):
        if self.max_iter <= 0 or self.tol <= 0 or self.reg_floor <= 0:
            raise ValueError("solver settings must be positive")
        if self.objective not in (None, "deterministic", "expected"):
            raise ValueError(f"unknown line-search objective {self.objective!r}")
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    def alpha(self, model):
        return model.temperature if self.temperature is None else self.temperature


@dataclass(frozen=True)
class ControlLaw:
    """Time-varying affine policy ``u = L (b - x_nom) + m + u_nom`` plus MCE noise.

    Shapes: ``L (..., T-1, u, n)``, ``m (..., T-1, u)``, ``Quu (..., T-1, u, u)``,
    ``x_nom (..., T, n)``, ``u_nom (..., T-1, u)``.
    """

    L: np.ndarray
    m: np.ndarray
    Quu: np.ndarray
    x_nom: np.ndarray
    u_nom: np.ndarray
    temperature: float = 0.0

    def policy_cov(self):
        """MCE policy covariance ``temperature * inv(Quu)``."""
        return self.temperature * np.linalg.inv(self.Quu)

    def policy_chol(self):
        """Cholesky factor of the policy covariance (zeros at zero temperature)."""
        if self.temperature == 0.0:
            return np.zeros_like(self.Quu)
        return np.linalg.cholesky(symmetrize(self.policy_cov()))

    def mean(self, b, t):
        return (
            np.einsum("...ij,...j->...i", self.L[..., t, :, :], b - self.x_nom[..., t, :])
            + self.m[..., t, :]
            + self.u_nom[..., t, :]
        )


@dataclass(frozen=True)
class FilterGains:
    """EKF gains ``K (..., T-1, n, m)`` and predicted covariances ``P (..., T, n, n)``."""

    K: np.ndarray
    P: np.ndarray


@dataclass(frozen=True)
class Linearization:
    """Derivatives of dynamics, noise, observation and costs along a nominal.

    ``Gx[..., t, i, k, j]`` is the derivative of noise column ``i`` (row
    ``k``) with respect to ``x_j``; ``Gu`` and ``Dx`` follow the same layout.
    """

    f0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    Gx: np.ndarray
    Gu: np.ndarray
    cost: np.ndarray
    lx: np.ndarray
    lu: np.ndarray
    lxx: np.ndarray
    luu: np.ndarray
    lux: np.ndarray
    final_cost: np.ndarray
    fx_final: np.ndarray
    fxx_final: np.ndarray
    h0: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    Dm: Optional[np.ndarray] = None
    Dx: Optional[np.ndarray] = None


def _unit_noise(dim):
    return np.concatenate([np.zeros((1, dim)), np.eye(dim)], axis=0)


def dynamics_with_noise_columns(model, x, u):
    """``f(x, u, 0)`` and the noise matrix ``G`` with ``f(x,u,v) = f(x,u,0) + G v``."""
    vs = _unit_noise(model.v_dim)
    out = model.dynamics(x[..., None, :], u[..., None, :], vs)
    f0 = out[..., 0, :]
    return f0, _t(out[..., 1:, :] - f0[..., None, :])


def observation_with_noise_columns(model, x):
    ws = _unit_noise(model.w_dim)
    out = model.observation(x[..., None, :], ws)
    h0 = out[..., 0, :]
    return h0, _t(out[..., 1:, :] - h0[..., None, :])


def linearize_dynamics(model, x, u):
    """Jacobians of ``f`` and of its noise matrix at ``(x, u, 0)``.

    Returns:
        ``(f0, A, B, G, Gx, Gu)``.
    """
    n, nu, nv = model.n, model.u_dim, model.v_dim

    def stacked(z):
        f0, g = dynamics_with_noise_columns(model, z[..., :n], z[..., n:])
        return np.concatenate([f0, _t(g).reshape(g.shape[:-2] + (nv * n,))], axis=-1)

    jac = jacobian(stacked, np.concatenate([x, u], axis=-1), (n, nu))
    f0 = jac.value[..., :n]
    G = _t(jac.value[..., n:].reshape(jac.value.shape[:-1] + (nv, n)))
    jx, ju = jac.blocks
    A, B = jx[..., :n, :], ju[..., :n, :]
    Gx = jx[..., n:, :].reshape(jx.shape[:-2] + (nv, n, n))
    Gu = ju[..., n:, :].reshape(ju.shape[:-2] + (nv, n, nu))
    return f0, A, B, G, Gx, Gu


def linearize_observation(model, x):
    """``(h0, H, Dm, Dx)``: value, state Jacobian, noise matrix and its state Jacobian."""
    n, m, nw = model.n, model.m, model.w_dim

    def stacked(z):
        h0, d = observation_with_noise_columns(model, z)
        return np.concatenate([h0, _t(d).reshape(d.shape[:-2] + (nw * m,))], axis=-1)

    jac = jacobian(stacked, x)
    h0 = jac.value[..., :m]
    Dm = _t(jac.value[..., m:].reshape(jac.value.shape[:-1] + (nw, m)))
    H = jac.blocks[0][..., :m, :]
    Dx = jac.blocks[0][..., m:, :].reshape(jac.blocks[0].shape[:-2] + (nw, m, n))
    return h0, H, Dm, Dx


def quadratize_costs(model, xs, us):
    n = model.n

    def running(z):
        return model.running_cost(z[..., :n], z[..., n:])

    c, g, h = hessian_quadratize(running, np.concatenate([xs[..., :-1, :], us], axis=-1))
    cT, gT, hT = hessian_quadratize(model.final_cost, xs[..., -1, :])
    return c, g[..., :n], g[..., n:], h[..., :n, :n], h[..., n:, n:], h[..., n:, :n], cT, gT, hT


def linearize(model, xs, us, observation=None):
    """Linearize dynamics/noise, quadratize costs and (optionally) linearize
    the observation model along a nominal ``xs (..., T, n)``, ``us (..., T-1, u)``."""
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    f0, A, B, G, Gx, Gu = linearize_dynamics(model, xs[..., :-1, :], us)
    c, lx, lu, lxx, luu, lux, cT, gT, hT = quadratize_costs(model, xs, us)
    obs = {}
    if observation is None:
        observation = model.partial
    if observation:
        h0, H, Dm, Dx = linearize_observation(model, xs[..., :-1, :])
        obs = dict(h0=h0, H=H, Dm=Dm, Dx=Dx)
    return Linearization(f0, A, B, G, Gx, Gu, c, lx, lu, lxx, luu, lux, cT, gT, hT, **obs)


def _solve_psd_right(X, S):
    """``X @ inv(S)`` for symmetric PSD ``S`` with jitter (pseudo-inverse if S = 0)."""
    try:
        chol = jittered_cholesky(S)
    except SingularCovariance:
        return X @ np.linalg.pinv(S, hermitian=True)
    y = np.linalg.solve(chol, _t(X))
    return _t(np.linalg.solve(_t(chol), y))


def ekf_gains(model, lin):
    """Kalman gains of the filter linearized along the nominal.

    The filter is predictive: ``b_{t+1} = f(b_t, u_t, 0) + K_t (y_t - h(b_t, 0))``
    where ``y_t`` observes ``x_t``; ``P_t`` is the covariance of ``x_t`` given
    ``y_{1:t-1}``.
    """
    batch = lin.A.shape[:-3]
    steps = lin.A.shape[-3]
    n, m = model.n, model.m
    P = np.empty(batch + (steps + 1, n, n))
    K = np.empty(batch + (steps, n, m))
    P[..., 0, :, :] = np.broadcast_to(model.belief_cov, batch + (n, n))
    for t in range(steps):
        A, H, Pt = lin.A[..., t, :, :], lin.H[..., t, :, :], P[..., t, :, :]
        Dm, G = lin.Dm[..., t, :, :], lin.G[..., t, :, :]
        S = H @ Pt @ _t(H) + Dm @ _t(Dm)
        K[..., t, :, :] = _solve_psd_right(A @ Pt @ _t(H), S)
        Kt = K[..., t, :, :]
        P[..., t + 1, :, :] = symmetrize(A @ Pt @ _t(A) + G @ _t(G) - Kt @ S @ _t(Kt))
    return FilterGains(K=K, P=P)


def _regularize_quu(Quu, floor, mu=0.0):
    if mu:
        Quu = Quu + mu * np.eye(Quu.shape[-1])
    return project_psd(Quu, floor)


def _backward(lin, gains, floor, mu, limit, defect=None):
    """LQ backward recursion, with the filter-aware terms when ``gains`` is given.

    Fully observable: value ``1/2 dx' S dx + s' dx`` over the state deviation,
    with control-dependent noise entering through ``S``.

    Partially observable: value ``1/2 xh' Sx xh + sx' xh + 1/2 e' Se e`` over
    the estimate deviation ``xh`` and estimation error ``e``. Motor noise
    enters the error (weighted by ``Se``), observation noise enters estimate
    and error through the gain (weighted by ``K' (Sx + Se) K``). The
    state-dependence of the observation noise is what makes the policy
    seek informative states.

    ``defect[t] = f(x_t, u_t) - x_{t+1}`` is zero along a rollout. Around
    observed data it is not, and it shifts the linear value term so that
    the affine law stays exact for linear dynamics.
    """
    steps = lin.A.shape[-3]
    n, nu = lin.B.shape[-2], lin.B.shape[-1]
    batch = lin.A.shape[:-3]
    L = np.empty(batch + (steps, nu, n))
    l = np.empty(batch + (steps, nu))
    Quu_out = np.empty(batch + (steps, nu, nu))
    Sx, sx = lin.fxx_final, lin.fx_final
    Se = lin.fxx_final
    for t in range(steps - 1, -1, -1):
        A, B = lin.A[..., t, :, :], lin.B[..., t, :, :]
        G, Gx, Gu = lin.G[..., t, :, :], lin.Gx[..., t, :, :, :], lin.Gu[..., t, :, :, :]
        M = Sx if gains is None else Se
        # the value gradient where the linearized step lands, off the next nominal state
        s_next = sx if defect is None else sx + _mv(Sx, defect[..., t, :])
        Qx = lin.lx[..., t, :] + _mv(_t(A), s_next) + _noise_vec(Gx, M, G)
        Qu = lin.lu[..., t, :] + _mv(_t(B), s_next) + _noise_vec(Gu, M, G)
        MGx = M[..., None, :, :] @ Gx
        GxMGx = (_t(Gx) @ MGx).sum(-3)
        Qxx = lin.lxx[..., t, :, :] + _t(A) @ Sx @ A + GxMGx
        Quu = lin.luu[..., t, :, :] + _t(B) @ Sx @ B + _noise_mat(Gu, M, Gu)
        Qux = lin.lux[..., t, :, :] + _t(B) @ Sx @ A + (_t(Gu) @ MGx).sum(-3)
        if gains is not None:
            K = gains.K[..., t, :, :]
            H, Dm, Dx = lin.H[..., t, :, :], lin.Dm[..., t, :, :], lin.Dx[..., t, :, :, :]
            N = _t(K) @ (Sx + Se) @ K
            DxNDx = _noise_mat(Dx, N, Dx)
            Qx = Qx + _noise_vec(Dx, N, Dm)
            Qxx = Qxx + DxNDx
            KH = K @ H
            AKH = A - KH
            Se_new = lin.lxx[..., t, :, :] + _t(KH) @ Sx @ KH + _t(AKH) @ Se @ AKH + GxMGx + DxNDx
        Quu = _regularize_quu(symmetrize(Quu), floor, mu)
        Lt = -np.linalg.solve(Quu, Qux)
        lt = -np.linalg.solve(Quu, Qu[..., None])[..., 0]
        Sx = symmetrize(Qxx + _t(Lt) @ Quu @ Lt + _t(Lt) @ Qux + _t(Qux) @ Lt)
        sx = Qx + _mv(_t(Lt), _mv(Quu, lt) + Qu) + _mv(_t(Qux), lt)
        if gains is not None:
            Se = symmetrize(Se_new)
        if not (np.all(np.isfinite(Sx)) and np.all(np.isfinite(Lt))):
            raise NonFiniteValue(f"non-finite value function at step {t}")
        if np.max(np.abs(Sx)) > limit or (gains is not None and np.max(np.abs(Se)) > limit):
            raise DivergedValueRecursion(f"value Hessian exceeded {limit:g} at step {t}")
        L[..., t, :, :], l[..., t, :], Quu_out[..., t, :, :] = Lt, lt, Quu
    return L, l, Quu_out


def ilqg_backward_pass(model, x_nom, u_nom, settings=None, gains=None, lin=None, mu=0.0):
    """One backward pass around a nominal trajectory.

    Args:
        model: the POMDP.
        x_nom: nominal states ``(..., T, n)``.
        u_nom: nominal controls ``(..., T-1, u)``.
        gains: filter gains for the partially observable recursion; None
            gives the fully observable one.
        lin: precomputed linearization along the same nominal.
        mu: extra Levenberg regularization added to ``Quu``.

    Returns:
        ControlLaw around the nominal.
    """
    settings = settings or SolverSettings()
    x_nom = np.asarray(x_nom, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    if not (np.all(np.isfinite(x_nom)) and np.all(np.isfinite(u_nom))):
        raise NonFiniteValue("nominal trajectory is not finite")
    if lin is None:
        lin = linearize(model, x_nom, u_nom, observation=gains is not None)
    defect = lin.f0 - x_nom[..., 1:, :]
    L, l, Quu = _backward(lin, gains, settings.reg_floor, mu, settings.value_hessian_limit, defect)
    return ControlLaw(L, l, Quu, x_nom, u_nom, settings.alpha(model))


def rollout(model, law, step=1.0):
    """Noiseless closed-loop rollout of ``u = u_nom + step * m + L (x - x_nom)``."""
    steps = law.u_nom.shape[-2]
    xs = np.empty(law.x_nom.shape)
    us = np.empty(law.u_nom.shape)
    xs[..., 0, :] = model.x1
    for t in range(steps):
        x = xs[..., t, :]
        u = (
            law.u_nom[..., t, :]
            + step * law.m[..., t, :]
            + np.einsum("...ij,...j->...i", law.L[..., t, :, :], x - law.x_nom[..., t, :])
        )
        us[..., t, :] = u
        xs[..., t + 1, :] = model.f0(x, u)
    return xs, us


def expected_cost(model, xs, us, law, gains=None, lin=None):
    """Second-order estimate of the closed-loop expected cost around a nominal.

    State (and, with ``gains``, belief) deviations are propagated through the
    linearized closed loop, including motor noise, observation noise, MCE
    policy noise and the initial belief uncertainty. The cost adds
    ``1/2 tr(Hessian @ covariance)`` to the deterministic cost at each step.
    """
    partial = gains is not None
    if lin is None:
        lin = linearize(model, xs, us, observation=partial)
    n = model.n
    C = law.policy_chol()
    total = np.sum(lin.cost, axis=-1) + lin.final_cost
    steps = lin.A.shape[-3]
    if partial:
        cov = np.zeros((2 * n, 2 * n))
        cov[n:, n:] = model.belief_cov
    else:
        cov = np.zeros((n, n))
    for t in range(steps):
        A, B, G = lin.A[t], lin.B[t], lin.G[t]
        Lt, Ct = law.L[t], C[t]
        if partial:
            sxx, sxb, sbb = cov[:n, :n], cov[:n, n:], cov[n:, n:]
            suu = Lt @ sbb @ Lt.T + Ct @ Ct.T
            sxu = sxb @ Lt.T
        else:
            sxx = cov
            suu = Lt @ cov @ Lt.T + Ct @ Ct.T
            sxu = cov @ Lt.T
        total = total + 0.5 * np.trace(lin.lxx[t] @ sxx) + np.trace(lin.lux[t] @ sxu) + 0.5 * np.trace(lin.luu[t] @ suu)
        BL, BC = B @ Lt, B @ Ct
        if partial:
            K, H, Dm = gains.K[t], lin.H[t], lin.Dm[t]
            J = np.block([[A, BL], [K @ H, A - K @ H + BL]])
            Jv = np.vstack([G, np.zeros_like(G)])
            Jw = np.vstack([np.zeros((n, Dm.shape[1])), K @ Dm])
            Jxi = np.vstack([BC, BC])
            cov = J @ cov @ J.T + Jv @ Jv.T + Jw @ Jw.T + Jxi @ Jxi.T
        else:
            Acl = A + BL
            cov = Acl @ cov @ Acl.T + G @ G.T + BC @ BC.T
    sT = cov[:n, :n]
    return float(total + 0.5 * np.trace(lin.fxx_final @ sT))


@dataclass
class IlqgResult:
    law: ControlLaw
    gains: Optional[FilterGains]
    x_nom: np.ndarray
    u_nom: np.ndarray
    cost: float
    iterations: int
    converged: bool
    cost_history: list = field(default_factory=list)


def ilqg_solve(model, settings=None, variant=None, planner=None):
    """Iterate backward passes and line-searched rollouts to a local optimum.

    Args:
        model: the POMDP.
        settings: SolverSettings.
        variant: ``"full"`` or ``"partial"``; defaults to the model's.
        planner: for partially observable models, ``"belief"`` (the
            filter-aware backward pass) or ``"certainty-equivalent"`` (fully
            observable controller run on the EKF estimate).

    Returns:
        IlqgResult. The objective of the line search is ``expected_cost``;
        when ``max_iter`` is exhausted a NoConvergenceWarning is emitted and
        the last iterate is returned with ``converged=False``.
    """
    settings = settings or SolverSettings()
    variant = variant or ("partial" if model.partial else "full")
    partial = variant == "partial"
    if partial and not model.partial:
        raise ValueError(f"model {model.name!r} has no observation model")
    planner = planner or "belief"
    filter_aware = partial and planner == "belief"

    alpha = settings.alpha(model)
    us = model.u_init.copy()
    law0 = ControlLaw(
        np.zeros((model.T - 1, model.u_dim, model.n)), np.zeros_like(us),
        np.tile(np.eye(model.u_dim), (model.T - 1, 1, 1)), np.zeros((model.T, model.n)), us, alpha,
    )
    xs, us = rollout(model, replace(law0, x_nom=np.zeros((model.T, model.n))))

    def evaluate(xs, us):
        lin = linearize(model, xs, us, observation=partial)
        gains = ekf_gains(model, lin) if partial else None
        return lin, gains

    kind = settings.objective or ("expected" if filter_aware else "deterministic")

    def objective(xs, us, law, gains, lin):
        if kind == "deterministic":
            return float(model.trajectory_cost(xs, us))
        return expected_cost(model, xs, us, law, gains, lin)

    lin, gains = evaluate(xs, us)
    # law_mu is the regularization baked into the current law; mu moves on
    mu = law_mu = 0.0
    law = ilqg_backward_pass(model, xs, us, settings, gains if filter_aware else None, lin)
    cost = objective(xs, us, law, gains, lin)
    history = [cost]
    converged = False
    it = 0
    for it in range(1, settings.max_iter + 1):
        accepted = None
        for step in settings.line_search:
            xs_new, us_new = rollout(model, law, step)
            if not np.all(np.isfinite(xs_new)):
                continue
            lin_new, gains_new = evaluate(xs_new, us_new)
            try:
                law_new = ilqg_backward_pass(
                    model, xs_new, us_new, settings, gains_new if filter_aware else None, lin_new, mu
                )
            except (DivergedValueRecursion, NonFiniteValue):
                continue
            cost_new = objective(xs_new, us_new, law_new, gains_new, lin_new)
            if cost_new < cost:
                accepted = (xs_new, us_new, lin_new, gains_new, law_new, cost_new)
                break
        if accepted is None:
            if mu < 1e6:
                mu = max(10.0 * mu, 1e-6)
                law = ilqg_backward_pass(model, xs, us, settings, gains if filter_aware else None, lin, mu)
                law_mu = mu
                continue
            converged = True
            break
        change = np.max(np.abs(accepted[0] - xs))
        xs, us, lin, gains, law, cost = accepted
        law_mu = mu
        history.append(cost)
        mu = 0.0 if mu <= 1e-6 else mu / 10.0
        if change < settings.tol:
            converged = True
            break
    if law_mu:
        law = ilqg_backward_pass(model, xs, us, settings, gains if filter_aware else None, lin)
    if not converged:
        warnings.warn(f"iLQG stopped after {settings.max_iter} iterations", NoConvergenceWarning)
    return IlqgResult(law, gains, xs, us, cost, it, converged, history)


def ekf_step(model, b, u, y, K):
    """``b' = f(b, u, 0) + K (y - h(b, 0))``."""
    b = np.asarray(b, dtype=float)
    innovation = np.asarray(y, dtype=float) - model.h0(b)
    return model.f0(b, u) + np.einsum("...ij,...j->...i", K, innovation)


def mce_policy_sample(law, b, xi, t):
    """Sample ``u = L (b - x_nom) + m + u_nom + chol(temperature * inv(Quu)) xi``."""
    noise = np.einsum("...ij,...j->...i", law.policy_chol()[..., t, :, :], xi)
    return law.mean(b, t) + noise


def simulate(model, law, gains=None, n_traj=50, seed=0, variant=None, task=None):
    """Closed-loop stochastic rollouts.

    Trajectory ``k`` draws all its noise from ``default_rng(mix_seed(seed, k))``,
    so datasets are reproducible and extendable. A partially observable agent
    starts from a belief mean drawn from ``N(x1, belief_cov)`` and filters
    with the fixed ``gains``.

    Returns:
        Dataset whose trajectories keep the executed controls for diagnostics.
        Trajectories that turn non-finite are dropped and their seeds listed
        in ``metadata["failed_seeds"]``.
    """
    variant = variant or ("partial" if model.partial else "full")
    partial = variant == "partial"
    if partial and gains is None:
        raise ValueError("a partially observable simulation needs filter gains")
    n, nu, T = model.n, model.u_dim, model.T
    seeds = [mix_seed(seed, k) for k in range(n_traj)]
    meta = {"T": T, "n": n, "temperature": law.temperature, "variant": variant}
    if n_traj == 0:
        return Dataset(task or model.name, model.theta, [], variant, int(seed), dict(meta, failed_seeds=[]))
    nv, nw = model.v_dim, model.w_dim if partial else 0
    v = np.empty((n_traj, T - 1, nv))
    w = np.empty((n_traj, T - 1, nw))
    xi = np.empty((n_traj, T - 1, nu))
    z0 = np.empty((n_traj, n))
    for k, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        z0[k] = rng.standard_normal(n)
        v[k] = rng.standard_normal((T - 1, nv))
        xi[k] = rng.standard_normal((T - 1, nu))
        w[k] = rng.standard_normal((T - 1, nw))
    xs = np.empty((n_traj, T, n))
    us = np.empty((n_traj, T - 1, nu))
    xs[:, 0] = model.x1
    if partial:
        w_eig, v_eig = np.linalg.eigh(model.belief_cov)
        root = v_eig * np.sqrt(np.clip(w_eig, 0, None))
        b = model.x1 + z0 @ root.T
    chol = law.policy_chol()
    with np.errstate(all="ignore"):
        for t in range(T - 1):
            x = xs[:, t]
            est = b if partial else x
            u = law.mean(est, t) + xi[:, t] @ chol[t].T
            us[:, t] = u
            xs[:, t + 1] = model.dynamics(x, u, v[:, t])
            if partial:
                y = model.observation(x, w[:, t])
                b = ekf_step(model, b, u, y, gains.K[t])
    ok = np.all(np.isfinite(xs), axis=(1, 2)) & np.all(np.isfinite(us), axis=(1, 2))
    trajs = [Trajectory(xs[k], us[k], seeds[k]) for k in range(n_traj) if ok[k]]
    meta["failed_seeds"] = [int(seeds[k]) for k in range(n_traj) if not ok[k]]
    return Dataset(task or model.name, model.theta, trajs, variant, int(seed), meta)
