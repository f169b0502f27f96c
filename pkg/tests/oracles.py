"""Independent reference implementations used as test oracles.

Nothing here imports the package's solvers or likelihood code: each oracle
re-derives its answer from textbook linear-Gaussian formulas.
"""

import numpy as np
from scipy.stats import multivariate_normal

from nioc.model import PomdpModel


def riccati_affine(A, B, Q, R, Qf, x_star, x_final, T):
    """Finite-horizon LQR for ``1/2 (x-x*)'Q(x-x*) + 1/2 u'Ru`` and final ``1/2 (x-xf)'Qf(x-xf)``.

    Returns feedback gains ``L_t``, offsets ``k_t`` (``u = L x + k``) and the
    control Hessians ``R + B'S B`` for ``t = 1..T-1``.
    """
    S, s = Qf, -Qf @ x_final
    Ls, ks, Huu = [], [], []
    for _ in range(T - 1):
        Qxx = Q + A.T @ S @ A
        Quu = R + B.T @ S @ B
        Qux = B.T @ S @ A
        qx = -Q @ x_star + A.T @ s
        qu = B.T @ s
        L = -np.linalg.solve(Quu, Qux)
        k = -np.linalg.solve(Quu, qu)
        S = Qxx + Qux.T @ L
        S = 0.5 * (S + S.T)
        s = qx + Qux.T @ k
        Ls.append(L)
        ks.append(k)
        Huu.append(Quu)
    return Ls[::-1], ks[::-1], Huu[::-1]


def kalman_gains(A, G, H, D, P1, T):
    """Predictive Kalman gains ``K_t = A P_t H' (H P_t H' + D D')^-1``."""
    P = P1
    Ks, Ps = [], [P1]
    for _ in range(T - 1):
        S = H @ P @ H.T + D @ D.T
        K = A @ P @ H.T @ np.linalg.inv(S)
        P = A @ P @ A.T + G @ G.T - K @ S @ K.T
        Ks.append(K)
        Ps.append(P)
    return Ks, Ps


def kalman_filter_means(A, B, H, K, b1, us, ys):
    """Textbook predictive filter ``b' = A b + B u + K (y - H b)``."""
    b = [np.asarray(b1, dtype=float)]
    for t, (u, y) in enumerate(zip(us, ys)):
        b.append(A @ b[-1] + B @ u + K[t] @ (y - H @ b[-1]))
    return np.array(b)


class LinearGaussianPomdp:
    """Random linear dynamics, linear observation, quadratic cost."""

    def __init__(self, rng, n, m, nu, T, temperature, partial=True, max_radius=None):
        self.n, self.m, self.nu, self.T = n, m, nu, T
        self.temperature = temperature
        self.partial = partial
        self.A = np.eye(n) + 0.3 * rng.standard_normal((n, n))
        if max_radius is not None:
            radius = np.max(np.abs(np.linalg.eigvals(self.A)))
            self.A *= min(1.0, max_radius / radius)
        self.B = rng.standard_normal((n, nu))
        self.G = 0.2 * (np.eye(n) + 0.3 * rng.standard_normal((n, n)))
        self.H = rng.standard_normal((m, n))
        self.D = 0.3 * (np.eye(m) + 0.2 * rng.standard_normal((m, m)))
        q = rng.standard_normal((n, n))
        self.Q = 0.1 * q @ q.T
        r = rng.standard_normal((nu, nu))
        self.R = r @ r.T + 0.5 * np.eye(nu)
        self.Qf = 2.0 * np.eye(n)
        self.x_star = rng.standard_normal(n)
        self.x_final = rng.standard_normal(n)
        self.x1 = rng.standard_normal(n)
        p = rng.standard_normal((n, n))
        self.P1 = 0.05 * (p @ p.T + np.eye(n))

    def model(self):
        A, B, G, H, D = self.A, self.B, self.G, self.H, self.D
        Q, R, Qf, xs, xf = self.Q, self.R, self.Qf, self.x_star, self.x_final

        def quad(M, z):
            return 0.5 * np.einsum("...i,ij,...j->...", z, M, z)

        obs = {}
        if self.partial:
            obs = dict(observation=lambda x, w: x @ H.T + w @ D.T, m=self.m, w_dim=self.m)
        return PomdpModel(
            name="linear", n=self.n, u_dim=self.nu, v_dim=self.n, T=self.T,
            dynamics=lambda x, u, v: x @ A.T + u @ B.T + v @ G.T,
            running_cost=lambda x, u: quad(Q, x - xs) + quad(R, u),
            final_cost=lambda x: quad(Qf, x - xf),
            x1=self.x1, belief_cov=self.P1, temperature=self.temperature,
            variant="partial" if self.partial else "full", **obs,
        )

    def policy(self):
        Ls, ks, Huu = riccati_affine(self.A, self.B, self.Q, self.R, self.Qf, self.x_star, self.x_final, self.T)
        if self.temperature > 0:
            C = [np.linalg.cholesky(self.temperature * np.linalg.inv(h)) for h in Huu]
        else:
            C = [np.zeros((self.nu, self.nu)) for _ in Huu]
        return Ls, ks, C

    def sample(self, rng, n_traj, return_controls=False):
        Ls, ks, C = self.policy()
        Ks, _ = kalman_gains(self.A, self.G, self.H, self.D, self.P1, self.T)
        out = np.empty((n_traj, self.T, self.n))
        controls = np.empty((n_traj, self.T - 1, self.nu))
        for k in range(n_traj):
            x = self.x1.copy()
            b = self.x1 + np.linalg.cholesky(self.P1) @ rng.standard_normal(self.n)
            out[k, 0] = x
            for t in range(self.T - 1):
                est = b if self.partial else x
                u = Ls[t] @ est + ks[t] + C[t] @ rng.standard_normal(self.nu)
                controls[k, t] = u
                y = self.H @ x + self.D @ rng.standard_normal(self.m)
                x_next = self.A @ x + self.B @ u + self.G @ rng.standard_normal(self.n)
                b = self.A @ b + self.B @ u + Ks[t] @ (y - self.H @ b)
                x = x_next
                out[k, t + 1] = x
        return (out, controls) if return_controls else out

    def stacked_gaussian(self):
        """Mean and covariance of ``x_{2:T}`` stacked, by propagating affine maps of all noises.

        Noise vector: initial belief error, then per step ``(xi_t, v_t, w_t)``.
        """
        n, nu, m, T = self.n, self.nu, self.m, self.T
        Ls, ks, C = self.policy()
        Ks, _ = kalman_gains(self.A, self.G, self.H, self.D, self.P1, T)
        n_noise = n + (T - 1) * (nu + n + m)
        # x = cx + Mx @ eps and b = cb + Mb @ eps
        cx, Mx = self.x1.copy(), np.zeros((n, n_noise))
        cb, Mb = self.x1.copy(), np.zeros((n, n_noise))
        Mb[:, :n] = np.linalg.cholesky(self.P1)
        means, maps = [], []
        for t in range(T - 1):
            off = n + t * (nu + n + m)
            E_xi = np.zeros((nu, n_noise))
            E_xi[:, off : off + nu] = C[t]
            E_v = np.zeros((n, n_noise))
            E_v[:, off + nu : off + nu + n] = self.G
            E_w = np.zeros((m, n_noise))
            E_w[:, off + nu + n : off + nu + n + m] = self.D
            ce, Me = (cb, Mb) if self.partial else (cx, Mx)
            cu, Mu = Ls[t] @ ce + ks[t], Ls[t] @ Me + E_xi
            cx_new = self.A @ cx + self.B @ cu
            Mx_new = self.A @ Mx + self.B @ Mu + E_v
            cy, My = self.H @ cx, self.H @ Mx + E_w
            cb = self.A @ cb + self.B @ cu + Ks[t] @ (cy - self.H @ cb)
            Mb = self.A @ Mb + self.B @ Mu + Ks[t] @ (My - self.H @ Mb)
            cx, Mx = cx_new, Mx_new
            means.append(cx)
            maps.append(Mx)
        mean = np.concatenate(means)
        M = np.concatenate(maps)
        return mean, M @ M.T

    def exact_loglik(self, states):
        mean, cov = self.stacked_gaussian()
        dist = multivariate_normal(mean, cov)
        return np.array([dist.logpdf(s[1:].ravel()) for s in states])
