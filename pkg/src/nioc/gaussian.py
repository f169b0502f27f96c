"""Gaussian algebra used for beliefs and likelihood factors.

All functions accept arrays with arbitrary leading batch dimensions: a mean
of shape ``(..., d)`` goes with a covariance of shape ``(..., d, d)``.
"""

from dataclasses import InitVar, dataclass

import numpy as np

from nioc.exceptions import SingularCovariance

LOG_2PI = np.log(2.0 * np.pi)

JITTER_START = 1e-9
JITTER_STOP = 1e-3


def symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _cholesky_single(a):
    d = a.shape[-1]
    scale = np.trace(a) / d
    if not np.isfinite(scale) or scale <= 0.0:
        raise SingularCovariance(f"covariance has non-positive trace {np.trace(a)!r}")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    level = JITTER_START
    eye = np.eye(d)
    while level <= JITTER_STOP * (1 + 1e-12):
        try:
            return np.linalg.cholesky(a + level * scale * eye)
        except np.linalg.LinAlgError:
            level *= 10.0
    raise SingularCovariance("Cholesky failed after jitter escalation to 1e-3 * trace / d")


def jittered_cholesky(cov):
    """Lower Cholesky factor of ``cov + jitter * I``.

    No jitter is added when ``cov`` factorizes as is. Otherwise the jitter starts at ``1e-9 * trace / d`` and grows tenfold per failed
    attempt up to ``1e-3 * trace / d``.

    Raises:
        SingularCovariance: if the factorization still fails, or the trace
            is not positive.
    """
    cov = symmetrize(np.asarray(cov, dtype=float))
    d = cov.shape[-1]
    batch = cov.shape[:-2]
    trace = np.trace(cov, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(trace)) or np.any(trace <= 0.0):
        raise SingularCovariance("covariance has non-positive or non-finite trace")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    flat = cov.reshape((-1, d, d))
    out = np.empty_like(flat)
    for i, a in enumerate(flat):
        out[i] = _cholesky_single(a)
    return out.reshape(batch + (d, d))


def solve_lower(chol, b):
    """Solve ``chol @ x = b`` for a batch of lower-triangular factors."""
    return np.linalg.solve(chol, b)


@dataclass(frozen=True)
class Gaussian:
    """Mean vector and covariance matrix, possibly batched.

    The covariance is symmetrized on construction. With ``validate`` the
    smallest eigenvalue must be at least ``-1e-8 * trace``.
    """

    mean: np.ndarray
    cov: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        mean = np.asarray(self.mean, dtype=float)
        cov = symmetrize(np.asarray(self.cov, dtype=float))
        if cov.shape[-2:] != (mean.shape[-1], mean.shape[-1]):
            raise ValueError(f"mean {mean.shape} and cov {cov.shape} do not match")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if validate:
            eig = np.linalg.eigvalsh(cov)
            tr = np.trace(cov, axis1=-2, axis2=-1)
            if np.any(eig[..., 0] < -1e-8 * np.abs(tr)):
                raise ValueError("covariance is not positive semi-definite")

    @property
    def dim(self):
        return self.mean.shape[-1]

    def sample(self, rng, size=None):
        # eigh-based square root tolerates singular covariances
        w, v = np.linalg.eigh(self.cov)
        root = v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        z = rng.standard_normal(shape + self.mean.shape)
        return self.mean + np.einsum("...ij,...j->...i", root, z)


@dataclass(frozen=True)
class GaussianJoint:
    """Joint Gaussian over a state block ``x`` and a belief block ``b``."""

    mean_x: np.ndarray
    mean_b: np.ndarray
    cov_xx: np.ndarray
    cov_xb: np.ndarray
    cov_bb: np.ndarray

    @classmethod
    def from_full(cls, mean, cov, nx):
        mean = np.asarray(mean, dtype=float)
        cov = symmetrize(np.asarray(cov, dtype=float))
        return cls(
            mean_x=mean[..., :nx],
            mean_b=mean[..., nx:],
            cov_xx=cov[..., :nx, :nx],
            cov_xb=cov[..., :nx, nx:],
            cov_bb=cov[..., nx:, nx:],
        )

    @property
    def mean(self):
        return np.concatenate([self.mean_x, self.mean_b], axis=-1)

    @property
    def cov(self):
        top = np.concatenate([self.cov_xx, self.cov_xb], axis=-1)
        bottom = np.concatenate([np.swapaxes(self.cov_xb, -1, -2), self.cov_bb], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    def as_gaussian(self, validate=True):
        return Gaussian(self.mean, self.cov, validate=validate)


def gaussian_marginal(joint, which):
    """Select the ``"x"`` or ``"b"`` block of a joint Gaussian."""
    if which == "x":
        return Gaussian(joint.mean_x, joint.cov_xx, validate=False)
    if which == "b":
        return Gaussian(joint.mean_b, joint.cov_bb, validate=False)
    raise ValueError(f"which must be 'x' or 'b', got {which!r}")


def _project(basis, mean_x, cov_xx, cov_xb, x):
    if basis is None:
        return mean_x, cov_xx, cov_xb, x
    bt = np.swapaxes(basis, -1, -2)
    return (
        np.einsum("...ki,...i->...k", bt, mean_x),
        bt @ cov_xx @ basis,
        bt @ cov_xb,
        np.einsum("...ki,...i->...k", bt, x),
    )


def gaussian_condition(joint, observed_x, basis=None):
    """Posterior of the belief block given an observed state block.

    Args:
        joint: the joint Gaussian.
        observed_x: value of the ``x`` block, shape ``(..., nx)``.
        basis: optional orthonormal basis ``(..., nx, k)`` of the subspace in
            which ``x`` is random; directions outside it are treated as
            deterministic and carry no information about ``b``.

    Returns:
        Gaussian over ``b``.
    """
    observed_x = np.asarray(observed_x, dtype=float)
    mx, sxx, sxb, x = _project(basis, joint.mean_x, joint.cov_xx, joint.cov_xb, observed_x)
    chol = jittered_cholesky(sxx)
    w = solve_lower(chol, sxb)
    r = solve_lower(chol, (x - mx)[..., None])[..., 0]
    mean = joint.mean_b + np.einsum("...ki,...k->...i", w, r)
    cov = joint.cov_bb - np.swapaxes(w, -1, -2) @ w
    return Gaussian(mean, cov, validate=False)


def gaussian_logpdf(g, x, basis=None):
    """Multivariate normal log-density via a Cholesky factorization.

    With ``basis`` the density is taken over the coordinates ``basis.T @ x``.
    """
    x = np.asarray(x, dtype=float)
    if basis is None:
        mean, cov, xx = g.mean, g.cov, x
    else:
        bt = np.swapaxes(basis, -1, -2)
        mean = np.einsum("...ki,...i->...k", bt, g.mean)
        cov = bt @ g.cov @ basis
        xx = np.einsum("...ki,...i->...k", bt, x)
    chol = jittered_cholesky(cov)
    z = solve_lower(chol, (xx - mean)[..., None])[..., 0]
    k = mean.shape[-1]
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * (k * LOG_2PI + logdet + np.sum(z * z, axis=-1))
