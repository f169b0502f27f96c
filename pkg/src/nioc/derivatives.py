"""Finite-difference Jacobians and cost quadratization.

Functions handed to this module must broadcast over leading dimensions:
``fn(z)`` with ``z`` of shape ``(..., d)`` returns ``(..., k)`` (vector
functions) or ``(...)`` (scalar functions). Every probe of a call is then
evaluated in one vectorized call.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from nioc.exceptions import NonFiniteValue

JACOBIAN_STEP = 1e-3
HESSIAN_STEP = 1e-2
PSD_FLOOR = 1e-8


@dataclass(frozen=True)
class JacobianSet:
    """Value of a function and its Jacobian blocks at one (batched) point.

    Attributes:
        value: ``fn(point)``, shape ``(..., k)``.
        blocks: one ``(..., k, d_g)`` matrix per argument group.
    """

    value: np.ndarray
    blocks: tuple

    @property
    def full(self):
        return np.concatenate(self.blocks, axis=-1)

    def __iter__(self):
        return iter(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]


def _steps(point, scale):
    return np.maximum(scale, scale * np.abs(point))


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue("function returned NaN or inf at a finite-difference probe")


def jacobian(fn, point, group_sizes=None, step=JACOBIAN_STEP):
    """Central finite-difference Jacobian of a vector function.

    The step for coordinate ``i`` is ``max(step, step * |point_i|)``.

    Args:
        fn: vector function of one stacked argument, broadcasting over
            leading dimensions.
        point: evaluation point ``(..., d)``.
        group_sizes: sizes of consecutive argument groups; defaults to a
            single group.

    Returns:
        JacobianSet with ``fn(point)`` and one block per group.

    Raises:
        NonFiniteValue: if ``fn`` is NaN/inf at any probe.
    """
    point = np.asarray(point, dtype=float)
    d = point.shape[-1]
    if group_sizes is None:
        group_sizes = (d,)
    if sum(group_sizes) != d:
        raise ValueError(f"group sizes {group_sizes} do not add up to {d}")
    h = _steps(point, step)
    offsets = h[..., :, None] * np.eye(d)
    probes = np.concatenate(
        [point[..., None, :], point[..., None, :] + offsets, point[..., None, :] - offsets],
        axis=-2,
    )
    values = np.asarray(fn(probes), dtype=float)
    _check_finite(values)
    center = values[..., 0, :]
    diff = (values[..., 1 : d + 1, :] - values[..., d + 1 :, :]) / (2.0 * h[..., :, None])
    jac = np.swapaxes(diff, -1, -2)
    blocks = tuple(np.split(jac, np.cumsum(group_sizes)[:-1], axis=-1))
    return JacobianSet(value=center, blocks=blocks)


@lru_cache(maxsize=None)
def _hessian_stencil(d):
    """Offsets (in units of the step) and combination weights.

    Second differences at steps h and 2h are combined by Richardson
    extrapolation, which cancels the leading O(h^2) truncation error.
    """
    offsets = [np.zeros(d)]
    index = {}

    def add(vec):
        key = tuple(vec)
        if key not in index:
            index[key] = len(offsets)
            offsets.append(np.array(vec, dtype=float))
        return index[key]

    index[tuple(np.zeros(d))] = 0
    grad = []
    hess = {}
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        p1, m1, p2, m2 = add(e), add(-e), add(2 * e), add(-2 * e)
        grad.append({p1: 4 / 6, m1: -4 / 6, p2: -1 / 12, m2: 1 / 12})
        hess[i, i] = {p1: 4 / 3, m1: 4 / 3, 0: -8 / 3 + 2 / 12, p2: -1 / 12, m2: -1 / 12}
    for i in range(d):
        for j in range(i + 1, d):
            w = {}
            for scale, weight in ((1.0, 4 / 3 / 4), (2.0, -1 / 3 / 16)):
                for si in (1.0, -1.0):
                    for sj in (1.0, -1.0):
                        v = np.zeros(d)
                        v[i], v[j] = si * scale, sj * scale
                        k = add(v)
                        w[k] = w.get(k, 0.0) + weight * si * sj
            hess[i, j] = w
    n = len(offsets)
    gcoef = np.zeros((d, n))
    for i, w in enumerate(grad):
        for k, c in w.items():
            gcoef[i, k] += c
    hcoef = np.zeros((d, d, n))
    for (i, j), w in hess.items():
        for k, c in w.items():
            hcoef[i, j, k] += c
            if i != j:
                hcoef[j, i, k] += c
    return np.array(offsets), gcoef, hcoef


def project_psd(mat, floor=PSD_FLOOR):
    """Symmetrize and clamp eigenvalues from below at ``floor``."""
    mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
    try:
        # fast path: already positive definite beyond the floor
        np.linalg.cholesky(mat - floor * np.eye(mat.shape[-1]))
        return mat
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(mat)
    if np.all(w >= floor):
        return mat
    w = np.maximum(w, floor)
    out = (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def hessian_quadratize(fn, point, step=HESSIAN_STEP, psd_floor=PSD_FLOOR):
    """Value, gradient and Hessian of a scalar function.

    Central differences at steps ``h`` and ``2h`` (``h_i = max(step,
    step * |point_i|)``) are Richardson-extrapolated. The Hessian is
    symmetrized and, unless ``psd_floor`` is None, its eigenvalues are
    clamped from below at ``psd_floor``.

    Returns:
        ``(value, gradient, hessian)`` with shapes ``(...)``, ``(..., d)``,
        ``(..., d, d)``.
    """
    point = np.asarray(point, dtype=float)
    d = point.shape[-1]
    offsets, gcoef, hcoef = _hessian_stencil(d)
    h = _steps(point, step)
    probes = point[..., None, :] + offsets * h[..., None, :]
    values = np.asarray(fn(probes), dtype=float)
    _check_finite(values)
    value = values[..., 0]
    grad = np.einsum("is,...s->...i", gcoef, values) / h
    hess = np.einsum("ijs,...s->...ij", hcoef, values) / (h[..., :, None] * h[..., None, :])
    if psd_floor is None:
        hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    else:
        hess = project_psd(hess, psd_floor)
    return value, grad, hess
