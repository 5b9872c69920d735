"""Hot numeric kernels: pairwise transport costs and particle-grid transfer.

Each kernel exists twice: a numba @njit version and a pure-numpy
fallback.  Both are deterministic (fixed reduction order for a given
path), agree to roundoff, and are selected once at import.  Set
KINWASS_NO_NUMBA=1 to force the numpy path; benchmarks/bench_kernels.py
compares the two.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("KINWASS_NO_NUMBA", "0") != "1"
if USE_NUMBA:
    try:
        from numba import njit, prange
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if not USE_NUMBA:  # no-op decorators so the same source defines both paths
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        if args and callable(args[0]):
            return args[0]
        return wrap

    def prange(n):
        return range(n)


# -- pairwise phase-space costs ------------------------------------------

def _sq_dists_np(x1, v1, x2, v2, torus):
    """Squared pairwise distances (position, velocity)."""
    dx = np.abs(x1[:, None, :] - x2[None, :, :])
    if torus:
        dx = np.minimum(dx, 1.0 - dx)
    dv = v1[:, None, :] - v2[None, :, :]
    return np.sum(dx * dx, axis=2), np.sum(dv * dv, axis=2)


@njit(cache=True, parallel=True)
def _sq_dists_nb(x1, v1, x2, v2, torus):  # pragma: no cover - jit
    n, d = x1.shape
    m = x2.shape[0]
    sq_pos = np.empty((n, m))
    sq_vel = np.empty((n, m))
    for i in prange(n):
        for j in range(m):
            sx = 0.0
            sv = 0.0
            for k in range(d):
                dx = abs(x1[i, k] - x2[j, k])
                if torus and dx > 1.0 - dx:
                    dx = 1.0 - dx
                sx += dx * dx
                dv = v1[i, k] - v2[j, k]
                sv += dv * dv
            sq_pos[i, j] = sx
            sq_vel[i, j] = sv
    return sq_pos, sq_vel


def _pow_half(sq, p):
    """dist^p from squared distances, with fast paths for p = 1, 2."""
    if p == 2.0:
        return sq
    if p == 1.0:
        return np.sqrt(sq)
    return sq ** (p / 2.0)


def pair_costs(x1, v1, x2, v2, p, torus):
    """cost_pos[i,j] = dist(x1_i, x2_j)^p, cost_vel likewise for velocities."""
    p = float(p)
    if USE_NUMBA:
        sq_pos, sq_vel = _sq_dists_nb(
            np.ascontiguousarray(x1), np.ascontiguousarray(v1),
            np.ascontiguousarray(x2), np.ascontiguousarray(v2), bool(torus))
    else:
        sq_pos, sq_vel = _sq_dists_np(x1, v1, x2, v2, bool(torus))
    return _pow_half(sq_pos, p), _pow_half(sq_vel, p)


# -- cloud-in-cell deposit / gather --------------------------------------

def _cic_weights(pos, grid_n):
    """Lower cell index and weight of the lower node, per axis."""
    g = pos * grid_n
    i0 = np.floor(g).astype(np.int64)
    frac = g - i0
    return i0 % grid_n, frac


def _deposit_np(x, w, grid_n):
    npart, d = x.shape
    if d == 1:
        i0, f = _cic_weights(x[:, 0], grid_n)
        i1 = (i0 + 1) % grid_n
        rho = np.bincount(i0, weights=w * (1 - f), minlength=grid_n)
        rho += np.bincount(i1, weights=w * f, minlength=grid_n)
        return rho
    if d == 2:
        i0, fx = _cic_weights(x[:, 0], grid_n)
        j0, fy = _cic_weights(x[:, 1], grid_n)
        i1 = (i0 + 1) % grid_n
        j1 = (j0 + 1) % grid_n
        rho = np.zeros(grid_n * grid_n)
        for ii, jj, ww in ((i0, j0, (1 - fx) * (1 - fy)),
                           (i0, j1, (1 - fx) * fy),
                           (i1, j0, fx * (1 - fy)),
                           (i1, j1, fx * fy)):
            rho += np.bincount(ii * grid_n + jj, weights=w * ww,
                               minlength=grid_n * grid_n)
        return rho.reshape(grid_n, grid_n)
    raise ValueError("deposit supports d in {1, 2}")


@njit(cache=True)
def _deposit_1d_nb(x, w, grid_n):  # pragma: no cover - jit
    rho = np.zeros(grid_n)
    for i in range(x.shape[0]):
        g = x[i, 0] * grid_n
        i0 = int(np.floor(g))
        f = g - i0
        i0 = i0 % grid_n
        i1 = (i0 + 1) % grid_n
        rho[i0] += w[i] * (1.0 - f)
        rho[i1] += w[i] * f
    return rho


@njit(cache=True)
def _deposit_2d_nb(x, w, grid_n):  # pragma: no cover - jit
    rho = np.zeros((grid_n, grid_n))
    for i in range(x.shape[0]):
        gx = x[i, 0] * grid_n
        gy = x[i, 1] * grid_n
        ix = int(np.floor(gx))
        iy = int(np.floor(gy))
        fx = gx - ix
        fy = gy - iy
        ix = ix % grid_n
        iy = iy % grid_n
        jx = (ix + 1) % grid_n
        jy = (iy + 1) % grid_n
        rho[ix, iy] += w[i] * (1.0 - fx) * (1.0 - fy)
        rho[ix, jy] += w[i] * (1.0 - fx) * fy
        rho[jx, iy] += w[i] * fx * (1.0 - fy)
        rho[jx, jy] += w[i] * fx * fy
    return rho


def deposit_raw(x, w, grid_n):
    """Total CIC mass per node (sums to sum(w)); caller rescales to density."""
    if USE_NUMBA:
        x = np.ascontiguousarray(x)
        w = np.ascontiguousarray(w)
        if x.shape[1] == 1:
            return _deposit_1d_nb(x, w, grid_n)
        if x.shape[1] == 2:
            return _deposit_2d_nb(x, w, grid_n)
        raise ValueError("deposit supports d in {1, 2}")
    return _deposit_np(x, w, grid_n)


def _gather_np(field, x):
    grid_n = field.shape[0]
    d = x.shape[1]
    if d == 1:
        i0, f = _cic_weights(x[:, 0], grid_n)
        i1 = (i0 + 1) % grid_n
        return field[i0] * (1 - f) + field[i1] * f
    if d == 2:
        i0, fx = _cic_weights(x[:, 0], grid_n)
        j0, fy = _cic_weights(x[:, 1], grid_n)
        i1 = (i0 + 1) % grid_n
        j1 = (j0 + 1) % grid_n
        return (field[i0, j0] * (1 - fx) * (1 - fy)
                + field[i0, j1] * (1 - fx) * fy
                + field[i1, j0] * fx * (1 - fy)
                + field[i1, j1] * fx * fy)
    raise ValueError("gather supports d in {1, 2}")


@njit(cache=True)
def _gather_1d_nb(field, x):  # pragma: no cover - jit
    grid_n = field.shape[0]
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        g = x[i, 0] * grid_n
        i0 = int(np.floor(g))
        f = g - i0
        i0 = i0 % grid_n
        i1 = (i0 + 1) % grid_n
        out[i] = field[i0] * (1.0 - f) + field[i1] * f
    return out


@njit(cache=True)
def _gather_2d_nb(field, x):  # pragma: no cover - jit
    grid_n = field.shape[0]
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        gx = x[i, 0] * grid_n
        gy = x[i, 1] * grid_n
        ix = int(np.floor(gx))
        iy = int(np.floor(gy))
        fx = gx - ix
        fy = gy - iy
        ix = ix % grid_n
        iy = iy % grid_n
        jx = (ix + 1) % grid_n
        jy = (iy + 1) % grid_n
        out[i] = (field[ix, iy] * (1.0 - fx) * (1.0 - fy)
                  + field[ix, jy] * (1.0 - fx) * fy
                  + field[jx, iy] * fx * (1.0 - fy)
                  + field[jx, jy] * fx * fy)
    return out


def gather(field, x):
    """Interpolate a grid field to particle positions with the CIC kernel.

    Uses the same kernel as the deposit, so the deposit/gather pair is
    adjoint and the discrete self-force conserves momentum.
    """
    if USE_NUMBA:
        field = np.ascontiguousarray(field)
        x = np.ascontiguousarray(x)
        if x.shape[1] == 1:
            return _gather_1d_nb(field, x)
        if x.shape[1] == 2:
            return _gather_2d_nb(field, x)
        raise ValueError("gather supports d in {1, 2}")
    return _gather_np(field, x)
