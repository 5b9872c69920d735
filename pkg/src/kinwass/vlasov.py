"""Particle-in-cell solver for Vlasov-Poisson dynamics on the unit torus.

Cloud-in-cell deposit/gather (adjoint pair), spectral Poisson solve,
leapfrog pusher with a Boris-style rotation for the magnetized variant,
plus the Yudovich-norm and force-regularity diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import growth
from ._kernels import deposit_raw, gather


class CflError(RuntimeError):
    pass


@dataclass
class ParticleEnsemble:
    x: np.ndarray            # (N, d) positions in [0,1)^d
    v: np.ndarray            # (N, d) velocities
    w: np.ndarray            # (N,) weights, sum 1; never mutated
    sigma: int = -1          # +1 gravitational, -1 electrostatic

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        self.w = np.asarray(self.w, dtype=float)
        if self.sigma not in (-1, 1):
            raise ValueError("sigma must be +1 or -1")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]


@dataclass
class FieldState:
    grid_n: int
    rho: np.ndarray                  # mean-one density on the grid
    potential: np.ndarray
    grad_u: tuple                    # one grid per axis
    t: float = 0.0


@dataclass
class MagneticField:
    """External field B(t, x): scalar out-of-plane in d=2, 3-vector in d=3."""

    fn: Callable
    sup_norm: float
    loglip_const: float = 0.0

    def sample_check(self, times, points, slack=1e-12):
        worst = 0.0
        for t in times:
            b = np.asarray(self.fn(t, np.atleast_2d(points)), dtype=float)
            worst = max(worst, float(np.max(np.abs(b))))
        return worst <= self.sup_norm + slack


def deposit(ensemble: ParticleEnsemble, grid_n: int) -> np.ndarray:
    """CIC density on the grid, rescaled to mean one (uniform background)."""
    if grid_n & (grid_n - 1) != 0:
        raise ValueError("grid_n must be a power of two")
    mass = deposit_raw(ensemble.x, ensemble.w, grid_n)
    return mass * grid_n ** ensemble.d


def poisson_force(rho: np.ndarray, sigma: int):
    """Spectral solve of sigma Lap U = rho - 1; returns (U, grad U per axis)."""
    mean = float(np.mean(rho))
    if abs(mean - 1.0) > 1e-10:
        raise ValueError(f"rho must have mean 1 (got {mean!r})")
    d = rho.ndim
    n = rho.shape[0]
    rho_hat = np.fft.fftn(rho - 1.0)
    k = np.fft.fftfreq(n, d=1.0 / n)
    if d == 1:
        k2 = (2 * np.pi * k) ** 2
    else:
        kx, ky = np.meshgrid(k, k, indexing="ij")
        k2 = (2 * np.pi) ** 2 * (kx ** 2 + ky ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_hat = rho_hat / (-sigma * k2)
    u_hat.flat[0] = 0.0
    potential = np.real(np.fft.ifftn(u_hat))
    grads = []
    if d == 1:
        grads.append(np.real(np.fft.ifftn(2j * np.pi * k * u_hat)))
    else:
        grads.append(np.real(np.fft.ifftn(2j * np.pi * kx * u_hat)))
        grads.append(np.real(np.fft.ifftn(2j * np.pi * ky * u_hat)))
    return potential, tuple(grads)


def solve_fields(ensemble: ParticleEnsemble, grid_n: int,
                 t: float = 0.0) -> FieldState:
    rho = deposit(ensemble, grid_n)
    potential, grads = poisson_force(rho, ensemble.sigma)
    return FieldState(grid_n=grid_n, rho=rho, potential=potential,
                      grad_u=grads, t=t)


def acceleration(fieldstate: FieldState, x: np.ndarray) -> np.ndarray:
    """-grad U interpolated to particle positions (CIC, same kernel as deposit)."""
    return np.column_stack([-gather(g, x) for g in fieldstate.grad_u])


def check_cfl(ensemble: ParticleEnsemble, fieldstate: FieldState, dt: float,
              c_cfl: float = 0.5):
    speed = np.max(np.abs(ensemble.v), axis=1)
    imax = int(np.argmax(speed))
    vmax = float(speed[imax])
    dx = 1.0 / fieldstate.grid_n
    if vmax > 0 and dt > c_cfl * dx / vmax:
        raise CflError(
            f"dt={dt:g} violates the CFL rule: particle {imax} with "
            f"|v|={vmax:g} needs dt <= {c_cfl * dx / vmax:g}")
    curv = float(np.max(np.abs(fieldstate.rho - 1.0)))
    if curv > 0 and dt > c_cfl / math.sqrt(curv):
        raise CflError(
            f"dt={dt:g} violates the field-curvature rule "
            f"(needs dt <= {c_cfl / math.sqrt(curv):g})")


def step_vp(ensemble: ParticleEnsemble, fieldstate: FieldState, dt: float,
            c_cfl: float = 0.5):
    """One kick-drift-kick leapfrog step; returns (ensemble', field')."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    check_cfl(ensemble, fieldstate, dt, c_cfl)
    v_half = ensemble.v + 0.5 * dt * acceleration(fieldstate, ensemble.x)
    x_new = (ensemble.x + dt * v_half) % 1.0
    new_field = solve_fields(replace(ensemble, x=x_new),
                             fieldstate.grid_n, t=fieldstate.t + dt)
    v_new = v_half + 0.5 * dt * acceleration(new_field, x_new)
    return replace(ensemble, x=x_new, v=v_new), new_field


def rotate_velocity(v: np.ndarray, b, angle_scale: float) -> np.ndarray:
    """Exact rotation of velocities by the magnetic force over angle_scale time.

    Speed |v| is preserved to machine precision.  b is per-particle:
    scalars (d=2, out-of-plane) or 3-vectors (d=3).
    """
    d = v.shape[1]
    if d == 2:
        ang = -np.asarray(b, dtype=float) * angle_scale
        c, s = np.cos(ang), np.sin(ang)
        return np.column_stack([c * v[:, 0] - s * v[:, 1],
                                s * v[:, 0] + c * v[:, 1]])
    if d == 3:
        b = np.atleast_2d(np.asarray(b, dtype=float))
        norm = np.sqrt(np.sum(b * b, axis=1))
        axis = np.where(norm[:, None] > 0, b / np.maximum(norm, 1e-300)[:, None], 0.0)
        ang = -norm * angle_scale
        c, s = np.cos(ang)[:, None], np.sin(ang)[:, None]
        cross = np.cross(axis, v)
        dot = np.sum(axis * v, axis=1)[:, None]
        return v * c + cross * s + axis * dot * (1 - c)
    raise ValueError("magnetic rotation needs d = 2 or 3")


def step_vpb(ensemble: ParticleEnsemble, fieldstate: FieldState, dt: float,
             bfield: MagneticField, c_cfl: float = 0.5):
    """Boris-split leapfrog step for the magnetized system.

    Half electric kick, half rotation, drift, half rotation, half kick;
    with B = 0 this reduces to step_vp exactly.  E = -grad U.
    """
    if ensemble.d == 1:
        raise ValueError("magnetized stepping needs d = 2 or 3")
    if dt <= 0:
        raise ValueError("dt must be positive")
    check_cfl(ensemble, fieldstate, dt, c_cfl)
    t = fieldstate.t
    v = ensemble.v + 0.5 * dt * acceleration(fieldstate, ensemble.x)
    v = rotate_velocity(v, bfield.fn(t, ensemble.x), 0.5 * dt)
    x_new = (ensemble.x + dt * v) % 1.0
    new_field = solve_fields(replace(ensemble, x=x_new),
                             fieldstate.grid_n, t=t + dt)
    v = rotate_velocity(v, bfield.fn(t + dt, x_new), 0.5 * dt)
    v_new = v + 0.5 * dt * acceleration(new_field, x_new)
    return replace(ensemble, x=x_new, v=v_new), new_field


def velocity_bound_rhs(v0_max: float, e_inf_series, times, b_sup: float):
    """Lemma bound |v| e^{tB} + int_0^t ||E(s)||_inf e^{(t-s)B} ds, per time.

    The integral of the measured force series is taken by trapezoid.
    """
    times = np.asarray(times, dtype=float)
    e_inf = np.asarray(e_inf_series, dtype=float)
    out = np.empty_like(times)
    for k, t in enumerate(times):
        integrand = e_inf[:k + 1] * np.exp((t - times[:k + 1]) * b_sup)
        out[k] = v0_max * math.exp(t * b_sup) + np.trapezoid(integrand,
                                                            times[:k + 1])
    return out


class YudovichNorm(NamedTuple):
    value: float
    r_attained: float


def lr_norm(rho: np.ndarray, r: float) -> float:
    """L^r norm on the unit torus (grid quadrature), overflow-safe."""
    a = np.abs(rho)
    m = float(np.max(a))
    if m == 0:
        return 0.0
    if math.isinf(r):
        return m
    return m * float(np.mean((a / m) ** r)) ** (1.0 / r)


def yudovich_norm(rho: np.ndarray, gf: growth.GrowthFunction,
                  r_grid) -> YudovichNorm:
    """max over the r grid of ||rho||_{L^r} / Theta(r)."""
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid[0] != 1 or np.any(np.diff(r_grid) <= 0):
        raise ValueError("r_grid must be increasing and contain 1")
    vals = np.array([lr_norm(rho, r) / gf.theta(r) for r in r_grid])
    k = int(np.argmax(vals))
    return YudovichNorm(float(vals[k]), float(r_grid[k]))


def moment_yudovich_norm(ensemble: ParticleEnsemble,
                         gf_bar: growth.GrowthFunction,
                         r_grid) -> YudovichNorm:
    """max over r of (sum w |v|^r)^{1/r} / Theta_bar(r)."""
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid[0] != 1 or np.any(np.diff(r_grid) <= 0):
        raise ValueError("r_grid must be increasing and contain 1")
    speed = np.sqrt(np.sum(ensemble.v ** 2, axis=1))
    m = float(np.max(speed, initial=0.0))
    if m == 0:
        return YudovichNorm(0.0, 1.0)
    vals = []
    for r in r_grid:
        moment = m * float(np.dot(ensemble.w, (speed / m) ** r)) ** (1.0 / r)
        vals.append(moment / gf_bar.theta(r))
    k = int(np.argmax(vals))
    return YudovichNorm(float(vals[k]), float(r_grid[k]))


DEFAULT_R_GRID = (1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128, 192, 256)


def force_regularity_probe(fieldstate: FieldState,
                           gf: growth.GrowthFunction, d: int,
                           n_pairs: int = 2000, seed: int = 0) -> dict:
    """Sample the force field's modulus-of-continuity and sup-norm ratios.

    Constants are recorded, not asserted: the dimensional constant in the
    continuity lemma is unknown, only boundedness across refinements is
    meaningful.
    """
    rng = np.random.default_rng(seed)
    xa = rng.random((n_pairs, d))
    # log-uniform separations: the modulus only bites at small |x - y|,
    # so independent uniform pairs would almost all sit on the plateau
    sep = np.exp(rng.uniform(math.log(1e-14), math.log(0.25), n_pairs))
    direction = rng.standard_normal((n_pairs, d))
    direction /= np.maximum(np.sqrt(np.sum(direction ** 2, axis=1)),
                            1e-300)[:, None]
    xb = (xa + direction * sep[:, None]) % 1.0
    ga = np.column_stack([gather(g, xa) for g in fieldstate.grad_u])
    gb = np.column_stack([gather(g, xb) for g in fieldstate.grad_u])
    diff = np.sqrt(np.sum((ga - gb) ** 2, axis=1))
    delta = np.abs(xa - xb)
    delta = np.minimum(delta, 1 - delta)
    dist = np.sqrt(np.sum(delta ** 2, axis=1))
    phi = np.array([growth.phi_theta(gf, d, s) for s in dist])
    ok = phi > 0
    ratio = diff[ok] / phi[ok]
    grad_inf = max(float(np.max(np.abs(g))) for g in fieldstate.grad_u)
    ynorm = yudovich_norm(fieldstate.rho, gf, DEFAULT_R_GRID).value
    out = {
        "max_modulus_ratio": float(np.max(ratio, initial=0.0)),
        "linf_ratio": grad_inf / (1.0 + ynorm),
        "slope": 0.0,
    }
    pos = ratio > 0
    if np.count_nonzero(pos) > 2:
        out["slope"] = float(np.polyfit(np.log(dist[ok][pos]),
                                        np.log(ratio[pos]), 1)[0])
    return out


def _uniform_ball(rng, n, d, radius):
    """Uniform samples in d-balls of per-row radius."""
    g = rng.standard_normal((n, d))
    g /= np.maximum(np.sqrt(np.sum(g * g, axis=1)), 1e-300)[:, None]
    u = rng.random(n) ** (1.0 / d)
    return g * (radius * u)[:, None]


def make_initial(kind: str, params: dict, n: int, rng_seed: int,
                 d: int = 1, sigma: int = -1) -> ParticleEnsemble:
    """Deterministic initial ensembles; same seed gives identical particles."""
    rng = np.random.default_rng(rng_seed)
    w = np.full(n, 1.0 / n)
    if kind == "uniform_perturbed":
        amp = float(params.get("amplitude", 0.0))
        mode = int(params.get("mode", 1))
        vth = float(params.get("vth", 0.0))
        x = rng.random((n, d))
        x[:, 0] = (x[:, 0] + amp / (2 * np.pi * mode)
                   * np.sin(2 * np.pi * mode * x[:, 0])) % 1.0
        v = vth * rng.standard_normal((n, d))
        return ParticleEnsemble(x=x, v=v, w=w, sigma=sigma)
    if kind == "two_stream":
        vb = float(params.get("vb", 0.2))
        vth = float(params.get("vth", 0.0))
        amp = float(params.get("amplitude", 0.0))
        mode = int(params.get("mode", 1))
        x = rng.random((n, d))
        x[:, 0] = (x[:, 0] + amp / (2 * np.pi * mode)
                   * np.sin(2 * np.pi * mode * x[:, 0])) % 1.0
        v = vth * rng.standard_normal((n, d))
        v[: n // 2, 0] += vb
        v[n // 2:, 0] -= vb
        return ParticleEnsemble(x=x, v=v, w=w, sigma=sigma)
    if kind == "yudovich_datum":
        theta = params["theta"]          # callable (N,d)->(N,) nonnegative
        theta_max = float(params.get("theta_max", 0.0))
        if theta_max <= 0:
            probe = theta(rng.random((4096, d)))
            if np.any(probe < 0):
                raise ValueError("theta profile must be nonnegative")
            theta_max = float(np.max(probe)) * 1.5
        x = np.empty((0, d))
        while x.shape[0] < n:      # rejection sampling from theta / ||theta||_1
            cand = rng.random((4 * n, d))
            acc = rng.random(4 * n) * theta_max < theta(cand)
            x = np.concatenate([x, cand[acc]])[: n]
        radius = theta(x) ** (1.0 / 3.0)   # support rule |v|^2 <= theta^(2/3)
        v = _uniform_ball(rng, n, d, radius)
        return ParticleEnsemble(x=x, v=v, w=w, sigma=sigma)
    raise ValueError(f"unknown initial-condition kind {kind!r}")


def total_momentum(ensemble: ParticleEnsemble) -> np.ndarray:
    return ensemble.w @ ensemble.v


def total_energy(ensemble: ParticleEnsemble, fieldstate: FieldState) -> float:
    """Kinetic + sign-weighted field energy of the discretized system."""
    kinetic = 0.5 * float(np.dot(ensemble.w, np.sum(ensemble.v ** 2, axis=1)))
    grad2 = sum(float(np.mean(g ** 2)) for g in fieldstate.grad_u)
    return kinetic - 0.5 * ensemble.sigma * grad2
