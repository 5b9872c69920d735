"""Discrete optimal transport between phase-space particle clouds.

Costs split into position and velocity parts: dist(x,y)^p + |v-w|^p,
with the geodesic (wrap-around) distance on the torus.  Small instances
are solved exactly (assignment for equal weights, a transportation LP
otherwise); large ones fall back to entropic regularization with a
certified gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import csr_matrix
from scipy.special import logsumexp

from ._kernels import pair_costs

EQUAL_WEIGHT_CAP = 4096
GENERAL_CAP = 512


class SizeCapError(ValueError):
    """Instance too large for the exact solver; use sinkhorn_wp."""


class SinkhornError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


@dataclass
class EmpiricalMeasure:
    """Weighted particle cloud on torus (or Euclidean) phase space."""

    x: np.ndarray          # (N, d) positions, in [0,1) per axis on the torus
    v: np.ndarray          # (N, d) velocities
    w: np.ndarray          # (N,) weights, summing to 1
    domain: str = "torus"

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        self.w = np.asarray(self.w, dtype=float)
        if self.x.shape != self.v.shape or self.x.shape[0] != self.w.shape[0]:
            raise ValueError("inconsistent particle array shapes")
        if self.domain not in ("torus", "euclidean"):
            raise ValueError("domain must be torus or euclidean")
        if np.any(self.w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(math.fsum(self.w) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if self.domain == "torus" and (np.any(self.x < 0) or np.any(self.x >= 1)):
            raise ValueError("torus coordinates must lie in [0, 1)")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def equal_weights(self) -> bool:
        return bool(np.all(np.abs(self.w - 1.0 / self.n) <= 1e-12 / self.n))

    def to_csv(self, path, header_lines=()):
        d = self.d
        header = ",".join([f"x{k+1}" for k in range(d)]
                          + [f"v{k+1}" for k in range(d)] + ["w"])
        data = np.column_stack([self.x, self.v, self.w])
        with open(path, "w") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(header + "\n")
            for row in data:
                fh.write(",".join(repr(float(c)) for c in row) + "\n")

    @classmethod
    def from_csv(cls, path, domain="torus"):
        data = _read_csv_body(path)
        d = (data.shape[1] - 1) // 2
        return cls(x=data[:, :d], v=data[:, d:2 * d], w=data[:, 2 * d],
                   domain=domain)


@dataclass
class TransportPlan:
    """Sparse coupling with split position/velocity cost totals."""

    i: np.ndarray
    j: np.ndarray
    mass: np.ndarray
    cost_pos: float
    cost_vel: float
    p: float
    approximate: bool = False
    gap: float = 0.0        # certified total-cost gap (0 for exact solvers)

    def total_cost(self) -> float:
        return self.cost_pos + self.cost_vel

    def value(self) -> float:
        return self.total_cost() ** (1.0 / self.p)

    def marginal_errors(self, mu: EmpiricalMeasure, nu: EmpiricalMeasure):
        row = np.bincount(self.i, weights=self.mass, minlength=mu.n)
        col = np.bincount(self.j, weights=self.mass, minlength=nu.n)
        return (float(np.max(np.abs(row - mu.w))),
                float(np.max(np.abs(col - nu.w))))

    def to_csv(self, path, header_lines=()):
        with open(path, "w") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("i,j,mass\n")
            for a, b, m in zip(self.i, self.j, self.mass):
                fh.write(f"{int(a)},{int(b)},{repr(float(m))}\n")

    @classmethod
    def from_csv(cls, path, p):
        data = _read_csv_body(path)
        return cls(i=data[:, 0].astype(int), j=data[:, 1].astype(int),
                   mass=data[:, 2], cost_pos=float("nan"),
                   cost_vel=float("nan"), p=p)


def _read_csv_body(path):
    """Numeric rows of a CSV, skipping '#' comment lines and one header."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return np.loadtxt(lines[1:], delimiter=",", ndmin=2)


def torus_dist(a, b):
    """Per-axis minimal representative distance on the unit torus."""
    delta = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    delta = np.minimum(delta, 1.0 - delta)
    return np.sqrt(np.sum(delta * delta, axis=-1))


def phase_cost(a, b, p, domain="torus"):
    """Split cost of one pair a=(x,v), b=(y,w): (dist(x,y)^p, |v-w|^p)."""
    (x, v), (y, w) = a, b
    x, v, y, w = (np.atleast_1d(np.asarray(z, dtype=float)) for z in (x, v, y, w))
    if not x.shape == v.shape == y.shape == w.shape:
        raise ValueError("phase-space dimension mismatch")
    if domain == "torus":
        dpos = float(torus_dist(x, y))
    else:
        dpos = float(np.sqrt(np.sum((x - y) ** 2)))
    dvel = float(np.sqrt(np.sum((v - w) ** 2)))
    return dpos ** p, dvel ** p


def _check_compatible(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    if mu.domain != nu.domain or mu.d != nu.d:
        raise ValueError("measures live on different spaces")


def cost_matrices(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float):
    _check_compatible(mu, nu)
    return pair_costs(mu.x, mu.v, nu.x, nu.v, p, mu.domain == "torus")


def _plan_from_pairs(i, j, mass, cpos, cvel, p, approximate=False, gap=0.0):
    cost_pos = math.fsum(cpos[i, j] * mass)
    cost_vel = math.fsum(cvel[i, j] * mass)
    return TransportPlan(i=np.asarray(i), j=np.asarray(j),
                         mass=np.asarray(mass, dtype=float),
                         cost_pos=cost_pos, cost_vel=cost_vel, p=p,
                         approximate=approximate, gap=gap)


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float):
    """Exact W_p and an optimal plan.

    Equal-weight equal-size clouds are solved as an assignment problem;
    the general case as a dense transportation LP.  Raises SizeCapError
    above the configured caps.
    """
    _check_compatible(mu, nu)
    equal = (mu.n == nu.n and mu.equal_weights() and nu.equal_weights())
    cap = EQUAL_WEIGHT_CAP if equal else GENERAL_CAP
    if max(mu.n, nu.n) > cap:
        raise SizeCapError(
            f"instance size {max(mu.n, nu.n)} exceeds exact-solver cap {cap}; "
            "use sinkhorn_wp")
    cpos, cvel = cost_matrices(mu, nu, p)
    total = cpos + cvel
    if equal:
        rows, cols = linear_sum_assignment(total)
        plan = _plan_from_pairs(rows, cols, np.full(mu.n, 1.0 / mu.n),
                                cpos, cvel, p)
    else:
        plan = _solve_transport_lp(mu, nu, total, cpos, cvel, p)
    return plan.value(), plan


def _solve_transport_lp(mu, nu, total, cpos, cvel, p):
    n, m = mu.n, nu.n
    # row-sum and column-sum equality constraints (last column dropped:
    # it is implied by conservation of total mass)
    rows = []
    cols = []
    for i in range(n):
        rows.append(np.full(m, i))
        cols.append(np.arange(i * m, (i + 1) * m))
    for j in range(m - 1):
        rows.append(np.full(n, n + j))
        cols.append(j + m * np.arange(n))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    a_eq = csr_matrix((np.ones(rows.size), (rows, cols)),
                      shape=(n + m - 1, n * m))
    b_eq = np.concatenate([mu.w, nu.w[:-1]])
    res = linprog(total.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    x = res.x.reshape(n, m)
    i, j = np.nonzero(x > 1e-15)
    return _plan_from_pairs(i, j, x[i, j], cpos, cvel, p)


def sinkhorn_wp(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float,
                epsilon_schedule=None, max_iter: int = 5_000,
                tol: float = 1e-6):
    """Entropically regularized transport, annealed over epsilon_schedule.

    The default schedule is geometric from 0.25 to 1e-4 relative to the
    largest pairwise cost; intermediate levels only warm-start the duals
    (loose tolerance), the final level must reach `tol` on the marginal
    sup-residual or a SinkhornError is raised.  The returned plan is
    rounded to exact marginals; its cost is an upper bound on the optimal
    total cost, and `gap` bounds the distance to the optimum via a
    feasible dual (c-transform) certificate.
    """
    _check_compatible(mu, nu)
    cpos, cvel = cost_matrices(mu, nu, p)
    cost = cpos + cvel
    cmax = float(np.max(cost))
    if cmax == 0.0:  # identical clouds: identity coupling is optimal
        idx = np.arange(mu.n)
        plan = _plan_from_pairs(idx, idx, mu.w, cpos, cvel, p,
                                approximate=True, gap=0.0)
        return plan.value(), plan
    if epsilon_schedule is None:
        eps = cmax * np.geomspace(0.25, 1e-4, 12)
    else:
        eps = np.asarray(epsilon_schedule, dtype=float)
    if eps.size > 1 and np.any(np.diff(eps) >= 0):
        raise ValueError("epsilon_schedule must be strictly decreasing")
    if eps[-1] <= 0:
        raise ValueError("final epsilon must be positive")
    log_mu = np.log(np.maximum(mu.w, 1e-300))
    log_nu = np.log(np.maximum(nu.w, 1e-300))
    f = np.zeros(mu.n)
    g = np.zeros(nu.n)
    residual = np.inf
    warm_tol = max(tol, 1e-4 / max(mu.n, nu.n))
    for e in eps:
        level_tol = tol if e == eps[-1] else warm_tol
        for _ in range(max_iter):
            f = e * (log_mu - logsumexp((g[None, :] - cost) / e, axis=1))
            g = e * (log_nu - logsumexp((f[:, None] - cost) / e, axis=0))
            log_plan = (f[:, None] + g[None, :] - cost) / e
            row = np.exp(logsumexp(log_plan, axis=1))
            residual = float(np.max(np.abs(row - mu.w)))
            if residual < level_tol:
                break
        else:
            if e == eps[-1]:
                raise SinkhornError(
                    f"sinkhorn failed to reach tol={tol:g} at eps={e:g}",
                    residual)
    plan_mat = np.exp(log_plan)
    plan_mat = _round_to_marginals(plan_mat, mu.w, nu.w)
    # feasible dual via c-transform of f gives a lower bound on the optimum
    g_feas = np.min(cost - f[:, None], axis=0)
    lower = float(np.dot(mu.w, f) + np.dot(nu.w, g_feas))
    i, j = np.nonzero(plan_mat > 1e-300)
    plan = _plan_from_pairs(i, j, plan_mat[i, j], cpos, cvel, p,
                            approximate=True)
    plan.gap = max(plan.total_cost() - lower, 0.0)
    return plan.value(), plan


def _round_to_marginals(plan, wr, wc):
    """Altschuler-style rounding onto the exact marginals."""
    row = plan.sum(axis=1)
    plan = plan * np.minimum(1.0, wr / np.maximum(row, 1e-300))[:, None]
    col = plan.sum(axis=0)
    plan = plan * np.minimum(1.0, wc / np.maximum(col, 1e-300))[None, :]
    err_r = wr - plan.sum(axis=1)
    err_c = wc - plan.sum(axis=0)
    total = err_r.sum()
    if total > 0:
        plan = plan + np.outer(err_r, err_c) / total
    return plan


def pushforward_costs(plan: TransportPlan, x1, v1, x2, v2, p: float,
                      domain: str = "torus"):
    """Split costs of the pushforward of plan under two particle flows.

    x1, v1 index the source particles at the current time; x2, v2 the
    target particles.  Pairs and masses are those of the initial plan.
    Sums are compensated (fsum): Cx can be a tiny total of many terms.
    """
    x1, v1, x2, v2 = (np.atleast_2d(np.asarray(z, dtype=float))
                      for z in (x1, v1, x2, v2))
    if int(np.max(plan.i, initial=-1)) >= x1.shape[0] \
            or int(np.max(plan.j, initial=-1)) >= x2.shape[0]:
        raise ValueError("plan indices exceed flow arrays")
    xa, xb = x1[plan.i], x2[plan.j]
    if domain == "torus":
        dpos = torus_dist(xa, xb)
    else:
        dpos = np.sqrt(np.sum((xa - xb) ** 2, axis=-1))
    dvel = np.sqrt(np.sum((v1[plan.i] - v2[plan.j]) ** 2, axis=-1))
    cx = math.fsum(dpos ** p * plan.mass)
    cv = math.fsum(dvel ** p * plan.mass)
    return cx, cv
