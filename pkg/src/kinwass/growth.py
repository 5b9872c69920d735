"""Growth functions and the special-function calculus built on them.

A growth function Theta controls how fast the L^r norms of a density may
grow with r.  Three named families are supported (bounded, power-law
"orlicz", iterated-logarithm) plus user tables.  From Theta we derive the
modulus of continuity phi_theta, its p-modified variant, the weight
lambda used by the kinetic distance, the Osgood antiderivative Psi and
its inverse, and the near-origin inverse of s -> s/lambda(s).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq


class RegimeError(ValueError):
    """Raised when a quantity leaves the small-distance regime where the
    machinery is defined (or invertible)."""


def _iter_log(i: int, x):
    """i-fold iterated natural log; identity for i = 0."""
    y = np.asarray(x, dtype=float)
    for _ in range(i):
        y = np.log(y)
    return y


def _exp_tower(n: int) -> float:
    """exp_n(1): tower of n exponentials, exp_0(1) = 1."""
    y = 1.0
    for _ in range(n):
        y = math.exp(y)
    return y


@dataclass(frozen=True)
class GrowthFunction:
    """A growth function Theta, nondecreasing on [1, inf).

    family is one of "bounded", "orlicz", "iterlog", "table".  Orlicz
    takes Theta(r) = r^(1/alpha); iterlog is the Yudovich family
    Theta_n(r) = r * prod_{i=1..n} (log^i r)^2 above exp_n(1) and
    constant below; tables are interpolated log-linearly and
    extrapolated flat, rescaled so Theta(1) = 1.
    """

    family: str
    alpha: float = 1.0
    n: int = 1
    table_r: tuple = ()
    table_v: tuple = ()

    def __post_init__(self):
        if self.family not in ("bounded", "orlicz", "iterlog", "table"):
            raise ValueError(f"unknown growth family {self.family!r}")
        if self.family == "orlicz" and not self.alpha >= 1:
            raise ValueError("orlicz alpha must be >= 1")
        if self.family == "iterlog" and not (isinstance(self.n, int) and self.n >= 1):
            raise ValueError("iterlog n must be an integer >= 1")
        if self.family == "table":
            r = np.asarray(self.table_r, dtype=float)
            v = np.asarray(self.table_v, dtype=float)
            if r.size < 2 or r.size != v.size:
                raise ValueError("table needs >= 2 (r, value) pairs")
            if np.any(np.diff(r) <= 0):
                raise ValueError("table grid must be strictly increasing")
            if np.any(v <= 0):
                raise ValueError("table values must be strictly positive")

    # -- evaluation -------------------------------------------------------

    def theta(self, r):
        """Theta(r) for r >= 1 (scalar or array)."""
        arr = np.asarray(r, dtype=float)
        if np.any(arr < 1.0):
            raise ValueError("theta requires r >= 1")
        if self.family == "bounded":
            out = np.ones_like(arr)
        elif self.family == "orlicz":
            out = arr ** (1.0 / self.alpha)
        elif self.family == "iterlog":
            lo = _exp_tower(self.n)
            safe = np.maximum(arr, lo)
            out = safe.copy()
            for i in range(1, self.n + 1):
                out = out * _iter_log(i, safe) ** 2
            # constant below exp_n(1)
            plateau = lo
            for i in range(1, self.n + 1):
                plateau = plateau * float(_iter_log(i, lo)) ** 2
            out = np.where(arr >= lo, out, plateau)
        else:  # table: log-linear interpolation, flat beyond the grid
            tr = np.log(np.asarray(self.table_r, dtype=float))
            tv = np.log(np.asarray(self.table_v, dtype=float))
            val = np.interp(np.log(arr), tr, tv)
            out = np.exp(val)
            # rescale so Theta(1) = 1
            ref = np.exp(np.interp(0.0, tr, tv))
            out = out / ref
        if np.ndim(r) == 0:
            return float(out)
        return out

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        obj = {"family": self.family}
        if self.family == "orlicz":
            obj["alpha"] = self.alpha
        elif self.family == "iterlog":
            obj["n"] = self.n
        elif self.family == "table":
            obj["table"] = [[r, v] for r, v in zip(self.table_r, self.table_v)]
        return json.dumps(obj)

    @classmethod
    def from_json(cls, text: str) -> "GrowthFunction":
        obj = json.loads(text)
        fam = obj["family"]
        if fam == "orlicz":
            return cls("orlicz", alpha=float(obj["alpha"]))
        if fam == "iterlog":
            return cls("iterlog", n=int(obj["n"]))
        if fam == "table":
            tab = obj["table"]
            return cls("table",
                       table_r=tuple(float(p[0]) for p in tab),
                       table_v=tuple(float(p[1]) for p in tab))
        return cls("bounded")


def bounded() -> GrowthFunction:
    return GrowthFunction("bounded")


def orlicz(alpha: float) -> GrowthFunction:
    return GrowthFunction("orlicz", alpha=float(alpha))


def iterlog(n: int) -> GrowthFunction:
    return GrowthFunction("iterlog", n=int(n))


def tabulated(table) -> GrowthFunction:
    table = list(table)
    return GrowthFunction("table",
                          table_r=tuple(float(p[0]) for p in table),
                          table_v=tuple(float(p[1]) for p in table))


@dataclass(frozen=True)
class GrowthConstants:
    """Constants attached to (Theta, p, d).

    c_small: threshold of the small-distance regime, < 1/e.
    c_log:   constant in |log(s/lambda(s))| <= c_log |log s|.
    c_bar:   constant in Theta(|log(s/lambda)|) <= c_bar Theta(|log s|).
    c_phi:   max{phi_theta(s): s >= c_small^(1/p)} / c_small^(1/p).
    """

    c_small: float
    c_log: float
    c_bar: float
    c_phi: float

    def __post_init__(self):
        if not (0 < self.c_small < 1 / math.e):
            raise ValueError("c_small must lie in (0, 1/e)")
        for name in ("c_log", "c_bar", "c_phi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def default_constants(gf: GrowthFunction, p: float, d: int,
                      c_small: float | None = None) -> GrowthConstants:
    """Closed-form constants for the named families.

    Tabulated growth functions carry no closed forms; the caller must
    supply c_small for them (c_log / c_bar are then calibrated
    numerically on a grid).
    """
    if gf.family == "bounded":
        c = math.exp(-max(p, d + 1))
        c_log = 1 + p / 2
        c_bar = 1.0
    elif gf.family == "orlicz":
        beta = 1 + 1 / gf.alpha
        c = math.exp(-max(p * beta, d + 1))
        c_log = 1 + p * beta / 2
        c_bar = c_log ** (1 / gf.alpha)
    elif gf.family == "iterlog":
        c = min(_exp_tower(gf.n + 1) ** (-2 * p), math.exp(-d - 1))
        c_log = 1 + p * (gf.n + 1)
        c_bar = c_log
        for i in range(0, gf.n + 1):
            c_bar *= 2.0 ** i * float(_iter_log(i, c_log))
    else:
        if c_small is None:
            raise ValueError("tabulated growth functions require an explicit c_small")
        c = float(c_small)
        c_log, c_bar = _calibrate_log_constants(gf, p, c)
    if c_small is not None:
        c = float(c_small)
    return GrowthConstants(c_small=c, c_log=c_log, c_bar=c_bar,
                           c_phi=_c_phi(gf, p, d, c))


def _calibrate_log_constants(gf: GrowthFunction, p: float, c: float):
    """Smallest grid-valid constants for checks (a) and (b), with 5% headroom."""
    s = np.geomspace(1e-300, c * (1 - 1e-12), 4096)
    u = -np.log(s)
    lam = (u * gf.theta(u)) ** (p / 2)
    arg = u + np.log(lam)
    c_log = float(np.max(arg / u)) * 1.05
    c_bar = float(np.max(gf.theta(arg) / gf.theta(u))) * 1.05
    return c_log, c_bar


def _c_phi(gf: GrowthFunction, p: float, d: int, c: float) -> float:
    """max{phi_theta(s): s >= c^(1/p)} / c^(1/p), evaluated on a grid.

    phi_theta is constant above e^(-d-1), so the sup is attained on
    [c^(1/p), e^(-d-1)] or at the plateau.
    """
    a = c ** (1 / p)
    plateau = math.exp(-d - 1) * (d + 1) * gf.theta(float(d + 1))
    if a >= math.exp(-d - 1):
        return plateau / a
    grid = np.geomspace(a, math.exp(-d - 1), 512)
    vals = phi_theta(gf, d, grid)
    return max(float(np.max(vals)), plateau) / a


# -- derived special functions -------------------------------------------


def phi_theta(gf: GrowthFunction, d: int, s):
    """Generalized modulus of continuity of the force field.

    0 at 0; s|log s| Theta(|log s|) for 0 < s < e^(-d-1); constant
    e^(-d-1) (d+1) Theta(d+1) above.
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0):
        raise ValueError("phi_theta requires s >= 0")
    cut = math.exp(-d - 1)
    plateau = cut * (d + 1) * gf.theta(float(d + 1))
    out = np.full_like(arr, plateau)
    inner = (arr > 0) & (arr < cut)
    if np.any(inner):
        u = -np.log(arr[inner])
        out[inner] = arr[inner] * u * gf.theta(u)
    out[arr == 0] = 0.0
    if np.ndim(s) == 0:
        return float(out)
    return out


def phi_p_theta(gf: GrowthFunction, p: float, consts: GrowthConstants, s):
    """p-modified modulus: s|log s|^p Theta^p(|log s|) below c_small, then flat."""
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0):
        raise ValueError("phi_p_theta requires s >= 0")
    c = consts.c_small
    uc = -math.log(c)
    plateau = c * uc ** p * gf.theta(uc) ** p
    out = np.full_like(arr, plateau)
    inner = (arr > 0) & (arr <= c)
    if np.any(inner):
        u = -np.log(arr[inner])
        out[inner] = arr[inner] * u ** p * gf.theta(u) ** p
    out[arr == 0] = 0.0
    if np.ndim(s) == 0:
        return float(out)
    return out


def lambda_of(gf: GrowthFunction, p: float, consts: GrowthConstants, s):
    """Position weight sqrt(|log s| Theta(|log s|))^p of the kinetic distance.

    Held constant at its value at c_small for s >= c_small, so that it
    stays nonincreasing and the implicit distance equation keeps a
    monotone bracket outside the regime.
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("lambda_of requires s > 0")
    u = -np.log(np.minimum(arr, consts.c_small))
    out = (u * gf.theta(u)) ** (p / 2)
    if np.ndim(s) == 0:
        return float(out)
    return out


def _osgood_integrand(gf: GrowthFunction):
    return lambda u: 1.0 / math.sqrt(u * gf.theta(u))


def psi(gf: GrowthFunction, p: float, consts: GrowthConstants, r: float) -> float:
    """Osgood antiderivative: integral_r^c_small ds / sqrt(s phi_theta(s)).

    Computed after the substitution u = -log s, which removes the 1/s
    singularity; the integrand becomes 1/sqrt(u Theta(u)).
    """
    c = consts.c_small
    if not (0 < r <= c):
        raise ValueError("psi requires 0 < r <= c_small")
    if r == c:
        return 0.0
    uc, ur = -math.log(c), -math.log(r)
    val, _err = quad(_osgood_integrand(gf), uc, ur, epsabs=0.0, epsrel=1e-11,
                     limit=200)
    return val


def psi_inv(gf: GrowthFunction, p: float, consts: GrowthConstants, y: float) -> float:
    """Inverse of psi: the r in (0, c_small] with psi(r) = y."""
    if y < 0:
        raise ValueError("psi_inv requires y >= 0")
    if y == 0:
        return consts.c_small
    uc = -math.log(consts.c_small)
    f = _osgood_integrand(gf)

    def F(u):
        val, _ = quad(f, uc, u, epsabs=0.0, epsrel=1e-11, limit=200)
        return val - y

    hi = 2 * uc
    while F(hi) < 0:
        hi *= 2
        if hi > 1e9:
            raise RegimeError("psi_inv target exceeds representable range")
    u = brentq(F, uc, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)
    return max(math.exp(-u), 5e-324)


def forward_map(gf: GrowthFunction, p: float, consts: GrowthConstants, s):
    """The map s -> s / lambda(s); its near-origin inverse seeds the bound curves."""
    arr = np.asarray(s, dtype=float)
    out = arr / lambda_of(gf, p, consts, arr)
    if np.ndim(s) == 0:
        return float(out)
    return out


def invertibility_threshold(gf: GrowthFunction, p: float,
                            consts: GrowthConstants) -> float:
    """Largest s <= c_small below which s -> s/lambda(s) is strictly increasing.

    Scanned once on a log grid; for any nondecreasing Theta the map is
    increasing on the whole of (0, c_small], so this normally returns
    c_small itself.
    """
    s = np.geomspace(1e-300, consts.c_small, 4096)
    w = forward_map(gf, p, consts, s)
    bad = np.nonzero(np.diff(w) <= 0)[0]
    if bad.size == 0:
        return consts.c_small
    return float(s[bad[0]])


def phi_inv(gf: GrowthFunction, p: float, consts: GrowthConstants,
            w: float) -> float:
    """Inverse of s -> s/lambda(s) on the increasing window.

    Raises RegimeError when w falls outside the window; this mirrors the
    smallness condition the bound curves place on the initial distance.
    """
    if not w > 0:
        raise ValueError("phi_inv requires w > 0")
    s_max = invertibility_threshold(gf, p, consts)
    w_max = forward_map(gf, p, consts, s_max)
    if w > w_max:
        raise RegimeError(
            f"w={w:g} exceeds the invertibility window (max {w_max:g})")

    def g(log_s):
        s = math.exp(log_s)
        return forward_map(gf, p, consts, s) - w

    lo = math.log(s_max)
    # expand the lower end until the forward value drops below w
    span = 10.0
    while g(lo - span) > 0:
        span *= 2
        if span > 1e6:
            raise RegimeError("phi_inv failed to bracket the root")
    root = brentq(g, lo - span, lo, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    s = math.exp(root)
    # polish once through the residual contract
    resid = abs(forward_map(gf, p, consts, s) - w) / w
    if resid > 1e-12:
        raise RuntimeError(f"phi_inv residual {resid:g} above contract")
    return s


def verify_assumptions(gf: GrowthFunction, p: float, d: int,
                       consts: GrowthConstants, n_grid: int = 10_000) -> dict:
    """Numerically check the constant inequalities and shape assumptions.

    On a log grid in (1e-300, c_small): (a) |log(s/lambda)| <= c_log |log s|,
    (b) Theta(|log(s/lambda)|) <= c_bar Theta(|log s|), (c) phi_p_theta
    nondecreasing and midpoint-concave, (d) phi_theta continuous at
    e^(-d-1).  Failures are reported, never raised.
    """
    c = consts.c_small
    s = np.geomspace(1e-300, c * (1 - 1e-12), n_grid)
    u = -np.log(s)
    lam = lambda_of(gf, p, consts, s)
    arg = u + np.log(lam)          # = |log(s/lambda)| since lambda >= 1, s < 1

    margin_a = float(np.min(consts.c_log * u - arg))
    ok_a = margin_a >= -1e-9 * float(np.max(consts.c_log * u))

    margin_b = float(np.min(consts.c_bar * gf.theta(u) - gf.theta(arg)))
    ok_b = margin_b >= -1e-9 * float(np.max(consts.c_bar * gf.theta(u)))

    f = phi_p_theta(gf, p, consts, s)
    nondec = float(np.min(np.diff(f)))
    mid = phi_p_theta(gf, p, consts, (s[:-1] + s[1:]) / 2)
    concave = float(np.min(mid - (f[:-1] + f[1:]) / 2))
    ok_c = nondec >= -1e-12 and concave >= -1e-12

    cut = math.exp(-d - 1)
    below = phi_theta(gf, d, cut * (1 - 1e-13))
    at = phi_theta(gf, d, cut)
    gap = abs(below - at)
    ok_d = gap <= 1e-12 * max(1.0, at)

    checks = {
        "a_log_domination": {"passed": ok_a, "worst_margin": margin_a},
        "b_theta_domination": {"passed": ok_b, "worst_margin": margin_b},
        "c_phi_p_shape": {"passed": ok_c,
                          "worst_margin": min(nondec, concave)},
        "d_phi_continuity": {"passed": ok_d, "worst_margin": -gap},
    }
    return {"checks": checks,
            "all_passed": all(v["passed"] for v in checks.values())}
