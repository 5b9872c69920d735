"""The implicitly defined kinetic distance quantity D_p.

D_p(Cx, Cv) is the unique s solving s - lambda(s) Cx = Cv for a
nonincreasing positive weight lambda.  With the growth-function weight
sqrt(|log s| Theta(|log s|))^p this is the state-dependent anisotropy
between position and velocity costs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import growth, transport


class WellPosednessError(RuntimeError):
    """lambda was found increasing on the bracket: the implicit equation
    is outside its guaranteed-monotone regime."""


@dataclass
class KineticValue:
    s: float                # solved D_p
    lam: float              # lambda evaluated at s
    cx: float
    cv: float
    in_regime: bool         # s < c_small

    def residual(self) -> float:
        return abs(self.s - self.lam * self.cx - self.cv) / max(1.0, self.s)


def solve_dp(cx: float, cv: float, lambda_fn, c_small: float | None = None,
             n_monotone_probe: int = 17) -> KineticValue:
    """Solve s - lambda(s) Cx - Cv = 0 by bisection on a monotone bracket.

    The bracket is [Cv, Cv + lambda(left) Cx]; for nonincreasing lambda
    the residual g(s) = s - lambda(s) Cx - Cv is strictly increasing
    there, so the root is unique.
    """
    if cx < 0 or cv < 0:
        raise ValueError("costs must be nonnegative")
    if cx == 0 and cv == 0:
        lam = float(lambda_fn(c_small)) if c_small else float(lambda_fn(1e-300))
        return KineticValue(s=0.0, lam=lam, cx=0.0, cv=0.0, in_regime=True)
    left = cv if cv > 0 else 1e-300
    lam_left = float(lambda_fn(left))
    if not lam_left > 0:
        raise ValueError("lambda must be positive")
    if cx == 0:
        s = cv
        lam = float(lambda_fn(s))
        return KineticValue(s=s, lam=lam, cx=cx, cv=cv,
                            in_regime=(c_small is None or s < c_small))
    right = cv + lam_left * cx
    probe = np.geomspace(left, right, n_monotone_probe)
    lam_probe = np.array([float(lambda_fn(t)) for t in probe])
    if np.any(np.diff(lam_probe) > 1e-12 * lam_probe[:-1]):
        raise WellPosednessError(
            "lambda increases on the bracket; the distance equation is "
            "not guaranteed well-posed here")

    def g(s):
        return s - float(lambda_fn(s)) * cx - cv

    if g(right) < 0:  # numerically flat lambda round-off; widen a touch
        right *= 1.0 + 1e-9
    s = brentq(g, left, right, xtol=5e-324, rtol=4 * np.finfo(float).eps)
    lam = float(lambda_fn(s))
    kv = KineticValue(s=s, lam=lam, cx=cx, cv=cv,
                      in_regime=(c_small is None or s < c_small))
    if kv.residual() > 1e-12:
        raise RuntimeError(f"solve_dp residual {kv.residual():g} above contract")
    return kv


def growth_lambda(gf: growth.GrowthFunction, p: float,
                  consts: growth.GrowthConstants):
    """lambda(s) = sqrt(|log s| Theta(|log s|))^p with constant extension."""
    return lambda s: growth.lambda_of(gf, p, consts, s)


def dp_of_t(plan0: transport.TransportPlan, x1, v1, x2, v2, p: float,
            gf: growth.GrowthFunction, consts: growth.GrowthConstants,
            domain: str = "torus") -> KineticValue:
    """D_p along the pushforward of the initial coupling at the current time."""
    cx, cv = transport.pushforward_costs(plan0, x1, v1, x2, v2, p, domain)
    return solve_dp(cx, cv, growth_lambda(gf, p, consts),
                    c_small=consts.c_small)


def control_inequalities(kv: KineticValue, wpp_rho: float, wpp_f: float,
                         tol: float = 0.0) -> dict:
    """Check W_p^p(rho1,rho2) <= D_p/lambda and W_p^p(f1,f2) <= D_p.

    tol absorbs OT-solver inexactness (0 for the exact solver, the
    certified gap for sinkhorn).  Violations are reported, not raised.
    """
    margin_rho = kv.s / kv.lam + tol - wpp_rho
    margin_f = kv.s + tol - wpp_f
    return {
        "rho_ok": margin_rho >= -1e-15,
        "f_ok": margin_f >= -1e-15,
        "margin_rho": margin_rho,
        "margin_f": margin_f,
    }


def _dp_of_plan(mu, nu, rows, cols, mass, p, gf, consts):
    cpos, cvel = transport.cost_matrices(mu, nu, p)
    cx = math.fsum(cpos[rows, cols] * mass)
    cv = math.fsum(cvel[rows, cols] * mass)
    return solve_dp(cx, cv, growth_lambda(gf, p, consts),
                    c_small=consts.c_small)


def kinetic_wasserstein_upper(mu: transport.EmpiricalMeasure,
                              nu: transport.EmpiricalMeasure, p: float,
                              gf: growth.GrowthFunction,
                              consts: growth.GrowthConstants):
    """Upper bound on the p-th power of the kinetic Wasserstein distance.

    Evaluates D_p along the optimal W_p plan (always an upper bound on
    the infimum).  For equal-weight clouds with N <= 6, additionally
    minimizes over all permutations, which is the exact value; returns
    (upper KineticValue, exact KineticValue or None).
    """
    _value, plan = transport.wasserstein_p(mu, nu, p)
    upper = _dp_of_plan(mu, nu, plan.i, plan.j, plan.mass, p, gf, consts)
    exact = None
    if mu.n == nu.n and mu.n <= 6 and mu.equal_weights() and nu.equal_weights():
        best = None
        rows = np.arange(mu.n)
        mass = np.full(mu.n, 1.0 / mu.n)
        for perm in itertools.permutations(range(mu.n)):
            kv = _dp_of_plan(mu, nu, rows, np.array(perm), mass, p, gf, consts)
            if best is None or kv.s < best.s:
                best = kv
        exact = best
    return upper, exact
