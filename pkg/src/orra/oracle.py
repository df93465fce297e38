"""Centralized per-step optimum, dynamic regret, and bound verification.

The oracle solves the same allocation each control interval that the
distributed algorithm approaches online: minimize the summed interval
costs subject to the signed fleet power matching the negated aggregate
injection error, with every agent confined to its mode box. Strict
convexity of the wear term makes the best response to the equality
multiplier unique, so the solve is a scalar bisection wrapped around a
vectorized monotone derivative inversion per agent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InfeasibleTargetError(RuntimeError):
    """Target outside the fleet's achievable aggregate range."""

    def __init__(self, target, achievable):
        super().__init__(
            f"target {target:.6f} MW outside achievable range "
            f"[{achievable[0]:.6f}, {achievable[1]:.6f}] MW"
        )
        self.target = target
        self.achievable = achievable


class IncompleteTraceError(ValueError):
    """Regret requested over a window with missing oracle entries."""


@dataclass
class CentralizedSolution:
    q: np.ndarray  # active-coordinate power per agent, MW
    d: np.ndarray
    c: np.ndarray
    nu: float  # equality-constraint multiplier
    residual: float  # |aggregate - target|, MW
    marginals: np.ndarray  # cost slope along each agent's active coordinate
    target: float
    clamped: bool = False


def _cost_arrays(models, modes):
    """Per-agent coefficient arrays along the active coordinate."""
    wear = np.array([2.0 * m.theta_b for m in models])
    g = np.array(
        [m.g_d if mode == 1 else m.g_c for m, mode in zip(models, modes)]
    )
    aging = np.array([m.big_theta * m.b for m in models])
    mu0 = np.array([m.mu0 for m in models])
    bm1 = np.array([m.b - 1.0 for m in models])
    return wear, g, aging, mu0, bm1


def _marginal(arrays, q):
    wear, g, aging, mu0, bm1 = arrays
    mu = mu0 + g * q
    slope = np.where(mu > 0, aging * g * np.maximum(mu, 0.0) ** bm1, 0.0)
    return wear * q + slope


def _best_response(arrays, lo, hi, slope_target, iters=50):
    """q per agent with marginal(q) = slope_target, clamped to [lo, hi]."""
    at_lo = _marginal(arrays, lo) >= slope_target
    at_hi = _marginal(arrays, hi) <= slope_target
    q_lo = lo.copy()
    q_hi = hi.copy()
    for _ in range(iters):
        mid = 0.5 * (q_lo + q_hi)
        high = _marginal(arrays, mid) > slope_target
        q_hi = np.where(high, mid, q_hi)
        q_lo = np.where(high, q_lo, mid)
    q = 0.5 * (q_lo + q_hi)
    return np.where(at_lo, lo, np.where(at_hi, hi, q))


def centralized_solve(
    models,
    modes,
    boxes,
    target,
    on_infeasible: str = "raise",
    nu_hint: float | None = None,
    tol: float = 1e-6,
    iters: int = 80,
) -> CentralizedSolution:
    """Exact fleet allocation for one interval.

    models: per-agent interval costs (frozen-residue form); modes: 1 for
    discharge (+q aggregate), 0 for charge (-q); boxes: per-agent [lo, hi]
    on the active coordinate; target: required signed aggregate in MW.
    on_infeasible: "raise" (default) or "clamp" to the achievable range.
    nu_hint: previous step's multiplier, used to start with a tight bracket.
    """
    modes = [int(m) for m in modes]
    lo = np.array([b[0] for b in boxes], dtype=float)
    hi = np.array([b[1] for b in boxes], dtype=float)
    sign = np.array([1.0 if m == 1 else -1.0 for m in modes])
    for m in models:
        if m.theta_b <= 0:
            raise ValueError("oracle requires a strictly convex wear term")
    arrays = _cost_arrays(models, modes)

    agg_lo = float(np.where(sign > 0, lo, -hi).sum())
    agg_hi = float(np.where(sign > 0, hi, -lo).sum())
    clamped = False
    want = float(target)
    if not agg_lo - 1e-9 <= want <= agg_hi + 1e-9:
        if on_infeasible == "clamp":
            clamped = True
        else:
            raise InfeasibleTargetError(want, (agg_lo, agg_hi))
    want = float(np.clip(want, agg_lo, agg_hi))

    def aggregate(nu):
        # stationarity of the per-agent Lagrangian: marginal(q) = -nu*sign
        q = _best_response(arrays, lo, hi, -nu * sign)
        return float((sign * q).sum()), q

    corner = np.maximum(
        np.abs(_marginal(arrays, lo)), np.abs(_marginal(arrays, hi))
    )
    nu_max = max(2.0 * float(corner.max()), 1e-6)

    nu_lo, nu_hi = -nu_max, nu_max
    if nu_hint is not None and abs(nu_hint) <= nu_max:
        width = max(1e-3, 0.05 * nu_max)
        cand_lo, cand_hi = nu_hint - width, nu_hint + width
        while cand_lo > -nu_max or cand_hi < nu_max:
            cand_lo = max(cand_lo, -nu_max)
            cand_hi = min(cand_hi, nu_max)
            if aggregate(cand_lo)[0] >= want >= aggregate(cand_hi)[0]:
                nu_lo, nu_hi = cand_lo, cand_hi
                break
            width *= 4.0
            cand_lo, cand_hi = nu_hint - width, nu_hint + width

    a_lo, _ = aggregate(nu_lo)
    a_hi, _ = aggregate(nu_hi)
    # the aggregate best response must be non-increasing in the multiplier
    assert a_lo >= a_hi - 1e-9, "aggregate response not monotone"
    nu = 0.5 * (nu_lo + nu_hi)
    agg, q = aggregate(nu)
    for _ in range(iters):
        if abs(agg - want) <= 0.1 * tol:
            break
        if agg > want:
            nu_lo = nu
        else:
            nu_hi = nu
        nu = 0.5 * (nu_lo + nu_hi)
        agg, q = aggregate(nu)
    residual = abs(agg - want)
    modes_arr = np.array(modes)
    return CentralizedSolution(
        q=q,
        d=np.where(modes_arr == 1, q, 0.0),
        c=np.where(modes_arr == 0, q, 0.0),
        nu=nu,
        residual=residual,
        marginals=_marginal(arrays, q),
        target=want,
        clamped=clamped,
    )


def dynamic_regret(dist_costs, oracle_costs, T=None) -> float:
    """Cumulative cost gap of the online trajectory against the oracle."""
    dist_costs = np.asarray(dist_costs, dtype=float)
    oracle_costs = np.asarray(oracle_costs, dtype=float)
    if T is None:
        T = len(dist_costs)
    if len(dist_costs) < T or len(oracle_costs) < T:
        raise IncompleteTraceError(
            f"need {T} logged steps, have {len(dist_costs)} distributed "
            f"and {len(oracle_costs)} oracle entries"
        )
    window = slice(0, T)
    if not (
        np.isfinite(dist_costs[window]).all()
        and np.isfinite(oracle_costs[window]).all()
    ):
        raise IncompleteTraceError("non-finite cost entries in the window")
    return float((dist_costs[window] - oracle_costs[window]).sum())


def _stacked_norms(x):
    """Euclidean norm over all agents (and coordinates) per time row."""
    flat = x.reshape(x.shape[0], -1)
    return np.linalg.norm(flat, axis=1)


@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool
    terms: tuple = ()


def lemma1_check(
    u,
    u_star,
    s,
    lam,
    lam_mixed,
    y,
    y_mixed,
    kappa,
    eps,
    gamma,
    dist_costs,
    oracle_costs,
    tol: float = 1e-6,
) -> BoundCheck:
    """Evaluate the six-term saddle-point regret bound over one window.

    Row layout: index r holds iteration r quantities; rows 0..T-1 form the
    summed window and row T supplies the (t+1) lookaheads. The second term
    uses the 1/(2*gamma*kappa_t) factor the telescoping derivation yields.
    """
    u = np.asarray(u, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    s = np.asarray(s, dtype=float)
    lam = np.asarray(lam, dtype=float)
    lam_mixed = np.asarray(lam_mixed, dtype=float)
    y = np.asarray(y, dtype=float)
    y_mixed = np.asarray(y_mixed, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    eps = np.asarray(eps, dtype=float)
    T = u.shape[0] - 1
    if T < 1:
        raise ValueError("need at least two logged rows")
    n = u.shape[1]

    lam_bar = lam.mean(axis=1, keepdims=True) * np.ones((1, n))
    y_bar = y.mean(axis=1, keepdims=True) * np.ones((1, n))

    du = _stacked_norms(u[:-1] - u_star[:-1]) ** 2
    du_next = _stacked_norms(u[1:] - u_star[:-1]) ** 2
    t1 = float(((du - du_next) / (2 * kappa[:-1])).sum())

    nl = _stacked_norms(lam_bar) ** 2
    t2 = float(((nl[:-1] - nl[1:]) / (2 * gamma * kappa[:-1])).sum())

    t3 = float((kappa[:-1] / 2 * _stacked_norms(s[:-1]) ** 2).sum())

    drift = gamma * kappa[:-1, None] * y_mixed[:-1] - eps[:-1, None] * lam_bar[:-1]
    t4 = float((_stacked_norms(drift) ** 2 / (2 * gamma * kappa[:-1])).sum())

    t5 = float(
        (
            _stacked_norms(lam_bar[:-1])
            * _stacked_norms(y_mixed[:-1] - y_bar[:-1])
        ).sum()
    )
    t6 = float(
        (
            2
            * _stacked_norms(u[:-1])
            * _stacked_norms(lam_mixed[:-1] - lam_bar[:-1])
        ).sum()
    )

    lhs = dynamic_regret(dist_costs, oracle_costs, T)
    rhs = t1 + t2 + t3 + t4 + t5 + t6
    return BoundCheck(lhs, rhs, lhs <= rhs + tol, (t1, t2, t3, t4, t5, t6))


def lemma2_check(u, u_star, kappa, B_u, tol: float = 1e-6) -> BoundCheck:
    """Check the telescoped primal-distance sum against its path bound."""
    u = np.asarray(u, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    T = u.shape[0] - 1
    if T < 1:
        raise ValueError("need at least two logged rows")
    if (np.diff(kappa[: T + 1][:-1]) > 1e-12).any():
        raise ValueError("stepsizes must be non-increasing over the window")
    n = u.shape[1]
    du = _stacked_norms(u[:-1] - u_star[:-1]) ** 2
    du_next = _stacked_norms(u[1:] - u_star[:-1]) ** 2
    s_T = float(((du - du_next) / (2 * kappa[:-1])).sum())
    v_T = float((_stacked_norms(u_star[1:] - u_star[:-1]) / kappa[:-1]).sum())
    bound = 2 * n * B_u**2 / kappa[T - 1] + 2 * n * B_u * v_T
    return BoundCheck(s_T, bound, s_T <= bound + tol, (v_T,))


@dataclass
class SlopeFit:
    slope: float
    n_used: int
    spans_decade: bool
    sublinear: bool
    excluded: tuple = ()


def regret_slope(horizons, reg_values) -> SlopeFit:
    """Least-squares exponent of regret growth on log axes.

    Nonpositive regret values are excluded (and reported); the decade-span
    flag records whether the usable points justify a sublinearity verdict.
    """
    horizons = np.asarray(horizons, dtype=float)
    reg_values = np.asarray(reg_values, dtype=float)
    keep = reg_values > 0
    excluded = tuple(int(h) for h in horizons[~keep])
    ts = horizons[keep]
    rs = reg_values[keep]
    if len(ts) < 2:
        raise ValueError("need at least two positive regret points to fit")
    slope = float(np.polyfit(np.log(ts), np.log(rs), 1)[0])
    spans_decade = bool(ts.max() / ts.min() >= 10.0 and len(ts) >= 4)
    return SlopeFit(slope, len(ts), spans_decade, slope < 1.0, excluded)
