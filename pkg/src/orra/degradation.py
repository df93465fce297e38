"""Streaming rainflow cycle counting and the battery usage cost model.

SoC samples arrive one per control interval. The counter keeps the residue
stack (extrema not yet cancelled), closes nested cycles online with the
three/four-point rule, and exposes the currently open half cycle so the
per-interval cost can price how a prospective action deepens it.

Lifetime loss per counted cycle follows the power-law depth curve
(n_cyc/2) * a * depth**b. Within one control interval the residue stack is
frozen, which makes the cost convex in the power decision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HOURS_PER_SECOND = 1.0 / 3600.0


@dataclass(frozen=True)
class AgingParams:
    """Power-law depth-to-loss coefficients (typical Li-ion fit)."""

    a: float = 5.24e-4
    b: float = 2.03

    def __post_init__(self) -> None:
        if self.a <= 0:
            raise ValueError("aging coefficient a must be positive")
        if self.b < 1:
            raise ValueError("aging exponent b must be >= 1 for convexity")


@dataclass(frozen=True)
class CycleEvent:
    """One counted cycle: SoC depth and its count weight (0.5 half, 1.0 full)."""

    depth: float
    n_cyc: float


@dataclass(frozen=True)
class Residue:
    """An extremum not yet cancelled: sample index and SoC value."""

    k: int
    value: float


ResidueStack = tuple  # tuple[Residue, ...]

EMPTY_STACK: ResidueStack = ()


def rainflow_step(x_new, residues: ResidueStack, k: int | None = None):
    """Feed one SoC sample; returns (closed cycle events, new residue stack).

    The stack's top always tracks the most recent extremum, so a sample that
    continues the current direction replaces the top instead of growing the
    stack. Closures emit full cycles, except when the range still contains
    the very first residue, which emits a half cycle and drops that origin.
    """
    x_new = float(x_new)
    if k is None:
        k = residues[-1].k + 1 if residues else 0
    stack = list(residues)
    if not stack:
        return (), (Residue(k, x_new),)
    if x_new == stack[-1].value:
        return (), residues
    if len(stack) == 1:
        stack.append(Residue(k, x_new))
        return (), tuple(stack)
    direction = stack[-1].value - stack[-2].value
    if (x_new - stack[-1].value) * direction > 0:
        stack[-1] = Residue(k, x_new)  # same direction: extend the extremum
    else:
        stack.append(Residue(k, x_new))
    events = []
    while len(stack) >= 3:
        x_rng = abs(stack[-1].value - stack[-2].value)
        y_rng = abs(stack[-2].value - stack[-3].value)
        if x_rng < y_rng:
            break
        if len(stack) == 3:
            events.append(CycleEvent(y_rng, 0.5))
            stack.pop(0)
        else:
            events.append(CycleEvent(y_rng, 1.0))
            del stack[-3:-1]
    return tuple(events), tuple(stack)


def finalize(residues: ResidueStack):
    """Count the leftover residue ranges as half cycles."""
    return tuple(
        CycleEvent(abs(b.value - a.value), 0.5)
        for a, b in zip(residues, residues[1:])
    )


def open_half(residues: ResidueStack):
    """Depth and direction of the currently open half cycle.

    direction is -1 when the open half is downward (discharge deepens it),
    +1 when upward (charge deepens it), 0 when no half cycle is open yet.
    """
    if len(residues) < 2:
        return 0.0, 0
    delta = residues[-1].value - residues[-2].value
    return abs(delta), (1 if delta > 0 else -1)


def lifetime_loss(event: CycleEvent, params: AgingParams) -> float:
    """Fractional lifetime consumed by one counted cycle."""
    if event.depth < 0 or not 0 < event.n_cyc <= 1:
        raise ValueError(f"malformed cycle event {event}")
    return (event.n_cyc / 2.0) * params.a * event.depth**params.b


def usage_cost(d, c, loss, theta_a, theta_b, tau) -> float:
    """Battery usage cost in $/h: amortized aging loss plus power wear."""
    if tau <= 0:
        raise ValueError("interval length tau must be positive")
    return theta_a * (3600.0 / tau) * loss + theta_b * (d - c) ** 2


@dataclass(frozen=True)
class IntervalCost:
    """Usage cost of one control interval with the residue stack frozen.

    value(d, c) = theta_b*(d - c)**2 + big_theta*(mu0 + g_d*d + g_c*c)**b
    where mu0 is the open half-cycle depth and g_d, g_c convert power into
    SoC deepening. The coordinate that would heal the open half cycle gets a
    zero slope (its closure credit is only realized when a cycle completes),
    which keeps the model convex.
    """

    mu0: float
    g_d: float
    g_c: float
    theta_b: float
    big_theta: float
    b: float

    def value(self, d, c):
        mu = self.mu0 + self.g_d * d + self.g_c * c
        return self.theta_b * (d - c) ** 2 + self.big_theta * mu**self.b

    def gradient(self, d, c):
        """(d f/d d, d f/d c) at the given point."""
        mu = self.mu0 + self.g_d * d + self.g_c * c
        wear = 2.0 * self.theta_b * (d - c)
        aging = self.big_theta * self.b * mu ** (self.b - 1.0) if mu > 0 else 0.0
        return wear + aging * self.g_d, -wear + aging * self.g_c


def interval_cost(
    residues: ResidueStack,
    aging: AgingParams,
    capacity,
    eta_c,
    eta_d,
    theta_a,
    theta_b,
    tau,
) -> IntervalCost:
    """Build the frozen-residue cost for one interval of length tau seconds."""
    if tau <= 0:
        raise ValueError("interval length tau must be positive")
    tau_h = tau * HOURS_PER_SECOND
    mu0, direction = open_half(residues)
    g_discharge = tau_h / (eta_d * capacity)
    g_charge = eta_c * tau_h / capacity
    if direction < 0:
        g_d, g_c = g_discharge, 0.0
    elif direction > 0:
        g_d, g_c = 0.0, g_charge
    else:
        g_d, g_c = g_discharge, g_charge  # fresh start: either move opens a half
    big_theta = theta_a * (3600.0 / tau) * (aging.a / 4.0)
    return IntervalCost(mu0, g_d, g_c, theta_b, big_theta, aging.b)


def cost_gradient(d, c, model: IntervalCost):
    """Subgradient of the frozen-residue interval cost at (d, c)."""
    return model.gradient(d, c)


def total_loss(events, params: AgingParams) -> float:
    """Summed lifetime loss of a collection of cycle events."""
    if not events:
        return 0.0
    depths = np.array([e.depth for e in events])
    counts = np.array([e.n_cyc for e in events])
    return float(((counts / 2.0) * params.a * depths**params.b).sum())
