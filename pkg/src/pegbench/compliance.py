"""Adaptive per-axis force limits.

A command clamp whose bound shrinks with the measured contact force:
the limit is ``alpha(|f_meas|) * f_max`` where ``alpha`` decays
exponentially from 1 toward a floor ``alpha_min``.  Under rigid contact
the measured force follows the recurrence ``F_{t+1} = alpha(F_t) * f_max``,
which settles at a designed equilibrium force when the recurrence is a
local contraction.  This module holds the scaling map, the closed-form
decay-constant solver, the fixed-point/stability analysis, the clamp
itself, and the recurrence simulator used to produce time-response and
cobweb traces.

Everything here is pure and value-typed; safe to call from any thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class InfeasibleTargetError(ValueError):
    """No decay constant exists for the requested equilibrium force."""


class DegenerateConfigError(ValueError):
    """The scaling map admits no fixed point in the open feasible band."""


@dataclass(frozen=True)
class AdaptiveLimitConfig:
    """Per-axis clamp parameters.

    f_max      hard ceiling (N, or N*m on rotational axes)
    alpha_min  scaling floor, in (0, 1)
    theta      exponential decay constant, same units as f_max
    axis_label free-form name used in reports
    """

    f_max: float
    alpha_min: float
    theta: float
    axis_label: str = ""

    def __post_init__(self) -> None:
        if not self.f_max > 0:
            raise ValueError(f"f_max must be positive, got {self.f_max}")
        if not 0 < self.alpha_min < 1:
            raise ValueError(f"alpha_min must lie in (0, 1), got {self.alpha_min}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")


@dataclass(frozen=True)
class LimitState:
    """One clamp evaluation: measured input, active limit, clipped output."""

    f_meas: float
    f_lim: float
    f_applied: float


@dataclass(frozen=True)
class StabilityReport:
    fixed_point: float
    margin: float
    stable: bool


def alpha_eval(f: float, cfg: AdaptiveLimitConfig) -> float:
    """Scaling factor alpha(f) = alpha_min + (1 - alpha_min) * exp(-f / theta).

    Strictly decreasing, alpha(0) = 1, tends to alpha_min as f grows.
    """
    if f < 0:
        raise ValueError(f"force magnitude must be nonnegative, got {f}")
    return cfg.alpha_min + (1.0 - cfg.alpha_min) * math.exp(-f / cfg.theta)


def solve_theta(f_star: float, f_max: float, alpha_min: float) -> float:
    """Decay constant theta* placing the clamp equilibrium exactly at f_star.

    Inverts alpha(f_star) * f_max = f_star, which requires
    alpha_min * f_max < f_star < f_max: below the floor the scaling can
    never reach f_star/f_max, and at or above f_max the map has no
    interior root.
    """
    if f_max <= 0 or not 0 < alpha_min < 1:
        raise ValueError("need f_max > 0 and alpha_min in (0, 1)")
    s = f_star / f_max
    if not alpha_min < s < 1.0:
        raise InfeasibleTargetError(
            f"equilibrium {f_star} not reachable: need "
            f"{alpha_min * f_max:.6g} < f_star < {f_max:.6g}"
        )
    return -f_star / math.log((s - alpha_min) / (1.0 - alpha_min))


def find_fixed_point(cfg: AdaptiveLimitConfig, tol: float = 1e-10) -> float:
    """Root of g(F) = alpha(F) * f_max - F by bisection.

    g is continuous with g(alpha_min * f_max) > 0 and g(f_max) < 0, so a
    sign change always brackets the (unique, since alpha is monotone)
    fixed point.
    """
    lo = cfg.alpha_min * cfg.f_max
    hi = cfg.f_max

    def g(f: float) -> float:
        return alpha_eval(f, cfg) * cfg.f_max - f

    if not (g(lo) > 0 and g(hi) < 0):
        raise DegenerateConfigError(
            f"no fixed point bracketed in ({lo:.6g}, {hi:.6g}) for {cfg}"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def check_stability(cfg: AdaptiveLimitConfig) -> StabilityReport:
    """Locate the clamp equilibrium and test local contraction.

    The recurrence derivative magnitude at the fixed point is
    |alpha'(F*)| * f_max = (1 - alpha_min) * exp(-F*/theta) * f_max / theta,
    which by the fixed-point relation equals (F* - alpha_min * f_max) / theta.
    Margin below one means perturbations contract.
    """
    f_star = find_fixed_point(cfg)
    margin = (f_star - cfg.alpha_min * cfg.f_max) / cfg.theta
    return StabilityReport(fixed_point=f_star, margin=margin, stable=margin < 1.0)


def clamp_command(f_cmd: float, f_meas: float, cfg: AdaptiveLimitConfig) -> LimitState:
    """Clip a signed command to +/- alpha(|f_meas|) * f_max.

    With zero measured force the limit equals f_max, so free-space
    commands pass through untouched.  Total over all finite inputs.
    """
    f_lim = alpha_eval(abs(f_meas), cfg) * cfg.f_max
    f_applied = min(max(f_cmd, -f_lim), f_lim)
    return LimitState(f_meas=f_meas, f_lim=f_lim, f_applied=f_applied)


def simulate_recurrence(cfg: AdaptiveLimitConfig, f0: float, n: int) -> list[float]:
    """Iterate F_{t+1} = alpha(F_t) * f_max from f0 for n steps.

    Models the rigid-contact closed loop where each applied command is
    fully reflected back as the next measurement.  Returns the length
    n+1 trajectory including f0; feed consecutive pairs to a cobweb
    plot.
    """
    if n < 1:
        raise ValueError(f"need at least one step, got {n}")
    if f0 < 0:
        raise ValueError(f"f0 must be nonnegative, got {f0}")
    seq = [float(f0)]
    f = float(f0)
    for _ in range(n):
        f = alpha_eval(f, cfg) * cfg.f_max
        seq.append(f)
    return seq


class LowPassFilter:
    """First-order low-pass used to smooth measured force before the clamp.

    Discretized as y += dt/(tau + dt) * (x - y).  A short time constant
    (20 ms default) keeps the limit from chattering on sensor noise
    without noticeably delaying contact response.
    """

    def __init__(self, tau: float = 0.020, dt: float = 0.002, y0: float = 0.0):
        if tau < 0 or dt <= 0:
            raise ValueError("need tau >= 0 and dt > 0")
        self._gain = dt / (tau + dt)
        self.y = float(y0)

    def update(self, x: float) -> float:
        self.y += self._gain * (x - self.y)
        return self.y

    def reset(self, y0: float = 0.0) -> None:
        self.y = float(y0)


def config_for_equilibrium(
    f_star: float, f_max: float, alpha_min: float, axis_label: str = ""
) -> AdaptiveLimitConfig:
    """Build a config whose clamp settles at f_star under sustained contact."""
    theta = solve_theta(f_star, f_max, alpha_min)
    return AdaptiveLimitConfig(
        f_max=f_max, alpha_min=alpha_min, theta=theta, axis_label=axis_label
    )
