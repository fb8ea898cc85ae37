"""Kinematic bicycle integration, time-to-collision and bounding-box checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

G = 9.81
V_MAX = 30.0


class DomainError(ValueError):
    """Input outside an operation's domain."""


@dataclass(frozen=True)
class VehicleGeometry:
    l_f: float = 1.4
    l_r: float = 1.4
    body_length: float = 4.5
    body_width: float = 1.8

    def __post_init__(self):
        if min(self.l_f, self.l_r, self.body_length, self.body_width) <= 0:
            raise DomainError("vehicle geometry must be strictly positive")
        if self.l_f + self.l_r > self.body_length:
            raise DomainError("wheelbase exceeds body length")


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    v: float
    phi: float = 0.0

    def __post_init__(self):
        if not all(map(math.isfinite, (self.x, self.y, self.v, self.phi))):
            raise DomainError("vehicle state must be finite")
        if not 0.0 <= self.v <= V_MAX:
            raise DomainError(f"speed {self.v} outside [0, {V_MAX}]")


@dataclass(frozen=True)
class VehicleAction:
    u: float
    delta_f: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.delta_f)):
            raise DomainError("action must be finite")
        if abs(self.u) > G:
            raise DomainError(f"acceleration {self.u} outside [-{G}, {G}]")
        if abs(self.delta_f) >= math.pi / 2:
            raise DomainError("steering angle must satisfy |delta_f| < pi/2")


@dataclass(frozen=True)
class StepResult:
    state: VehicleState
    speed_clamped: bool


def slip_angle(delta_f: float, geom: VehicleGeometry) -> float:
    if not math.isfinite(delta_f):
        raise DomainError("steering angle must be finite")
    if abs(delta_f) >= math.pi / 2:
        raise DomainError("steering angle must satisfy |delta_f| < pi/2")
    return math.atan(geom.l_r / (geom.l_r + geom.l_f) * math.tan(delta_f))


def step_vehicle_with_flag(s: VehicleState, a: VehicleAction, dt: float,
                           geom: VehicleGeometry) -> StepResult:
    """Forward-Euler bicycle step; speed is projected onto ``[0, V_MAX]`` afterwards."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    beta = slip_angle(a.delta_f, geom)
    x = s.x + s.v * math.cos(s.phi + beta) * dt
    y = s.y + s.v * math.sin(s.phi + beta) * dt
    v = s.v + a.u * dt
    phi = s.phi + s.v / geom.l_r * math.sin(beta) * dt
    clamped = not 0.0 <= v <= V_MAX
    v = min(max(v, 0.0), V_MAX)
    return StepResult(VehicleState(x, y, v, phi), clamped)


def step_vehicle(s: VehicleState, a: VehicleAction, dt: float, geom: VehicleGeometry) -> VehicleState:
    return step_vehicle_with_flag(s, a, dt, geom).state


def time_to_collision(gap_d: float, closing_speed_dv: float) -> float:
    """``d / dv`` when closing, ``+inf`` otherwise."""
    if gap_d < 0:
        raise DomainError("gap must be non-negative")
    if closing_speed_dv <= 0:
        return math.inf
    return gap_d / closing_speed_dv


def bumper_gap(rear: VehicleState, front: VehicleState, geom_rear: VehicleGeometry,
               geom_front: VehicleGeometry) -> float:
    """Longitudinal bumper-to-bumper distance, floored at zero."""
    return max(0.0, front.x - rear.x - 0.5 * (geom_rear.body_length + geom_front.body_length))


def feasible_action_interval(ego: VehicleState, leader: Optional[VehicleState],
                             follower: Optional[VehicleState], dt: float, tau_s: float = 3.0,
                             geom: VehicleGeometry = VehicleGeometry(),
                             g: float = G) -> tuple[float, float]:
    """Accelerations keeping both one-step-ahead TTCs at or above ``tau_s``.

    Neighbors are propagated one step at constant speed and the ego with
    ``delta_f = 0``.  Gaps are signed bumper gaps.  A follower floor out of
    reach saturates at ``+g``; a negative leader cap or a cap below the floor
    falls back to the emergency-braking singleton ``(-g, -g)``.
    """
    if tau_s <= 0:
        raise DomainError("tau_s must be positive")
    lo, hi = -g, g
    x_next = ego.x + ego.v * math.cos(ego.phi) * dt
    if leader is not None:
        xl = leader.x + leader.v * math.cos(leader.phi) * dt
        gap = xl - x_next - geom.body_length
        cap = leader.v + gap / tau_s  # largest admissible ego speed after the step
        if cap < 0:
            return (-g, -g)
        if cap < V_MAX:
            hi = min(hi, (cap - ego.v) / dt)
    if follower is not None:
        xf = follower.x + follower.v * math.cos(follower.phi) * dt
        gap = x_next - xf - geom.body_length
        floor = follower.v - gap / tau_s  # smallest admissible ego speed after the step
        if floor > 0:
            lo = max(lo, min(g, (floor - ego.v) / dt))  # out of reach: pull away at +g
    if lo > hi:
        return (-g, -g)
    return (lo, hi)


def bounding_box(s: VehicleState, geom: VehicleGeometry) -> tuple[float, float, float, float]:
    """Axis-aligned box ``(xmin, xmax, ymin, ymax)`` around the heading-rotated body."""
    c, sn = abs(math.cos(s.phi)), abs(math.sin(s.phi))
    hx = 0.5 * (geom.body_length * c + geom.body_width * sn)
    hy = 0.5 * (geom.body_length * sn + geom.body_width * c)
    return (s.x - hx, s.x + hx, s.y - hy, s.y + hy)


def boxes_overlap(a, b) -> bool:
    return a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]


def box_distance(a, b) -> float:
    dx = max(0.0, b[0] - a[1], a[0] - b[1])
    dy = max(0.0, b[2] - a[3], a[2] - b[3])
    return math.hypot(dx, dy)


def detect_collision(states: Sequence[VehicleState],
                     geoms: Sequence[VehicleGeometry]) -> Optional[tuple[int, int]]:
    """First overlapping pair ``(i, j)``, ``i < j``, in lexicographic order."""
    if len(states) < 2:
        raise DomainError("collision detection needs at least two vehicles")
    boxes = [bounding_box(s, g) for s, g in zip(states, geoms)]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if boxes_overlap(boxes[i], boxes[j]):
                return (i, j)
    return None
