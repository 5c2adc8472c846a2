"""Classical packet propagation with the action integrated alongside.

Two routes are provided: :func:`propagate` integrates the equations of motion
for an arbitrary polynomial trap with an adaptive Dormand-Prince 5(4) pair,
and :func:`analytic_propagate` uses the closed-form solution of a diagonal
harmonic trap.  The second one serves as the oracle for the first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import IntegrationFailure, NonUnitDirection
from .model import _EXPS_ARRAY, TrapConfig, potential_eval

_STATUS_TEXT = {
    _kernels.STEP_UNDERFLOW: "step size underflow",
    _kernels.TOO_MANY_STEPS: "step budget exhausted",
}


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_step: float = 1.0

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            value = getattr(self, name)
            if not 1e-14 <= value <= 1e-6:
                raise ValueError(f"{name}={value} outside [1e-14, 1e-6]")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")


DEFAULT_SETTINGS = IntegratorSettings()


@dataclass(frozen=True)
class PacketState:
    """Position (R), velocity (v_B) and accumulated action of one packet.

    ``label`` records the y-kick side ("R" or "L") and the x-kick sign
    ("+" or "-"), e.g. "R+"; it is carried through unchanged.
    """

    r: tuple
    v: tuple
    action: float = 0.0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "r", tuple(float(x) for x in self.r))
        object.__setattr__(self, "v", tuple(float(x) for x in self.v))
        object.__setattr__(self, "action", float(self.action))

    def as_array(self) -> np.ndarray:
        return np.array(self.r + self.v + (self.action,))

    @classmethod
    def from_array(cls, y, label: str = "") -> "PacketState":
        return cls(tuple(y[:3]), tuple(y[3:6]), float(y[6]), label)

    def energy(self, trap: TrapConfig) -> float:
        return 0.5 * float(np.dot(self.v, self.v)) + potential_eval(trap, self.r)


def _raise_for(status: int, what: str):
    if status != _kernels.OK:
        raise IntegrationFailure(f"{what}: {_STATUS_TEXT.get(status, f'status {status}')}")


def propagate(
    trap: TrapConfig,
    state: PacketState,
    duration: float,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
) -> PacketState:
    """Integrate r' = v, v' = -grad V, S' = v^2/2 - V for ``duration`` (units 1/omega)."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    y = state.as_array()
    status, _ = _kernels.integrate(
        y, float(duration), trap.zeta**2, trap.coeff_array, _EXPS_ARRAY,
        settings.rel_tol, settings.abs_tol, settings.max_step,
    )
    _raise_for(status, "propagate")
    return PacketState.from_array(y, state.label)


def trajectory(
    trap: TrapConfig,
    state: PacketState,
    duration: float,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    max_rows: int = 200_000,
) -> np.ndarray:
    """Rows (t, x, y, z, vx, vy, vz, S) at every accepted solver step."""
    y = state.as_array()
    trace = np.zeros((max_rows, 8))
    status, steps = _kernels.integrate(
        y, float(duration), trap.zeta**2, trap.coeff_array, _EXPS_ARRAY,
        settings.rel_tol, settings.abs_tol, settings.max_step, trace,
    )
    _raise_for(status, "trajectory")
    return trace[: min(steps + 1, max_rows)].copy()


def write_trajectory_csv(rows: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z", "vx", "vy", "vz", "S"])
        for row in rows:
            writer.writerow([f"{v:.12g}" for v in row])


def analytic_propagate(omegas, state: PacketState, duration: float) -> PacketState:
    """Closed-form motion in V = sum_i omega_i^2 r_i^2 / 2 (principal coordinates).

    The action increment per axis is
    (1/4w)[(v^2 - w^2 r^2) sin 2wt + 2 w v r (cos 2wt - 1)].
    """
    w = np.asarray(omegas, dtype=float)
    if w.shape != (3,) or np.any(w <= 0):
        raise ValueError("need three positive frequencies")
    r = np.asarray(state.r)
    v = np.asarray(state.v)
    t = float(duration)
    c, s = np.cos(w * t), np.sin(w * t)
    r_new = r * c + v / w * s
    v_new = -w * r * s + v * c
    c2, s2 = np.cos(2 * w * t), np.sin(2 * w * t)
    dS = ((v**2 - w**2 * r**2) * s2 + 2 * w * v * r * (c2 - 1)) / (4 * w)
    return PacketState(tuple(r_new), tuple(v_new), state.action + float(dS.sum()), state.label)


def apply_bragg_kick(state: PacketState, direction, sign: int) -> PacketState:
    """Instantaneous velocity change of ``sign`` v_B along a unit ``direction``."""
    d = np.asarray(direction, dtype=float)
    if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise NonUnitDirection(f"kick direction must be a unit 3-vector, got {direction!r}")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return replace(state, v=tuple(np.asarray(state.v) + sign * d))


def energy_drift(trap: TrapConfig, state: PacketState, duration: float, settings=DEFAULT_SETTINGS) -> float:
    """Relative change of v^2/2 + V over ``duration``."""
    e0 = state.energy(trap)
    e1 = propagate(trap, state, duration, settings).energy(trap)
    return abs(e1 - e0) / max(abs(e0), 1e-300) if e0 != 0 else abs(e1 - e0)


__all__ = [
    "IntegratorSettings",
    "DEFAULT_SETTINGS",
    "PacketState",
    "propagate",
    "trajectory",
    "write_trajectory_csv",
    "analytic_propagate",
    "apply_bragg_kick",
    "energy_drift",
]
