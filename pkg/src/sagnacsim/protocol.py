"""The dual Sagnac pulse sequence and its phase bookkeeping.

Sequence: y split at t = 0 into R (+y kick) and L (-y kick); after t1 each
packet is split along x into + and -; after a further t2 the x beam closes
both interferometers.  Each interferometer phase is the sum of a dynamical,
a laser and a separation term, all reported in units of kR.  The
differential phase is Phi = dphi_R - dphi_L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import DEFAULT_SETTINGS, IntegratorSettings, _raise_for
from .errors import NoBracket
from .model import (
    _EXPS_ARRAY,
    BraggGeometry,
    InitialState,
    ProtocolTiming,
    TrapConfig,
)

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class InterferometerPhase:
    side: str
    phi_dyn: float
    phi_laser: float
    phi_sep: float
    phi_total: float
    r_a: tuple
    r_plus: tuple
    r_minus: tuple
    v_plus: tuple
    v_minus: tuple


@dataclass(frozen=True)
class PhaseBreakdown:
    """Differential phase terms (kR units) plus per-interferometer detail when available."""

    Phi_dyn: float
    Phi_laser: float
    Phi_sep: float
    Phi: float
    right: InterferometerPhase | None = None
    left: InterferometerPhase | None = None


@dataclass(frozen=True)
class RunReport:
    phases: PhaseBreakdown
    t1o: float
    t2o: float
    t1: float
    t2: float
    gap2: float
    n: int

    @property
    def Phi(self) -> float:
        return self.phases.Phi

    def as_dict(self) -> dict:
        p = self.phases
        out = {
            "n": self.n,
            "t1o": self.t1o,
            "t2o": self.t2o,
            "t1": self.t1,
            "t2": self.t2,
            "gap2": self.gap2,
            "Phi": p.Phi,
            "Phi_dyn": p.Phi_dyn,
            "Phi_laser": p.Phi_laser,
            "Phi_sep": p.Phi_sep,
        }
        for side in (p.right, p.left):
            if side is None:
                continue
            tag = side.side
            out[f"phi_dyn_{tag}"] = side.phi_dyn
            out[f"phi_laser_{tag}"] = side.phi_laser
            out[f"phi_sep_{tag}"] = side.phi_sep
            out[f"phi_total_{tag}"] = side.phi_total
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.as_dict().items())

    def csv_header(self) -> str:
        return ",".join(self.as_dict())

    def to_csv_row(self) -> str:
        return ",".join(_fmt(v) for v in self.as_dict().values())


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".12g")


def _interferometer(side, pair_row, plus, minus, kx) -> InterferometerPhase:
    r_a = pair_row[:3]
    rp, rm = plus[:3], minus[:3]
    vp, vm = plus[3:6], minus[3:6]
    # phi_dyn = (1/hbar) int (L+ - L-) dt  ->  2 (S+ - S-) in kR units
    dyn = 2.0 * (plus[6] - minus[6])
    laser = 2.0 * float(np.dot(kx, r_a - 0.5 * (rp + rm)))
    sep = -float(np.dot(vp + vm, rp - rm))
    return InterferometerPhase(
        side, dyn, laser, sep, dyn + laser + sep,
        tuple(r_a), tuple(rp), tuple(rm), tuple(vp), tuple(vm),
    )


def phases_from_states(pair: np.ndarray, quad: np.ndarray, kx: np.ndarray) -> PhaseBreakdown:
    """Assemble the phase terms from packet states at the x split and at recombination."""
    right = _interferometer("R", pair[0], quad[0], quad[1], kx)
    left = _interferometer("L", pair[1], quad[2], quad[3], kx)
    return PhaseBreakdown(
        right.phi_dyn - left.phi_dyn,
        right.phi_laser - left.phi_laser,
        right.phi_sep - left.phi_sep,
        right.phi_total - left.phi_total,
        right,
        left,
    )


def _args(trap: TrapConfig, init: InitialState, bragg: BraggGeometry):
    return (
        np.array(init.r0),
        np.array(init.v0),
        bragg.kx,
        bragg.ky,
        trap.zeta**2,
        trap.coeff_array,
        _EXPS_ARRAY,
    )


def _check_search(status: int, what: str):
    if status == _kernels.NO_BRACKET:
        raise NoBracket(f"{what}: objective has no interior extremum on the search window")
    _raise_for(status, what)


def find_t1o(
    trap: TrapConfig,
    init: InitialState,
    bragg: BraggGeometry,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    tol: float = 1e-10,
) -> float:
    """Time (units 1/omega) at which the R and L packets are furthest apart.

    Searched on [0.6, 1.4] x pi/2 by golden section, then refined by Newton
    steps on the time derivative of the separation.
    """
    r0, v0, _, ky, z2, c, e = _args(trap, init, bragg)
    t, status = _kernels.find_t1o(
        r0, v0, ky, z2, c, e, settings.rel_tol, settings.abs_tol, settings.max_step,
        0.6 * HALF_PI, 1.4 * HALF_PI, tol, True,
    )
    _check_search(status, "find_t1o")
    return float(t)


def _split_state(trap, init, bragg, t1, settings):
    r0, v0, kx, ky, z2, c, e = _args(trap, init, bragg)
    pair = np.empty((2, 7))
    status = _kernels._pair_at(t1, r0, v0, ky, z2, c, e, settings.rel_tol, settings.abs_tol, settings.max_step, pair)
    _raise_for(status, "first leg")
    quad = np.empty((4, 7))
    _kernels.split_x(pair, kx, quad)
    return pair, quad


def find_t2o(
    trap: TrapConfig,
    init: InitialState,
    bragg: BraggGeometry,
    t1: float,
    n: int,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    tol: float = 1e-10,
) -> float:
    """Orbit time near 2 pi n minimising |r_R+ - r_R-|^2 + |r_L+ - r_L-|^2."""
    if n < 1:
        raise ValueError("n must be at least 1")
    _, quad = _split_state(trap, init, bragg, t1, settings)
    centre = 2 * math.pi * n
    t2, _, status = _kernels.find_t2o(
        quad, trap.zeta**2, trap.coeff_array, _EXPS_ARRAY,
        settings.rel_tol, settings.abs_tol, settings.max_step,
        centre - HALF_PI, centre + HALF_PI, tol, True,
    )
    _check_search(status, "find_t2o")
    return float(t2)


def run_interferometer(
    trap: TrapConfig,
    init: InitialState,
    bragg: BraggGeometry,
    timing: ProtocolTiming,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    search_tol: float = 1e-10,
) -> RunReport:
    """Simulate both interferometers and return the phase breakdown.

    Nominal times missing from ``timing`` are located first (t1o from the
    unperturbed-offset first leg, t2o with t1 = t1o + delta1 applied); the
    offsets delta1, delta2 are then added on top.
    """
    n = int(timing.n)
    t1o = timing.t1o
    t2o = timing.t2o
    if t1o is None and t2o is None:
        r0, v0, kx, ky, z2, c, e = _args(trap, init, bragg)
        t1o, t2o, pair, quad, status = _kernels.locate_and_run(
            r0, v0, kx, ky, z2, c, e, float(timing.delta1), float(timing.delta2), n,
            settings.rel_tol, settings.abs_tol, settings.max_step, search_tol, True,
        )
        _check_search(status, "run_interferometer")
    else:
        if t1o is None:
            t1o = find_t1o(trap, init, bragg, settings, search_tol)
        if t2o is None:
            t2o = find_t2o(trap, init, bragg, t1o + timing.delta1, n, settings, search_tol)
        r0, v0, kx, ky, z2, c, e = _args(trap, init, bragg)
        pair, quad, status = _kernels.run_sequence(
            r0, v0, kx, ky, z2, c, e, t1o + timing.delta1, t2o + timing.delta2,
            settings.rel_tol, settings.abs_tol, settings.max_step,
        )
        _raise_for(status, "run_interferometer")
    phases = phases_from_states(pair, quad, bragg.kx)
    return RunReport(
        phases,
        float(t1o),
        float(t2o),
        float(t1o + timing.delta1),
        float(t2o + timing.delta2),
        float(_kernels.gap2(quad)),
        n,
    )


# ---------------------------------------------------------------------------
# harmonic-trap oracles


def harmonic_kappas(trap: TrapConfig, bragg: BraggGeometry):
    """Principal frequencies and Bragg unit-vector components for a quadratic trap.

    Returns (omegas, kappa_x, kappa_y), each of length 3, with frequencies in
    units of omega.
    """
    if not trap.is_harmonic:
        raise ValueError("harmonic_kappas needs a trap without cubic or quartic terms")
    evals, evecs = np.linalg.eigh(trap.quadratic_matrix())
    if np.any(evals <= 0):
        raise ValueError("quadratic form is not confining")
    return np.sqrt(evals), evecs.T @ bragg.kx, evecs.T @ bragg.ky


def analytic_phase_harmonic(omegas, kappa_x, kappa_y, t1: float, t2: float) -> PhaseBreakdown:
    """Closed-form differential phases for a diagonal harmonic trap (kR units).

    Dynamical: sum_i (4/w_i) kx_i ky_i [sin w_i(2 t2 + t1) - sin w_i t1];
    separation: the negative of that; laser (= total):
    -4 sum_i (kx_i ky_i / w_i) [sin w_i(t1 + t2) - sin w_i t1].
    """
    w = np.asarray(omegas, dtype=float)
    kk = np.asarray(kappa_x, dtype=float) * np.asarray(kappa_y, dtype=float)
    dyn = float(np.sum(4 * kk / w * (np.sin(w * (2 * t2 + t1)) - np.sin(w * t1))))
    sep = -dyn
    laser = float(-4 * np.sum(kk / w * (np.sin(w * (t1 + t2)) - np.sin(w * t1))))
    return PhaseBreakdown(dyn, laser, sep, dyn + laser + sep)


def analytic_phase_second_order(
    gamma: float,
    delta1: float,
    delta2: float,
    psi_x_pp: float,
    psi_y_pp: float,
    zeta: float,
    n: int,
) -> float:
    """Second-order expansion of Phi/kR for a nearly symmetric harmonic trap."""
    timing = 4 * math.pi * gamma * (n * delta1 + (n + 0.25) * delta2)
    f1 = math.sin(2 * math.pi * zeta * (n + 0.25)) - math.sin(math.pi * zeta / 2)
    return timing - 4.0 / zeta * psi_x_pp * psi_y_pp * f1


def report_from_dict(data: dict) -> dict:
    """Parse a flat ``key = value`` report back into numbers (for round-trip checks)."""
    return {k: (int(v) if k == "n" else float(v)) for k, v in data.items()}


def parse_text_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return report_from_dict(out)


__all__ = [
    "InterferometerPhase",
    "PhaseBreakdown",
    "RunReport",
    "find_t1o",
    "find_t2o",
    "run_interferometer",
    "phases_from_states",
    "harmonic_kappas",
    "analytic_phase_harmonic",
    "analytic_phase_second_order",
    "parse_text_report",
]
