"""Locating the ideal parameter set from phase-response measurements.

Near the ideal point Phi ~ (eta - eta0)^T M (eta - eta0), so the measured
gradient is 2 M (eta - eta0) and eta0 ~ eta - M^-1 grad / 2.  Here M is the
matrix of the quadratic form, i.e. half the Hessian.  The simulator plays the
part of the experiment: it hides a set of true offsets and only reports Phi.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import Diverged, IndependentGroupsWarning, SingularM
from .model import HORIZONTAL_GROUP, N_PARAMS, PARAM_INDEX, VERTICAL_GROUP, param_index
from .sensitivity import DEFAULT_EVAL, EvalSettings, PhaseEvaluator, gradient, hessian_entry

MAX_CONDITION = 1e8


def estimate_eta0(M, g, max_condition: float = MAX_CONDITION, solver: str = "inverse") -> np.ndarray:
    """Parameter shift -M^-1 g / 2.

    ``solver="lstsq"`` opts in to the minimum-norm solution for a singular M;
    the default refuses with SingularM.
    """
    M = np.asarray(M, dtype=float)
    g = np.asarray(g, dtype=float)
    if M.shape != (len(g), len(g)):
        raise ValueError("M must be square and match g")
    if not np.allclose(M, M.T, rtol=1e-8, atol=1e-12):
        raise ValueError("M must be symmetric")
    if not np.any(g):
        return np.zeros_like(g)
    if solver == "lstsq":
        return -0.5 * np.linalg.lstsq(M, g, rcond=1.0 / max_condition)[0]
    if solver != "inverse":
        raise ValueError(f"unknown solver {solver!r}")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond >= max_condition:
        raise SingularM(
            f"M is singular on this subset (condition number {cond:.3g}); "
            "shrink the active subset or pass solver='lstsq'"
        )
    return -0.5 * np.linalg.solve(M, g)


class Experiment:
    """Phase as a function of the active controls, with finite-difference probes."""

    def __init__(self, phase: Callable[[np.ndarray], float], dim: int):
        self._phase = phase
        self.dim = dim

    def phase(self, x) -> float:
        return float(self._phase(np.asarray(x, dtype=float)))

    def gradient(self, x, h: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            out[i] = (self.phase(x + e) - self.phase(x - e)) / (2 * h)
        return out

    def hessian(self, x, h: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        H = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            for j in range(i, self.dim):
                ei = np.zeros(self.dim)
                ej = np.zeros(self.dim)
                ei[i] = h
                ej[j] = h
                if i == j:
                    v = (self.phase(x + ei) - 2 * self.phase(x) + self.phase(x - ei)) / h**2
                else:
                    v = (
                        self.phase(x + ei + ej) - self.phase(x + ei - ej)
                        - self.phase(x - ei + ej) + self.phase(x - ei - ej)
                    ) / (4 * h * h)
                H[i, j] = H[j, i] = v
        return H


class QuadraticSurrogate(Experiment):
    """Phi = (x - eta0)^T M (x - eta0) exactly."""

    def __init__(self, M, eta0):
        self.M = np.asarray(M, dtype=float)
        self.eta0 = np.asarray(eta0, dtype=float)
        super().__init__(self._quad, len(self.eta0))

    def _quad(self, x):
        d = x - self.eta0
        return float(d @ self.M @ d)


class SimulatedExperiment(Experiment):
    """The simulator with hidden offsets; controls add to the offsets on ``active``."""

    def __init__(
        self,
        active: Sequence[str],
        offsets=None,
        n: int = 1,
        zeta: float = 1.0,
        settings: EvalSettings = DEFAULT_EVAL,
    ):
        self.active = tuple(active)
        for name in self.active:
            param_index(name)
        base = np.zeros(N_PARAMS)
        if offsets is not None:
            items = offsets.items() if isinstance(offsets, dict) else zip(self.active, offsets)
            for name, value in items:
                base[param_index(name)] = value
        self.offsets = base
        self.evaluator = PhaseEvaluator(n, zeta, settings, workers=1)
        self._idx = np.array([PARAM_INDEX[nm] for nm in self.active])
        super().__init__(self._sim_phase, len(self.active))

    def full_vector(self, x) -> np.ndarray:
        eta = self.offsets.copy()
        eta[self._idx] += np.asarray(x, dtype=float)
        return eta

    def _sim_phase(self, x):
        return self.evaluator(self.full_vector(x))

    def gradient(self, x, h: float) -> np.ndarray:
        return gradient(self.full_vector(x), self.evaluator.n, self.evaluator.zeta, h, evaluator=self.evaluator, params=self.active)

    def hessian(self, x, h: float) -> np.ndarray:
        eta = self.full_vector(x)
        H = np.empty((self.dim, self.dim))
        for i, a in enumerate(self.active):
            for j in range(i, self.dim):
                v = hessian_entry(a, self.active[j], eta, self.evaluator.n, self.evaluator.zeta, h, evaluator=self.evaluator).value
                H[i, j] = H[j, i] = v
        return H


@dataclass
class CalibrationState:
    active: tuple
    eta: np.ndarray
    M: np.ndarray
    g: np.ndarray
    iteration: int = 0
    grad_norms: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    converged: bool = False

    def write_trace(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", *self.active, "grad_inf", "Phi"])
        for it, eta, gn, phi in self.trace:
            w.writerow([it, *(f"{v:.12g}" for v in eta), f"{gn:.12g}", f"{phi:.12g}"])


def check_groups(active: Sequence[str]) -> None:
    h = any(nm in HORIZONTAL_GROUP for nm in active)
    v = any(nm in VERTICAL_GROUP for nm in active)
    if h and v:
        warnings.warn(
            "active subset mixes horizontal and vertical parameters; the groups are independent "
            "and can be calibrated separately",
            IndependentGroupsWarning,
            stacklevel=3,
        )


def iterate_calibration(
    active: Sequence[str],
    experiment: Experiment,
    start=None,
    max_iter: int = 10,
    tol: float = 1e-6,
    h: float = 1e-4,
    M=None,
    remeasure: bool = False,
    solver: str = "inverse",
    matrix_floor: float = 1e-4,
) -> CalibrationState:
    """Repeat {measure gradient, step by -M^-1 g / 2} until |g|_inf < tol.

    M is measured once at the start (half the finite-difference Hessian,
    entries below ``matrix_floor`` set to zero) unless supplied; with
    ``remeasure`` it is refreshed every iteration.  Raises Diverged when the
    gradient norm grows three times in a row.
    """
    active = tuple(active)
    check_groups(active)
    x = np.zeros(len(active)) if start is None else np.array(start, dtype=float)

    def measure_M(at):
        H = experiment.hessian(at, h)
        H[np.abs(H) < matrix_floor] = 0.0
        return 0.5 * (H + H.T) / 2

    Mx = np.asarray(M, dtype=float) if M is not None else None
    state = CalibrationState(active, x.copy(), Mx, np.zeros(len(active)))
    growth = 0
    for it in range(1, max_iter + 1):
        g = experiment.gradient(x, h)
        gn = float(np.max(np.abs(g)))
        phi = experiment.phase(x)
        state.iteration = it
        state.g = g
        state.eta = x.copy()
        state.grad_norms.append(gn)
        state.phases.append(phi)
        state.trace.append((it, x.copy(), gn, phi))
        if gn < tol:
            state.converged = True
            return state
        if len(state.grad_norms) > 1 and gn > state.grad_norms[-2]:
            growth += 1
            if growth >= 3:
                raise Diverged(f"gradient norm grew for 3 consecutive iterations (now {gn:.3g})")
        else:
            growth = 0
        if state.M is None or remeasure:
            state.M = measure_M(x)
        x = x + estimate_eta0(state.M, g, solver=solver)
    return state


__all__ = [
    "estimate_eta0",
    "Experiment",
    "QuadraticSurrogate",
    "SimulatedExperiment",
    "CalibrationState",
    "iterate_calibration",
    "check_groups",
]
