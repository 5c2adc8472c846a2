"""Finite-difference sensitivities of the differential phase.

Every evaluation re-derives t1o and t2o for the perturbed configuration, so
derivatives include the coupling between the imperfections and the way the
pulse times are chosen.  Evaluations are cached per (n, zeta) by the bytes of
the perturbation vector and can be spread over a thread pool (the kernels
release the GIL).
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from .dynamics import DEFAULT_SETTINGS, IntegratorSettings
from .errors import AmbiguousFit, InsufficientData
from .model import (
    CYLINDRICAL_PARAMS,
    N_PARAMS,
    PARAM_INDEX,
    PARAM_NAMES,
    PerturbationVector,
    direction,
    unpack_parameters,
)
from .protocol import analytic_phase_harmonic, harmonic_kappas, run_interferometer

DEFAULT_H = {1: 1e-4, 2: 1e-4, 3: 1e-3}
STEP_CHECK_LIMIT = 1e-3


@dataclass(frozen=True)
class EvalSettings:
    """Integrator tolerances plus the golden-section tolerance of the timing searches.

    The Newton polish after the golden section takes the pulse times to
    ~1e-12 regardless, so ``search_tol`` mainly sets the cost.
    """

    integrator: IntegratorSettings = DEFAULT_SETTINGS
    search_tol: float = 1e-6
    analytic: bool = False


DEFAULT_EVAL = EvalSettings()


def _as_array(eta) -> np.ndarray:
    if isinstance(eta, PerturbationVector):
        return eta.values
    arr = np.asarray(eta, dtype=float)
    if arr.shape != (N_PARAMS,):
        raise ValueError(f"perturbation vector needs {N_PARAMS} entries")
    return arr


def _harmonic_phase(trap, init, bragg, timing) -> float:
    omegas, kx, ky = harmonic_kappas(trap, bragg)

    def spread(t):
        return -float(np.sum((ky * np.sin(omegas * t) / omegas) ** 2))

    def gap(t):
        return float(np.sum((kx * np.sin(omegas * t) / omegas) ** 2))

    def gap_slope(t):
        return float(np.sum(kx**2 * np.sin(omegas * t) * np.cos(omegas * t) / omegas))

    half = 0.5 * math.pi
    t1o = optimize.minimize_scalar(
        spread, bounds=(0.6 * half, 1.4 * half), method="bounded", options={"xatol": 1e-12}
    ).x
    centre = 2 * math.pi * timing.n
    t2o = optimize.minimize_scalar(
        gap, bounds=(centre - half, centre + half), method="bounded", options={"xatol": 1e-12}
    ).x
    lo, hi = t2o - 1e-3, t2o + 1e-3
    if gap_slope(lo) < 0 < gap_slope(hi):
        t2o = optimize.brentq(gap_slope, lo, hi, xtol=1e-15)
    return analytic_phase_harmonic(omegas, kx, ky, t1o + timing.delta1, t2o + timing.delta2).Phi


def phase_at(eta, n: int = 1, zeta: float = 1.0, settings: EvalSettings = DEFAULT_EVAL) -> float:
    """Phi / kR for the configuration described by ``eta``.

    With ``settings.analytic`` and a trap free of cubic and quartic terms the
    closed-form harmonic solution is used instead of the integrator.
    """
    trap, init, bragg, timing = unpack_parameters(_as_array(eta), zeta, n)
    if settings.analytic and trap.is_harmonic:
        return _harmonic_phase(trap, init, bragg, timing)
    report = run_interferometer(trap, init, bragg, timing, settings.integrator, settings.search_tol)
    return report.Phi


class PhaseEvaluator:
    """Cached, optionally parallel evaluation of Phi at fixed (n, zeta)."""

    def __init__(self, n: int = 1, zeta: float = 1.0, settings: EvalSettings = DEFAULT_EVAL, workers: int | None = None):
        self.n = int(n)
        self.zeta = float(zeta)
        self.settings = settings
        self.workers = workers or os.cpu_count() or 1
        self._cache: dict[bytes, float] = {}

    def __call__(self, eta) -> float:
        arr = np.ascontiguousarray(_as_array(eta), dtype=float)
        key = arr.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            hit = phase_at(arr, self.n, self.zeta, self.settings)
            self._cache[key] = hit
        return hit

    def many(self, etas: Sequence[np.ndarray]) -> list:
        todo = {}
        for eta in etas:
            arr = np.ascontiguousarray(eta, dtype=float)
            key = arr.tobytes()
            if key not in self._cache and key not in todo:
                todo[key] = arr
        if todo:
            items = list(todo.items())
            if self.workers > 1 and len(items) > 1:
                with ThreadPoolExecutor(self.workers) as pool:
                    values = list(pool.map(lambda kv: phase_at(kv[1], self.n, self.zeta, self.settings), items))
            else:
                values = [phase_at(arr, self.n, self.zeta, self.settings) for _, arr in items]
            for (key, _), value in zip(items, values):
                self._cache[key] = value
        return [self._cache[np.ascontiguousarray(e, dtype=float).tobytes()] for e in etas]

    @property
    def cache_size(self) -> int:
        return len(self._cache)


@dataclass(frozen=True)
class SensitivityEntry:
    """C = (1/kR) d^order Phi / d eta_i ... at (n, zeta), with the step used."""

    order: int
    param_names: tuple
    value: float
    n: int
    zeta: float
    h: float
    step_check: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("sensitivity value must be finite")
        if len(self.param_names) != self.order:
            raise ValueError("need one parameter name per derivative order")

    @property
    def key(self) -> tuple:
        return self.param_names

    def csv_row(self) -> list:
        names = list(self.param_names) + [""] * (3 - self.order)
        return [str(self.order), *names, str(self.n), _fmt(self.zeta), _fmt(self.h), _fmt(self.value)]


CSV_HEADER = ["order", "param1", "param2", "param3", "n", "zeta", "h", "value"]


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def canonical_names(names: Iterable[str]) -> tuple:
    names = tuple(names)
    for name in names:
        if name not in PARAM_INDEX:
            from .errors import UnknownParameterName

            raise UnknownParameterName(name)
    return tuple(sorted(names, key=lambda nm: PARAM_INDEX[nm]))


def _stencil(names: tuple, h: float, cylindrical: bool):
    """Weights and displacements for a derivative over canonically sorted ``names``.

    Returns (points, denominator) with points a list of (weight, displacement).
    """
    dirs = {nm: direction(nm, cylindrical) for nm in set(names)}
    counts = {nm: names.count(nm) for nm in dict.fromkeys(names)}
    order = len(names)
    distinct = list(counts)
    zero = np.zeros(N_PARAMS)
    if len(distinct) == order:
        pts = []
        for signs in itertools.product((1, -1), repeat=order):
            disp = zero.copy()
            for s, nm in zip(signs, distinct):
                disp += s * h * dirs[nm]
            pts.append((float(np.prod(signs)), disp))
        return pts, (2 * h) ** order
    if order == 2:
        (a,) = distinct
        return [(1.0, h * dirs[a]), (-2.0, zero), (1.0, -h * dirs[a])], h * h
    if len(distinct) == 1:
        (a,) = distinct
        d = dirs[a]
        return [(1.0, 2 * h * d), (-2.0, h * d), (2.0, -h * d), (-1.0, -2 * h * d)], 2 * h**3
    rep = next(nm for nm, c in counts.items() if c == 2)
    other = next(nm for nm, c in counts.items() if c == 1)
    pts = []
    for sk in (1, -1):
        base = sk * h * dirs[other]
        pts += [(sk * 1.0, base + h * dirs[rep]), (sk * -2.0, base), (sk * 1.0, base - h * dirs[rep])]
    return pts, 2 * h**3


def _evaluate(evaluator: PhaseEvaluator, eta0: np.ndarray, names, h, cylindrical) -> float:
    pts, denom = _stencil(names, h, cylindrical)
    values = evaluator.many([eta0 + d for _, d in pts])
    return float(sum(w * v for (w, _), v in zip(pts, values)) / denom)


def _eta0(eta0) -> np.ndarray:
    return np.zeros(N_PARAMS) if eta0 is None else np.array(_as_array(eta0), dtype=float)


def _check_h(h: float):
    if not 1e-6 <= h <= 1e-2:
        raise ValueError(f"step h={h} outside [1e-6, 1e-2]")


def gradient(
    eta0=None,
    n: int = 1,
    zeta: float = 1.0,
    h: float = 1e-4,
    settings: EvalSettings = DEFAULT_EVAL,
    evaluator: PhaseEvaluator | None = None,
    params: Sequence[str] = PARAM_NAMES,
) -> np.ndarray:
    """Central-difference dPhi/d eta (kR units) for each name in ``params``."""
    _check_h(h)
    ev = evaluator or PhaseEvaluator(n, zeta, settings)
    base = _eta0(eta0)
    pts = []
    for name in params:
        d = direction(name)
        pts += [base + h * d, base - h * d]
    vals = ev.many(pts)
    return np.array([(vals[2 * i] - vals[2 * i + 1]) / (2 * h) for i in range(len(params))])


def hessian_entry(
    i: str,
    j: str,
    eta0=None,
    n: int = 1,
    zeta: float = 1.0,
    h: float = 1e-4,
    settings: EvalSettings = DEFAULT_EVAL,
    evaluator: PhaseEvaluator | None = None,
    cylindrical: bool = False,
) -> SensitivityEntry:
    """Second derivative (1/kR) d2 Phi / d eta_i d eta_j by central differences."""
    _check_h(h)
    names = canonical_names((i, j))
    ev = evaluator or PhaseEvaluator(n, zeta, settings)
    value = _evaluate(ev, _eta0(eta0), names, h, cylindrical)
    return SensitivityEntry(2, names, value, int(n), float(zeta), h)


def third_entry(
    i: str,
    j: str,
    k: str,
    eta0=None,
    n: int = 1,
    zeta: float = 1.0,
    h: float = 1e-3,
    settings: EvalSettings = DEFAULT_EVAL,
    evaluator: PhaseEvaluator | None = None,
    cylindrical: bool = False,
) -> SensitivityEntry:
    """Third derivative by the 8-point sign stencil (repeated names get the matching mixed stencil)."""
    _check_h(h)
    names = canonical_names((i, j, k))
    ev = evaluator or PhaseEvaluator(n, zeta, settings)
    value = _evaluate(ev, _eta0(eta0), names, h, cylindrical)
    return SensitivityEntry(3, names, value, int(n), float(zeta), h)


def _all_keys(order: int, params: Sequence[str]):
    ordered = canonical_names(params)
    return list(itertools.combinations_with_replacement(ordered, order))


def table_scan(
    order: int,
    n_list: Sequence[int] = (1,),
    zeta: float = 1.0,
    threshold: float = 1e-4,
    h: float | None = None,
    eta0=None,
    params: Sequence[str] | None = None,
    cylindrical: bool = False,
    settings: EvalSettings = DEFAULT_EVAL,
    workers: int | None = None,
    step_check: bool = True,
    keys: Sequence[tuple] | None = None,
) -> list:
    """Enumerate derivative entries, keep those above ``threshold`` at n = 1.

    Retained entries are evaluated at every n in ``n_list``; with
    ``step_check`` the n = 1 value is recomputed at h/2 and the difference
    stored on the entry.  Output is ordered by (canonical key, n).
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    h = DEFAULT_H[order] if h is None else h
    _check_h(h)
    if params is None:
        params = CYLINDRICAL_PARAMS if cylindrical else PARAM_NAMES
    candidates = [canonical_names(k) for k in keys] if keys is not None else _all_keys(order, params)
    base = _eta0(eta0)

    evaluators = {n: PhaseEvaluator(n, zeta, settings, workers) for n in set(n_list) | {1}}

    def scan(ev, key_list, step):
        pts, spans = [], []
        for key in key_list:
            st, denom = _stencil(key, step, cylindrical)
            spans.append((len(pts), st, denom))
            pts += [base + d for _, d in st]
        vals = ev.many(pts)
        out = []
        for start, st, denom in spans:
            out.append(sum(w * vals[start + m] for m, (w, _) in enumerate(st)) / denom)
        return out

    first = scan(evaluators[1], candidates, h)
    kept = [(k, v) for k, v in zip(candidates, first) if abs(v) > threshold]
    kept_keys = [k for k, _ in kept]
    checks = {}
    if step_check and kept_keys:
        halves = scan(evaluators[1], kept_keys, h / 2)
        checks = {k: abs(v - hv) for (k, v), hv in zip(kept, halves)}

    by_n = {1: dict(kept)}
    for n in sorted(set(n_list) - {1}):
        by_n[n] = dict(zip(kept_keys, scan(evaluators[n], kept_keys, h)))

    entries = []
    for key in sorted(kept_keys, key=lambda k: tuple(PARAM_INDEX[x] for x in k)):
        for n in sorted(set(n_list)):
            entries.append(
                SensitivityEntry(order, key, float(by_n[n][key]), n, float(zeta), h, checks.get(key) if n == 1 else None)
            )
    return entries


def write_entries_csv(entries: Iterable[SensitivityEntry], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for e in entries:
        writer.writerow(e.csv_row())


def read_entries_csv(fh) -> list:
    out = []
    for row in csv.DictReader(fh):
        order = int(row["order"])
        names = tuple(row[f"param{i}"] for i in range(1, order + 1))
        out.append(SensitivityEntry(order, names, float(row["value"]), int(row["n"]), float(row["zeta"]), float(row["h"])))
    return out


def contributing_parameters(entries: Iterable[SensitivityEntry]) -> set:
    return {nm for e in entries for nm in e.param_names}


# ---------------------------------------------------------------------------
# functional forms in n and zeta


def f1(n, zeta):
    n = np.asarray(n, dtype=float)
    return np.sin(2 * np.pi * zeta * (n + 0.25)) - np.sin(np.pi * zeta / 2)


def f2(n, zeta):
    n = np.asarray(n, dtype=float)
    return np.cos(2 * np.pi * zeta * (n + 0.25)) - np.cos(np.pi * zeta / 2)


def f3(n, zeta):
    n = np.asarray(n, dtype=float)
    return 1 - np.cos(2 * np.pi * zeta * n)


def sinusoid(n, zeta, amplitude, n0):
    """A [sin 2 pi zeta (n + n0) - sin 2 pi zeta n0]; n0 = 1/4 gives A f1."""
    n = np.asarray(n, dtype=float)
    return amplitude * (np.sin(2 * np.pi * zeta * (n + n0)) - np.sin(2 * np.pi * zeta * n0))


def _canonical_n0(n0: float, amplitude: float, zeta: float):
    # (n0 + 1/(2 zeta), -A) is the same curve; pick the branch centred on 1/4
    period = 1.0 / (2 * zeta)
    shifted = n0 - (0.25 - period / 2)
    k = math.floor(shifted / period)
    n0 -= k * period
    if k % 2:
        amplitude = -amplitude
    return n0, amplitude


@dataclass(frozen=True)
class FitForms:
    """Best-fitting n dependence.

    ``kind`` is "zero", "polynomial" or "sinusoid".  Polynomial coefficients
    are (c0, c1, c2) for c0 + c1 n + c2 n^2; a sinusoid carries amplitude and
    n0 and names the matching tabulated function in ``label`` (f1, f2, f3)
    when n0 lands on its value.  ``n0_free`` is the unconstrained optimum;
    ``n0`` snaps to a tabulated phase when that fits equally well.
    """

    kind: str
    zeta: float
    residual: float
    coefficients: tuple = ()
    amplitude: float = 0.0
    n0: float = 0.0
    label: str = ""
    residuals: dict = field(default_factory=dict)
    n0_free: float = math.nan

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        if self.kind == "polynomial":
            c0, c1, c2 = self.coefficients
            return c0 + c1 * n + c2 * n * n
        if self.kind == "sinusoid":
            return sinusoid(n, self.zeta, self.amplitude, self.n0)
        return np.zeros_like(n)


def _fit_polynomial(n, y):
    A = np.vander(n, 3, increasing=True)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return tuple(coef), float(np.linalg.norm(A @ coef - y))


def _fit_sinusoid(n, y, zeta):
    def amp_for(n0):
        g = sinusoid(n, zeta, 1.0, n0)
        gg = float(g @ g)
        return (float(g @ y) / gg) if gg > 1e-300 else 0.0

    def resid(n0):
        return float(np.linalg.norm(sinusoid(n, zeta, amp_for(n0), n0) - y))

    period = 1.0 / zeta
    grid = np.linspace(0.0, period, 2001)
    best = grid[int(np.argmin([resid(g) for g in grid]))]
    step = grid[1] - grid[0]
    res = optimize.minimize_scalar(resid, bounds=(best - step, best + step), method="bounded", options={"xatol": 1e-13})
    n0 = float(res.x)
    r_free = resid(n0)
    n0_free = _canonical_n0(n0, amp_for(n0), zeta)[0]
    # integer sampling cannot pin n0 when 2 zeta is an integer (aliasing);
    # prefer a tabulated phase whenever it explains the data as well
    floor = 1e-9 * float(np.max(np.abs(y))) * math.sqrt(len(y))
    for ref in _reference_n0(zeta).values():
        if resid(ref) <= 1.1 * r_free + floor:
            n0 = ref
            break
    amp = amp_for(n0)
    n0, amp = _canonical_n0(n0, amp, zeta)
    return amp, n0, resid(n0) if amp else float(np.linalg.norm(y)), n0_free


def _reference_n0(zeta):
    return {"f1": 0.25, "f2": 0.25 + 1 / (4 * zeta), "f3": 1 / (4 * zeta)}


def _label(n0, amplitude, zeta, tol=1e-3):
    period = 1.0 / (2 * zeta)
    for name, ref in _reference_n0(zeta).items():
        d = (n0 - ref) / period
        if abs(d - round(d)) * period < tol:
            return name
    return ""


def fit_n_dependence(values: Sequence[tuple], zeta: float = 1.0, ambiguity: float = 0.1) -> FitForms:
    """Choose between a quadratic polynomial and A[sin 2 pi zeta (n+n0) - sin 2 pi zeta n0].

    The sinusoid family contains A f1 (n0 = 1/4), A f2 and A f3 as special
    cases.  Raises AmbiguousFit when the two residuals are within
    ``ambiguity`` (relative) of each other.
    """
    if len(values) < 4:
        raise InsufficientData("need at least 4 (n, C) points")
    n = np.array([v[0] for v in values], dtype=float)
    y = np.array([v[1] for v in values], dtype=float)
    scale = float(np.max(np.abs(y)))
    if scale == 0.0:
        return FitForms("zero", zeta, 0.0, (0.0, 0.0, 0.0))
    coef, r_poly = _fit_polynomial(n, y)
    amp, n0, r_sin, n0_free = _fit_sinusoid(n, y, zeta)
    residuals = {"polynomial": r_poly, "sinusoid": r_sin}
    floor = 1e-9 * scale * math.sqrt(len(y))
    lo, hi = sorted((max(r_poly, floor), max(r_sin, floor)))
    if hi - lo <= ambiguity * hi:
        raise AmbiguousFit(
            f"polynomial residual {r_poly:.3g} and sinusoid residual {r_sin:.3g} are indistinguishable",
            [("polynomial", r_poly), ("sinusoid", r_sin)],
        )
    if r_poly <= r_sin:
        return FitForms("polynomial", zeta, r_poly, coef, residuals=residuals)
    return FitForms(
        "sinusoid", zeta, r_sin, amplitude=amp, n0=n0, label=_label(n0, amp, zeta),
        residuals=residuals, n0_free=n0_free,
    )


def pole_factor(zeta, poles: Sequence[tuple]):
    """Product of zeta^m (for a pole at 0) and (p^2 - zeta^2)^m (pole at p > 0)."""
    z = np.asarray(zeta, dtype=float)
    out = np.ones_like(z)
    for loc, mult in poles:
        out = out * (z if loc == 0 else (loc * loc - z * z)) ** mult
    return out


DEFAULT_POLES = ((0, 1), (1, 1), (3, 1))


@dataclass(frozen=True)
class ZetaFit:
    A0: float
    poles: tuple
    residuals: tuple
    rms_relative: float

    def __call__(self, zeta):
        return self.A0 / pole_factor(zeta, self.poles)


def fit_zeta_dependence(values: Sequence[tuple], poles: Sequence[tuple] = DEFAULT_POLES, min_distance: float = 0.05) -> ZetaFit:
    """Least-squares A0 for A(zeta) = A0 / prod(pole factors)."""
    if not values:
        raise InsufficientData("need at least one (zeta, A) point")
    z = np.array([v[0] for v in values], dtype=float)
    a = np.array([v[1] for v in values], dtype=float)
    for loc, _ in poles:
        if np.any(np.abs(z - loc) < min_distance):
            raise ValueError(f"zeta samples must stay {min_distance} away from the pole at {loc}")
    g = 1.0 / pole_factor(z, tuple(poles))
    A0 = float(g @ a / (g @ g))
    resid = a - A0 * g
    rel = np.where(a != 0, resid / np.where(a != 0, a, 1.0), resid)
    return ZetaFit(A0, tuple(poles), tuple(resid.tolist()), float(np.sqrt(np.mean(rel**2))))


# ---------------------------------------------------------------------------
# rotation error


@dataclass(frozen=True)
class RotationBudget:
    delta_omega: float
    coefficient: float
    n: int
    omega: float
    eta_i: float
    eta_j: float


def rotation_error(entry, omega: float, eta_i: float, eta_j: float, n: int | None = None) -> RotationBudget:
    """dOmega = C omega eta_i eta_j / (16 pi n) for a second-order coefficient.

    ``entry`` may be a SensitivityEntry or a bare coefficient (then pass n).
    """
    if isinstance(entry, SensitivityEntry):
        if entry.order != 2:
            raise ValueError("rotation_error needs a second-order entry")
        C, n = entry.value, entry.n
    else:
        C = float(entry)
        if n is None:
            raise ValueError("n is required with a bare coefficient")
    return RotationBudget(C * omega * eta_i * eta_j / (16 * math.pi * n), C, int(n), omega, eta_i, eta_j)


def allowed_eta_product(C: float, n: int, omega: float, target: float) -> float:
    """Largest |eta_i eta_j| keeping |dOmega| below ``target``; inf when C = 0."""
    if C == 0:
        return math.inf
    return abs(16 * math.pi * n * target / (C * omega))


__all__ = [
    "EvalSettings",
    "PhaseEvaluator",
    "SensitivityEntry",
    "FitForms",
    "ZetaFit",
    "RotationBudget",
    "phase_at",
    "gradient",
    "hessian_entry",
    "third_entry",
    "table_scan",
    "write_entries_csv",
    "read_entries_csv",
    "fit_n_dependence",
    "fit_zeta_dependence",
    "rotation_error",
    "allowed_eta_product",
]
