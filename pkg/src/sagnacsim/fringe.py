"""Fringe signals, ellipse fitting and the experimental slope analysis.

The two interferometers share a noisy common-mode phase phi_c, so each shot
gives S_R = A_R + B_R cos(phi_c + Phi/2) and S_L = A_L + B_L cos(phi_c - Phi/2).
Many shots trace an ellipse in the (S_R, S_L) plane whose shape fixes Phi.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateConic, InsufficientData


class FringePoint(NamedTuple):
    S_R: float
    S_L: float


@dataclass(frozen=True)
class SignalModel:
    """Offsets, amplitudes, differential phase and readout noise of the two signals."""

    Phi: float
    A_R: float = 0.5
    A_L: float = 0.5
    B_R: float = 0.5
    B_L: float = 0.5
    sigma: float = 0.0
    common_mode: str = "uniform"

    def __post_init__(self):
        for a, b in ((self.A_R, self.B_R), (self.A_L, self.B_L)):
            if not (0.0 <= a - abs(b) and a + abs(b) <= 1.0 + 1e-12):
                raise ValueError("A +- B must stay inside [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.common_mode not in ("uniform", "stratified"):
            raise ValueError("common_mode must be 'uniform' or 'stratified'")


def synthesize_fringe(model: SignalModel, count: int, seed: int | None = 0) -> list:
    """Draw ``count`` (S_R, S_L) shots; deterministic for a fixed seed.

    "uniform" draws phi_c independently on [0, 2 pi); "stratified" puts one
    draw in each of ``count`` equal sub-intervals.
    """
    if count < 5:
        raise ValueError("need at least 5 points")
    rng = np.random.default_rng(seed)
    if model.common_mode == "uniform":
        phi_c = rng.uniform(0.0, 2 * math.pi, count)
    else:
        phi_c = (np.arange(count) + rng.uniform(0.0, 1.0, count)) * (2 * math.pi / count)
    s_r = model.A_R + model.B_R * np.cos(phi_c + model.Phi / 2)
    s_l = model.A_L + model.B_L * np.cos(phi_c - model.Phi / 2)
    if model.sigma > 0:
        s_r = s_r + rng.normal(0.0, model.sigma, count)
        s_l = s_l + rng.normal(0.0, model.sigma, count)
    return [FringePoint(float(a), float(b)) for a, b in zip(s_r, s_l)]


def ellipticity_from_phase(Phi: float) -> float:
    """e = [2 / (|sec Phi| - 1)]^(1/2), the relation quoted with the experiment.

    This is the second eccentricity sqrt(a^2/b^2 - 1) of the equal-amplitude
    Lissajous ellipse; it is 0 for a circle (Phi = pi/2).
    """
    c = abs(math.cos(Phi))
    if c == 0.0:
        return 0.0
    return math.sqrt(2.0 / (1.0 / c - 1.0)) if c < 1.0 else math.inf


@dataclass(frozen=True)
class EllipseFitResult:
    """Conic a x^2 + b xy + c y^2 + d x + e y + f = 0 (unit norm, a > 0) and derived quantities."""

    conic: tuple
    Phi: float
    e_fit: float
    e_formula: float
    residual: float
    Phi_stderr: float = float("nan")

    @property
    def ellipticity_consistent(self) -> bool:
        if math.isinf(self.e_formula):
            return math.isinf(self.e_fit)
        return abs(self.e_fit - self.e_formula) <= 1e-6 * max(1.0, self.e_formula)

    def report(self) -> str:
        a, b, c, d, e, f = self.conic
        lines = [
            f"Phi = {self.Phi:.12g}",
            f"Phi_stderr = {self.Phi_stderr:.3g}",
            f"conic = {a:.12g},{b:.12g},{c:.12g},{d:.12g},{e:.12g},{f:.12g}",
            f"e_fit = {self.e_fit:.12g}",
            f"e_formula = {self.e_formula:.12g}",
            f"ellipticity_consistent = {self.ellipticity_consistent}",
            f"rms_geometric_residual = {self.residual:.6g}",
        ]
        return "\n".join(lines) + "\n"


def _direct_fit(x, y):
    # numerically stable split form of the ellipse-specific least squares
    D1 = np.column_stack([x * x, x * y, y * y])
    D2 = np.column_stack([x, y, np.ones_like(x)])
    S1, S2, S3 = D1.T @ D1, D1.T @ D2, D2.T @ D2
    T = -np.linalg.solve(S3, S2.T)
    M = S1 + S2 @ T
    M = np.array([M[2] / 2, -M[1], M[0] / 2])
    evals, evecs = np.linalg.eig(M)
    evecs = np.real(evecs)
    cond = 4 * evecs[0] * evecs[2] - evecs[1] ** 2
    ok = np.flatnonzero(cond > 0)
    if ok.size == 0:
        raise DegenerateConic("no ellipse-constrained solution")
    a1 = evecs[:, ok[np.argmin(np.abs(np.real(evals[ok])))]]
    return np.concatenate([a1, T @ a1])


def _uncenter(coef, mx, my, s):
    A, B, C, D, E, F = coef
    s2 = s * s
    return np.array(
        [
            A / s2,
            B / s2,
            C / s2,
            (-2 * A * mx - B * my) / s2 + D / s,
            (-2 * C * my - B * mx) / s2 + E / s,
            (A * mx * mx + B * mx * my + C * my * my) / s2 - (D * mx + E * my) / s + F,
        ]
    )


def _sampson_rms(coef, x, y):
    a, b, c, d, e, f = coef
    alg = a * x * x + b * x * y + c * y * y + d * x + e * y + f
    gx = 2 * a * x + b * y + d
    gy = b * x + 2 * c * y + e
    return float(np.sqrt(np.mean(alg**2 / np.maximum(gx * gx + gy * gy, 1e-300))))


def _phase_from_conic(coef):
    a, b, c = coef[:3]
    if b * b - 4 * a * c >= 0:
        raise DegenerateConic("fitted conic is not an ellipse")
    cphi = -b / (2 * math.sqrt(a * c))
    return math.acos(max(-1.0, min(1.0, cphi)))


def _second_eccentricity(coef):
    # amplitude-equalised quadratic form [[1, k], [k, 1]], k = b / (2 sqrt(ac))
    a, b, c = coef[:3]
    k = abs(b) / (2 * math.sqrt(a * c))
    if k >= 1:
        return math.inf
    return math.sqrt((1 + k) / (1 - k) - 1)


def _fit_core(pts):
    x, y = pts[:, 0], pts[:, 1]
    mx, my = float(x.mean()), float(y.mean())
    centred = pts - (mx, my)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < 1e-3:
        raise DegenerateConic("points are (nearly) collinear; Phi is too close to 0 or pi to recover")
    s = float(np.sqrt(np.mean(np.sum(centred**2, axis=1))))
    coef = _direct_fit(centred[:, 0] / s, centred[:, 1] / s)
    coef = _uncenter(coef, mx, my, s)
    coef = coef / np.linalg.norm(coef)
    if coef[0] < 0:
        coef = -coef
    return coef


def fit_ellipse(points, bootstrap: int = 0, seed: int | None = 0) -> EllipseFitResult:
    """Direct least-squares ellipse fit and differential phase extraction.

    Phi in (0, pi) follows from cos Phi = -b / (2 sqrt(ac)); the expression
    is invariant under separate rescaling of the two axes, so unequal fringe
    amplitudes do not bias it.  With ``bootstrap`` > 0 a resampling standard
    error is attached.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (N, 2) array of (S_R, S_L)")
    if len(pts) < 6:
        raise InsufficientData("need at least 6 points for a conic fit")
    coef = _fit_core(pts)
    Phi = _phase_from_conic(coef)
    stderr = float("nan")
    if bootstrap:
        rng = np.random.default_rng(seed)
        draws = []
        for _ in range(bootstrap):
            sample = pts[rng.integers(0, len(pts), len(pts))]
            try:
                draws.append(_phase_from_conic(_fit_core(sample)))
            except (DegenerateConic, np.linalg.LinAlgError):
                continue
        if len(draws) > 1:
            stderr = float(np.std(draws, ddof=1))
    return EllipseFitResult(
        tuple(float(v) for v in coef),
        Phi,
        _second_eccentricity(coef),
        ellipticity_from_phase(Phi),
        _sampson_rms(coef, pts[:, 0], pts[:, 1]),
        stderr,
    )


def read_points_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"S_R", "S_L"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain S_R,S_L")
        return np.array([[float(r["S_R"]), float(r["S_L"])] for r in reader])


def write_points_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["S_R", "S_L"])
        for p in points:
            w.writerow([f"{p[0]:.12g}", f"{p[1]:.12g}"])


# ---------------------------------------------------------------------------
# TOP trap control and slope analysis


@dataclass(frozen=True)
class TopTrapControl:
    """Control phase beta of the rotating bias field; the xy term is gamma = beta / 7."""

    beta: float

    @property
    def gamma(self) -> float:
        return self.beta / 7.0

    @classmethod
    def from_gamma(cls, gamma: float) -> "TopTrapControl":
        return cls(7.0 * gamma)


@dataclass(frozen=True)
class SlopeResult:
    betas: tuple
    slopes: tuple
    slope_errors: tuple
    d2_t2_beta: float
    d2_t2_beta_err: float
    d2_delta2_gamma: float
    d2_delta2_gamma_err: float


def _linfit(x, y, w=None):
    """Weighted straight line; returns (slope, intercept, slope stderr)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.column_stack([x, np.ones_like(x)])
    W = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    Aw = A * np.sqrt(W)[:, None]
    yw = y * np.sqrt(W)
    coef, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    dof = len(x) - 2
    cov = np.linalg.inv(Aw.T @ Aw)
    if dof > 0:
        s2 = float(np.sum((yw - Aw @ coef) ** 2)) / dof
        err = math.sqrt(max(s2 * cov[0, 0], 0.0))
    elif w is not None:
        err = math.sqrt(cov[0, 0])
    else:
        err = float("nan")
    return float(coef[0]), float(coef[1]), err


def slope_pipeline(data: Sequence[tuple], omega: float) -> SlopeResult:
    """Mixed derivative d2 Phi / dt2 d beta from (beta, t2, Phi) rows, and its conversion.

    A line is fitted to Phi(t2) at each beta, then a line to those slopes
    versus beta.  With delta2 = omega t2 and gamma = beta / 7,
    d2 Phi / d delta2 d gamma = (7 / omega) d2 Phi / dt2 d beta.
    """
    rows = np.asarray(data, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise InsufficientData("expected rows of (beta, t2, Phi)")
    betas = np.unique(rows[:, 0])
    if len(betas) < 2:
        raise InsufficientData("need at least two beta values")
    slopes, errs = [], []
    for b in betas:
        sel = rows[rows[:, 0] == b]
        if len(np.unique(sel[:, 1])) < 2:
            raise InsufficientData(f"need at least two t2 values at beta = {b}")
        s, _, e = _linfit(sel[:, 1], sel[:, 2])
        slopes.append(s)
        errs.append(e)
    errs_arr = np.array(errs)
    weights = None
    if np.all(np.isfinite(errs_arr)) and np.all(errs_arr > 0):
        weights = 1.0 / errs_arr**2
    d2, _, d2_err = _linfit(betas, slopes, weights)
    factor = 7.0 / omega
    return SlopeResult(
        tuple(betas.tolist()),
        tuple(slopes),
        tuple(errs),
        d2,
        d2_err,
        factor * d2,
        factor * d2_err if math.isfinite(d2_err) else d2_err,
    )


def convert_mixed_derivative(d2_t2_beta: float, omega: float) -> float:
    """(7 / omega) d2 Phi / dt2 d beta -> d2 Phi / d delta2 d gamma."""
    return 7.0 * d2_t2_beta / omega


def read_slope_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"beta", "t2", "phi"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain beta,t2,phi")
        return [(float(r["beta"]), float(r["t2"]), float(r["phi"])) for r in reader]


__all__ = [
    "FringePoint",
    "SignalModel",
    "EllipseFitResult",
    "TopTrapControl",
    "SlopeResult",
    "synthesize_fringe",
    "fit_ellipse",
    "ellipticity_from_phase",
    "slope_pipeline",
    "convert_mixed_derivative",
    "read_points_csv",
    "write_points_csv",
    "read_slope_csv",
]
