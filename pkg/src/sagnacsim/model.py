"""Trap potential, Bragg geometry, protocol timing and the 43-entry perturbation vector.

Internally everything is dimensionless with m = omega = v_B = 1, so the orbit
radius R is 1 and phases come out in units of kR.  :class:`PhysicalScales`
is the only place SI units appear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np
from scipy import constants

from . import _kernels
from .errors import UnknownParameterName

HBAR = constants.hbar
RB87_MASS = 86.909180531 * constants.atomic_mass


def _coefficient_exponents():
    out = []
    for degree in (2, 3, 4):
        for lam in range(degree, -1, -1):
            for mu in range(degree - lam, -1, -1):
                out.append((lam, mu, degree - lam - mu))
    return tuple(out)


COEFF_EXPONENTS = _coefficient_exponents()
COEFF_NAMES = tuple("c%d%d%d" % e for e in COEFF_EXPONENTS)
POSITION_NAMES = ("x0", "y0", "z0")
VELOCITY_NAMES = ("vx0", "vy0", "vz0")
BRAGG_NAMES = ("psi_x_p", "psi_x_pp", "psi_y_p", "psi_y_pp")
TIMING_NAMES = ("delta1", "delta2")
PARAM_NAMES = COEFF_NAMES + POSITION_NAMES + VELOCITY_NAMES + BRAGG_NAMES + TIMING_NAMES
PARAM_INDEX = {name: i for i, name in enumerate(PARAM_NAMES)}
N_PARAMS = len(PARAM_NAMES)

_EXPS_ARRAY = np.array(COEFF_EXPONENTS, dtype=np.int64)

# Parameters that only affect horizontal motion at second order, and those
# that couple to the vertical axis.
HORIZONTAL_GROUP = (
    "delta1", "delta2", "c200", "c020", "c110", "c400", "c310", "c220", "c130", "c040",
)
VERTICAL_GROUP = (
    "psi_x_pp", "psi_y_pp", "z0", "vz0", "c111", "c201", "c021",
    "c011", "c101", "c121", "c301", "c211", "c031",
)

# Under perfect cylindrical symmetry the xy-dependent coefficients are tied
# together; each reduced parameter moves this combination of raw entries.
CYLINDRICAL_TIES = {
    "c200": {"c200": 1.0, "c020": 1.0},
    "c201": {"c201": 1.0, "c021": 1.0},
    "c202": {"c202": 1.0, "c022": 1.0},
    "c400": {"c400": 1.0, "c040": 1.0, "c220": 2.0},
}
CYLINDRICAL_FREE = ("c002", "c003", "c004") + POSITION_NAMES + VELOCITY_NAMES + BRAGG_NAMES + TIMING_NAMES
CYLINDRICAL_PARAMS = tuple(
    sorted(tuple(CYLINDRICAL_TIES) + CYLINDRICAL_FREE, key=lambda nm: PARAM_INDEX[nm])
)


def param_index(name: str) -> int:
    try:
        return PARAM_INDEX[name]
    except KeyError:
        raise UnknownParameterName(name) from None


def direction(name: str, cylindrical: bool = False) -> np.ndarray:
    """Unit step in parameter space for ``name``.

    With ``cylindrical=True`` the tied symmetric combinations are used for
    c200, c201, c202 and c400, and names that would break the symmetry are
    rejected.
    """
    vec = np.zeros(N_PARAMS)
    if cylindrical:
        if name in CYLINDRICAL_TIES:
            for raw, weight in CYLINDRICAL_TIES[name].items():
                vec[PARAM_INDEX[raw]] = weight
            return vec
        if name not in CYLINDRICAL_FREE:
            raise UnknownParameterName(name)
    vec[param_index(name)] = 1.0
    return vec


@dataclass(frozen=True)
class PhysicalScales:
    """SI adapter: atomic mass, Bragg wave number and trap frequency."""

    mass: float
    wave_number: float
    omega: float

    def __post_init__(self):
        for label in ("mass", "wave_number", "omega"):
            value = getattr(self, label)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{label} must be positive and finite, got {value}")

    @classmethod
    def rb87(cls, omega: float = 2 * math.pi * 9.26, wavelength: float = 780.233e-9):
        return cls(RB87_MASS, 2 * math.pi / wavelength, omega)

    @property
    def bragg_velocity(self) -> float:
        return 2 * HBAR * self.wave_number / self.mass

    @property
    def orbit_radius(self) -> float:
        return self.bragg_velocity / self.omega

    @property
    def phase_scale(self) -> float:
        """kR, the factor converting dimensionless phases to radians."""
        return self.wave_number * self.orbit_radius

    def to_seconds(self, omega_t: float) -> float:
        return omega_t / self.omega


@dataclass(frozen=True)
class TrapConfig:
    """Harmonic trap with axial ratio ``zeta`` plus 31 anharmonic coefficients."""

    zeta: float = 1.0
    coeffs: tuple = field(default=(0.0,) * len(COEFF_NAMES))

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) != len(COEFF_NAMES):
            raise ValueError(f"expected {len(COEFF_NAMES)} coefficients, got {len(coeffs)}")
        if not all(math.isfinite(c) for c in coeffs):
            raise ValueError("trap coefficients must be finite")
        if not (self.zeta > 0 and math.isfinite(self.zeta)):
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def ideal(cls, zeta: float = 1.0) -> "TrapConfig":
        return cls(zeta=zeta)

    @classmethod
    def from_coefficients(cls, zeta: float = 1.0, **named: float) -> "TrapConfig":
        coeffs = [0.0] * len(COEFF_NAMES)
        for name, value in named.items():
            idx = param_index(name)
            if idx >= len(COEFF_NAMES):
                raise UnknownParameterName(name)
            coeffs[idx] = value
        return cls(zeta=zeta, coeffs=tuple(coeffs))

    def c(self, lam: int, mu: int, nu: int) -> float:
        return self.coeffs[COEFF_NAMES.index("c%d%d%d" % (lam, mu, nu))]

    def __getitem__(self, name: str) -> float:
        idx = param_index(name)
        if idx >= len(COEFF_NAMES):
            raise UnknownParameterName(name)
        return self.coeffs[idx]

    @property
    def coeff_array(self) -> np.ndarray:
        return np.array(self.coeffs)

    @property
    def is_harmonic(self) -> bool:
        return all(c == 0.0 for c, e in zip(self.coeffs, COEFF_EXPONENTS) if sum(e) > 2)

    def is_cylindrical(self, tol: float = 0.0) -> bool:
        """True when the xy part of the potential is invariant under z rotations."""
        g = self.__getitem__
        checks = [
            g("c200") - g("c020"),
            g("c201") - g("c021"),
            g("c202") - g("c022"),
            g("c400") - g("c040"),
            g("c400") - 0.5 * g("c220"),
        ]
        tied = {"c200", "c020", "c201", "c021", "c202", "c022", "c400", "c040", "c220"}
        for name, (lam, mu, _) in zip(COEFF_NAMES, COEFF_EXPONENTS):
            if (lam or mu) and name not in tied:
                checks.append(g(name))
        return all(abs(v) <= tol for v in checks)

    def quadratic_matrix(self) -> np.ndarray:
        """Matrix K with V_quadratic = r.K.r / 2."""
        g = self.__getitem__
        return np.array(
            [
                [1.0 + g("c200"), 0.5 * g("c110"), 0.5 * g("c101")],
                [0.5 * g("c110"), 1.0 + g("c020"), 0.5 * g("c011")],
                [0.5 * g("c101"), 0.5 * g("c011"), self.zeta**2 + g("c002")],
            ]
        )


def _unit(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class BraggGeometry:
    """Small misalignment angles of the x and y Bragg beams."""

    psi_x_p: float = 0.0
    psi_x_pp: float = 0.0
    psi_y_p: float = 0.0
    psi_y_pp: float = 0.0

    def __post_init__(self):
        for name in BRAGG_NAMES:
            value = getattr(self, name)
            if not abs(value) < 0.1:
                raise ValueError(f"{name}={value} is outside the small-angle regime |psi| < 0.1")

    @property
    def kx(self) -> np.ndarray:
        """Unit wave vector of the x beam."""
        return _unit((1.0, self.psi_x_p, self.psi_x_pp))

    @property
    def ky(self) -> np.ndarray:
        return _unit((-self.psi_y_p, 1.0, self.psi_y_pp))


@dataclass(frozen=True)
class ProtocolTiming:
    """Orbit count, timing offsets and (optionally) the nominal pulse times.

    Times are in units of 1/omega.  ``t1o``/``t2o`` left as None are located
    numerically by the protocol before a run.
    """

    n: int = 1
    delta1: float = 0.0
    delta2: float = 0.0
    t1o: float | None = None
    t2o: float | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"orbit count must be a positive integer, got {self.n}")

    @classmethod
    def nominal(cls, n: int = 1, delta1: float = 0.0, delta2: float = 0.0) -> "ProtocolTiming":
        return cls(n, delta1, delta2, math.pi / 2, 2 * math.pi * n)

    @property
    def t1(self) -> float:
        if self.t1o is None:
            raise ValueError("t1o has not been determined")
        return self.t1o + self.delta1

    @property
    def t2(self) -> float:
        if self.t2o is None:
            raise ValueError("t2o has not been determined")
        return self.t2o + self.delta2

    def is_plausible(self) -> bool:
        ok1 = self.t1o is not None and abs(self.t1o - math.pi / 2) <= 0.2 * math.pi / 2
        ok2 = self.t2o is not None and abs(self.t2o - 2 * math.pi * self.n) <= 0.2 * 2 * math.pi * self.n
        return ok1 and ok2


@dataclass(frozen=True)
class InitialState:
    r0: tuple = (0.0, 0.0, 0.0)
    v0: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        r0 = tuple(float(x) for x in self.r0)
        v0 = tuple(float(x) for x in self.v0)
        if len(r0) != 3 or len(v0) != 3:
            raise ValueError("r0 and v0 must be 3-vectors")
        if not all(math.isfinite(x) for x in r0 + v0):
            raise ValueError("initial state must be finite")
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "v0", v0)


@dataclass(frozen=True)
class QuadraticDiag:
    Delta: float
    gamma: float
    Gamma: float
    omega1: float
    omega2: float
    e1: tuple
    e2: tuple
    degenerate: bool = False


def diagonalize_quadratic(Delta: float, gamma: float) -> QuadraticDiag:
    """Principal frequencies and axes of (1+D)x^2 + (1-D)y^2 + 2g xy.

    For Gamma = 0 the axes are undefined; the coordinate axes are returned
    with ``degenerate=True``.
    """
    Gamma = math.hypot(Delta, gamma)
    if Gamma >= 1:
        raise ValueError(f"Gamma={Gamma} must be below 1 for a confining trap")
    w1 = math.sqrt(1 + Gamma)
    w2 = math.sqrt(1 - Gamma)
    if Gamma < 1e-14:
        return QuadraticDiag(Delta, gamma, Gamma, w1, w2, (1.0, 0.0), (0.0, 1.0), True)
    sgn = 1.0 if gamma >= 0 else -1.0
    # each axis has two algebraically equivalent forms; pick the one that
    # does not cancel (the printed form loses precision as gamma -> 0)
    a = np.array([gamma, Gamma - Delta])
    b = sgn * np.array([Gamma + Delta, gamma])
    e1 = a if np.linalg.norm(a) >= np.linalg.norm(b) else b
    a = np.array([-gamma, Gamma + Delta])
    b = sgn * np.array([Delta - Gamma, gamma])
    e2 = a if np.linalg.norm(a) >= np.linalg.norm(b) else b
    e1 = e1 / np.linalg.norm(e1)
    e2 = e2 / np.linalg.norm(e2)
    return QuadraticDiag(Delta, gamma, Gamma, w1, w2, tuple(e1), tuple(e2))


def potential_eval(trap: TrapConfig, r) -> float:
    """Potential energy in units of m v_B^2 at position ``r`` (units of R)."""
    return float(_kernels.potential(np.asarray(r, dtype=float), trap.zeta**2, trap.coeff_array, _EXPS_ARRAY))


def force_eval(trap: TrapConfig, r) -> np.ndarray:
    """Acceleration -grad V / m, evaluated analytically."""
    return _kernels.force(np.asarray(r, dtype=float), trap.zeta**2, trap.coeff_array, _EXPS_ARRAY)


class PerturbationVector:
    """The 43 named dimensionless imperfection parameters, immutable."""

    __slots__ = ("_values",)

    def __init__(self, values: Iterable[float] | None = None):
        arr = np.zeros(N_PARAMS) if values is None else np.array(values, dtype=float)
        if arr.shape != (N_PARAMS,):
            raise ValueError(f"perturbation vector needs {N_PARAMS} entries, got shape {arr.shape}")
        arr.setflags(write=False)
        self._values = arr

    @classmethod
    def zeros(cls) -> "PerturbationVector":
        return cls()

    @classmethod
    def from_dict(cls, entries: Mapping[str, float]) -> "PerturbationVector":
        arr = np.zeros(N_PARAMS)
        for name, value in entries.items():
            arr[param_index(name)] = value
        return cls(arr)

    def with_values(self, **entries: float) -> "PerturbationVector":
        arr = self._values.copy()
        for name, value in entries.items():
            arr[param_index(name)] = value
        return PerturbationVector(arr)

    def __getitem__(self, name: str) -> float:
        return float(self._values[param_index(name)])

    def __len__(self):
        return N_PARAMS

    def __iter__(self):
        return iter(self._values.tolist())

    def __eq__(self, other):
        return isinstance(other, PerturbationVector) and np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash(self._values.tobytes())

    def __repr__(self):
        nonzero = {n: v for n, v in zip(PARAM_NAMES, self._values) if v != 0.0}
        return f"PerturbationVector({nonzero})"

    @property
    def values(self) -> np.ndarray:
        return self._values

    def as_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, self._values.tolist()))

    def nonzero(self) -> dict:
        return {n: v for n, v in self.as_dict().items() if v != 0.0}


def pack_parameters(
    trap: TrapConfig, init: InitialState, bragg: BraggGeometry, timing: ProtocolTiming
) -> PerturbationVector:
    values = (
        list(trap.coeffs)
        + list(init.r0)
        + list(init.v0)
        + [bragg.psi_x_p, bragg.psi_x_pp, bragg.psi_y_p, bragg.psi_y_pp]
        + [timing.delta1, timing.delta2]
    )
    return PerturbationVector(values)


def unpack_parameters(vec, zeta: float = 1.0, n: int = 1):
    """Inverse of :func:`pack_parameters`; zeta and n are not perturbations."""
    v = vec.values if isinstance(vec, PerturbationVector) else np.asarray(vec, dtype=float)
    nc = len(COEFF_NAMES)
    trap = TrapConfig(zeta=zeta, coeffs=tuple(v[:nc]))
    init = InitialState(tuple(v[nc : nc + 3]), tuple(v[nc + 3 : nc + 6]))
    bragg = BraggGeometry(*v[nc + 6 : nc + 10].tolist())
    timing = ProtocolTiming(n=n, delta1=float(v[nc + 10]), delta2=float(v[nc + 11]))
    return trap, init, bragg, timing


def with_timing(timing: ProtocolTiming, **changes) -> ProtocolTiming:
    return replace(timing, **changes)
