"""Published closed forms for the second- and third-order phase coefficients.

Each entry maps a canonically ordered parameter tuple to a function giving
C = (1/kR) d^k Phi / d eta... .  Second-order spherical-trap entries take
``n``; cylindrical-trap entries take ``(n, zeta)``.
"""

from __future__ import annotations

import math

from .model import PARAM_INDEX

PI = math.pi
PI2 = PI * PI


def f1(n, zeta):
    return math.sin(2 * PI * zeta * (n + 0.25)) - math.sin(PI * zeta / 2)


def f2(n, zeta):
    return math.cos(2 * PI * zeta * (n + 0.25)) - math.cos(PI * zeta / 2)


def f3(n, zeta):
    return 1 - math.cos(2 * PI * zeta * n)


def canonical(names) -> tuple:
    return tuple(sorted(names, key=lambda nm: PARAM_INDEX[nm]))


def _key(*names):
    return canonical(names)


# zeta = 1, all thirty terms above 1e-4 at n = 1
SPHERICAL = {
    _key("delta1", "c110"): lambda n: 2 * PI * n,
    _key("delta2", "c110"): lambda n: PI / 2 * (1 + 4 * n),
    _key("c200", "c110"): lambda n: -PI2 * n**2,
    _key("c020", "c110"): lambda n: PI2 * n**2,
    _key("delta1", "c310"): lambda n: -3 * PI / 2 * n,
    _key("delta1", "c130"): lambda n: 3 * PI / 2 * n,
    _key("delta2", "c310"): lambda n: 3 * PI / 2 * n,
    _key("delta2", "c130"): lambda n: 3 * PI / 8 * (1 + 4 * n),
    _key("c200", "c310"): lambda n: 3 * PI2 / 4 * n**2,
    _key("c200", "c130"): lambda n: -3 * PI2 / 4 * n**2,
    _key("c110", "c400"): lambda n: -3 * PI2 / 2 * n * (1 + 3 * n),
    _key("c110", "c220"): lambda n: PI2 / 2 * n**2,
    _key("c110", "c040"): lambda n: 3 * PI2 / 2 * n**2,
    _key("c020", "c310"): lambda n: -3 * PI2 / 4 * n**2,
    _key("c020", "c130"): lambda n: 3 * PI2 / 4 * n**2,
    _key("c400", "c310"): lambda n: -9 * PI2 / 8 * n**2,
    _key("c400", "c130"): lambda n: -9 * PI2 / 8 * n * (1 + 3 * n),
    _key("c220", "c310"): lambda n: 3 * PI2 / 8 * n**2,
    _key("c220", "c130"): lambda n: 3 * PI2 / 8 * n**2,
    _key("c040", "c310"): lambda n: -9 * PI2 / 8 * n**2,
    _key("c040", "c130"): lambda n: 9 * PI2 / 8 * n**2,
    _key("c011", "c101"): lambda n: PI2 / 4 * n * (1 + 2 * n),
    _key("c011", "c301"): lambda n: -3 * PI2 / 16 * n * (1 + 2 * n),
    _key("c011", "c121"): lambda n: PI2 / 16 * n * (1 + 2 * n),
    _key("c101", "c211"): lambda n: 3 * PI2 / 8 * n**2,
    _key("c101", "c031"): lambda n: 3 * PI2 / 16 * n * (1 + 2 * n),
    _key("c301", "c211"): lambda n: 3 * PI2 / 32 * n**2,
    _key("c301", "c031"): lambda n: -9 * PI2 / 64 * n * (1 + 2 * n),
    _key("c211", "c121"): lambda n: 3 * PI2 / 32 * n**2,
    _key("c031", "c121"): lambda n: 3 * PI2 / 64 * n * (1 + 2 * n),
}


def _d1(z):
    return 1 - z * z


def _d3(z):
    return 9 - z * z


def _d2(z):
    return 4 - z * z


# cylindrical trap, omega_z = zeta omega: entries that are new or zeta dependent
CYLINDRICAL = {
    _key("psi_x_pp", "psi_y_pp"): lambda n, z: -4 * f1(n, z) / z,
    _key("psi_x_pp", "c011"): lambda n, z: 2 * f1(n, z) / (z * _d1(z)),
    _key("psi_y_pp", "c101"): lambda n, z: 2 * f1(n, z) / (z * _d1(z)),
    _key("z0", "c111"): lambda n, z: 2 * f2(n, z) / _d2(z),
    _key("vz0", "c111"): lambda n, z: 2 * f1(n, z) / (z * _d2(z)),
    _key("c201", "c111"): lambda n, z: -6 * f2(n, z) / (z * z * _d2(z) ** 2),
    _key("c021", "c111"): lambda n, z: 2 * f2(n, z) / (z * z * _d2(z)),
    _key("psi_x_pp", "c211"): lambda n, z: -12 * f2(n, z) / (_d1(z) * _d3(z)),
    _key("psi_x_pp", "c031"): lambda n, z: 12 * f1(n, z) / (z * _d1(z) * _d3(z)),
    _key("psi_y_pp", "c301"): lambda n, z: -12 * f1(n, z) / (z * _d1(z) * _d3(z)),
    _key("psi_y_pp", "c121"): lambda n, z: 2 * f1(n, z) * (3 - z * z) / (z * _d1(z) * _d3(z)),
    _key("c011", "c101"): lambda n, z: -f1(n, z) / (z * _d1(z) ** 2),
    _key("c011", "c301"): lambda n, z: 6 * f1(n, z) / (z * _d1(z) ** 2 * _d3(z)),
    _key("c011", "c121"): lambda n, z: -f1(n, z) * (2 - z * z) / (z * _d1(z) ** 2 * _d3(z)),
    _key("c101", "c211"): lambda n, z: 6 * f3(n, z) / (_d1(z) ** 2 * _d3(z)),
    _key("c101", "c031"): lambda n, z: -6 * f1(n, z) / (z * _d1(z) ** 2 * _d3(z)),
    _key("c301", "c211"): lambda n, z: 12 * f3(n, z) / (_d1(z) ** 2 * _d3(z) ** 2),
    _key("c301", "c031"): lambda n, z: 36 * f1(n, z) / (z * _d1(z) ** 2 * _d3(z) ** 2),
    _key("c211", "c121"): lambda n, z: 6 * f3(n, z) * (3 - z * z) / (_d1(z) ** 2 * _d3(z) ** 2),
    _key("c031", "c121"): lambda n, z: -6 * f1(n, z) * (3 - z * z) / (z * _d1(z) ** 2 * _d3(z) ** 2),
}

# Forms that reproduce the simulation where the printed ones do not.  The
# (c011, c121) and (psi_x'', c211) versions also restore the zeta -> 1 limit
# of the spherical table.
CYLINDRICAL_CORRECTED = dict(CYLINDRICAL)
CYLINDRICAL_CORRECTED.update(
    {
        _key("c011", "c121"): lambda n, z: -f1(n, z) * (3 - z * z) / (z * _d1(z) ** 2 * _d3(z)),
        _key("c201", "c111"): lambda n, z: -6 * f3(n, z) / (z * z * _d2(z) ** 2),
        _key("c021", "c111"): lambda n, z: 2 * f2(n, z) / (z * z * _d2(z) ** 2),
        _key("psi_x_pp", "c211"): lambda n, z: -12 * f3(n, z) / (_d1(z) * _d3(z)),
    }
)
DISPUTED = tuple(k for k in CYLINDRICAL if CYLINDRICAL[k] is not CYLINDRICAL_CORRECTED[k])

# Third order, perfect cylindrical symmetry, zeta = 1.  Potential names refer
# to the tied symmetric combinations (see model.CYLINDRICAL_TIES).
THIRD_ORDER = {
    _key("psi_x_p", "c400", "c400"): lambda n: -11 * PI2 / 4 * n**2,
    _key("psi_y_p", "c400", "c400"): lambda n: -PI2 / 4 * n * (27 - 11 * n),
    _key("delta1", "psi_x_p", "c400"): lambda n: -2 * PI * n,
    _key("delta1", "psi_y_p", "c400"): lambda n: -11 * PI * n,
    _key("delta1", "delta2", "psi_x_p"): lambda n: 4.0,
    _key("delta1", "delta2", "psi_y_p"): lambda n: -4.0,
    _key("delta2", "delta2", "psi_x_p"): lambda n: 4.0,
    _key("delta2", "delta2", "psi_y_p"): lambda n: -4.0,
    _key("x0", "vy0", "c400"): lambda n: PI * n,
    _key("y0", "vx0", "c400"): lambda n: PI * n,
    _key("delta2", "psi_x_p", "c400"): lambda n: PI * n,
    _key("delta2", "psi_y_p", "c400"): lambda n: PI / 8 * (9 - 8 * n),
}


def second_order_reference(names, n: int, zeta: float = 1.0, corrected: bool = False):
    """Published coefficient for a parameter pair, or 0.0 when none is listed.

    Terms missing from the cylindrical table keep their spherical value.
    """
    key = canonical(names)
    if zeta == 1.0:
        return SPHERICAL.get(key, lambda n: 0.0)(n)
    table = CYLINDRICAL_CORRECTED if corrected else CYLINDRICAL
    if key in table:
        return table[key](n, zeta)
    return SPHERICAL.get(key, lambda n: 0.0)(n)
