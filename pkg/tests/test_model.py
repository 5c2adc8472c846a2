import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sagnacsim.errors import UnknownParameterName
from sagnacsim.model import (
    COEFF_NAMES,
    N_PARAMS,
    PARAM_NAMES,
    BraggGeometry,
    InitialState,
    PerturbationVector,
    ProtocolTiming,
    TrapConfig,
    diagonalize_quadratic,
    force_eval,
    pack_parameters,
    potential_eval,
    unpack_parameters,
)

small = st.floats(-0.05, 0.05, allow_nan=False)


def test_parameter_layout():
    assert N_PARAMS == 43
    assert len(COEFF_NAMES) == 31
    assert PARAM_NAMES[:3] == ("c200", "c110", "c101")
    assert PARAM_NAMES[-12:] == (
        "x0", "y0", "z0", "vx0", "vy0", "vz0",
        "psi_x_p", "psi_x_pp", "psi_y_p", "psi_y_pp", "delta1", "delta2",
    )
    assert len(set(PARAM_NAMES)) == 43


def test_potential_examples():
    ideal = TrapConfig.ideal()
    assert potential_eval(ideal, (0, 0, 0)) == 0.0
    assert potential_eval(ideal, (1, 0, 0)) == pytest.approx(0.5, abs=1e-15)
    trap = TrapConfig.from_coefficients(c110=0.01)
    assert potential_eval(trap, (1, 1, 0)) == pytest.approx(1.005, abs=1e-15)


def test_force_examples():
    assert np.allclose(force_eval(TrapConfig.ideal(), (0, 0, 0)), 0.0)
    assert np.allclose(force_eval(TrapConfig.ideal(2.0), (0, 0, 0.5)), (0, 0, -2.0), atol=1e-15)


def test_force_matches_finite_difference():
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(100):
        trap = TrapConfig(zeta=rng.uniform(0.3, 3), coeffs=tuple(rng.uniform(-0.1, 0.1, 31)))
        r = rng.normal(size=3)
        r *= rng.uniform() ** (1 / 3) / np.linalg.norm(r)
        fd = np.empty(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd[i] = -(potential_eval(trap, r + e) - potential_eval(trap, r - e)) / (2 * h)
        assert np.allclose(force_eval(trap, r), fd, atol=1e-6)


@given(st.floats(0.2, 3.0), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_ideal_potential_symmetries(zeta, r):
    trap = TrapConfig.ideal(zeta)
    x, y, z = r
    v = potential_eval(trap, (x, y, z))
    assert potential_eval(trap, (-x, -y, z)) == pytest.approx(v, abs=1e-12)
    assert potential_eval(trap, (y, x, z)) == pytest.approx(v, abs=1e-12)


def test_cylindrical_trap_rotation_invariance():
    trap = TrapConfig.from_coefficients(
        zeta=1.3, c200=0.02, c020=0.02, c201=0.01, c021=0.01, c202=-0.03, c022=-0.03,
        c400=0.04, c040=0.04, c220=0.08, c002=0.01, c003=0.02, c004=0.005,
    )
    assert trap.is_cylindrical()
    rng = np.random.default_rng(5)
    r = rng.normal(size=3) * 0.7
    v = potential_eval(trap, r)
    for theta in rng.uniform(0, 2 * math.pi, 8):
        c, s = math.cos(theta), math.sin(theta)
        rr = (c * r[0] - s * r[1], s * r[0] + c * r[1], r[2])
        assert potential_eval(trap, rr) == pytest.approx(v, abs=1e-12)
    assert not TrapConfig.from_coefficients(c110=0.01).is_cylindrical()


def test_diagonalize_examples():
    d = diagonalize_quadratic(0.0, 0.01)
    assert d.omega1 == pytest.approx(math.sqrt(1.01))
    assert np.allclose(d.e1, np.array([1, 1]) / math.sqrt(2))
    d = diagonalize_quadratic(0.01, 0.0)
    assert d.omega1 == pytest.approx(math.sqrt(1.01))
    assert abs(abs(d.e1[0]) - 1) < 1e-12 or abs(abs(d.e1[1]) - 1) < 1e-12
    d = diagonalize_quadratic(0.0, 0.0)
    assert d.degenerate and d.omega1 == d.omega2 == 1.0
    assert d.e1 == (1.0, 0.0) and d.e2 == (0.0, 1.0)


def test_diagonalize_reconstructs_quadratic_form():
    rng = np.random.default_rng(7)
    for _ in range(200):
        Gamma = rng.uniform(1e-6, 0.5)
        ang = rng.uniform(0, 2 * math.pi)
        D, g = Gamma * math.cos(ang), Gamma * math.sin(ang)
        d = diagonalize_quadratic(D, g)
        E = np.column_stack([d.e1, d.e2])
        rebuilt = E @ np.diag([d.omega1**2, d.omega2**2]) @ E.T
        assert np.allclose(rebuilt, [[1 + D, g], [g, 1 - D]], atol=1e-12)
        assert abs(np.dot(d.e1, d.e2)) < 1e-12
        assert d.omega1 >= d.omega2


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        vec = PerturbationVector(rng.uniform(-0.09, 0.09, N_PARAMS))
        assert pack_parameters(*unpack_parameters(vec, zeta=1.4, n=2)) == vec


def test_zero_vector_is_ideal():
    trap, init, bragg, timing = unpack_parameters(PerturbationVector.zeros(), zeta=0.7, n=3)
    assert trap == TrapConfig.ideal(0.7)
    assert init == InitialState()
    assert bragg == BraggGeometry()
    assert (timing.n, timing.delta1, timing.delta2) == (3, 0.0, 0.0)


def test_named_lookup():
    trap, *_ = unpack_parameters(PerturbationVector.from_dict({"c110": 0.02}))
    assert trap.c(1, 1, 0) == 0.02
    assert sum(abs(c) for c in trap.coeffs) == 0.02
    *_, timing = unpack_parameters(PerturbationVector.from_dict({"delta2": 1e-4}))
    assert timing.delta2 == 1e-4
    with pytest.raises(UnknownParameterName):
        PerturbationVector.zeros()["c999"]


def test_bragg_small_angle_and_units():
    with pytest.raises(ValueError):
        BraggGeometry(psi_x_p=0.2)
    b = BraggGeometry(0.01, 0.02, -0.03, 0.04)
    assert np.linalg.norm(b.kx) == pytest.approx(1.0, abs=1e-15)
    assert np.linalg.norm(b.ky) == pytest.approx(1.0, abs=1e-15)


def test_timing_plausibility():
    t = ProtocolTiming.nominal(2, 1e-3, -1e-3)
    assert t.t1 == pytest.approx(math.pi / 2 + 1e-3)
    assert t.t2 == pytest.approx(4 * math.pi - 1e-3)
    assert t.is_plausible()
    with pytest.raises(ValueError):
        ProtocolTiming(0)


@settings(max_examples=50)
@given(st.lists(small, min_size=N_PARAMS, max_size=N_PARAMS))
def test_vector_dict_round_trip(values):
    vec = PerturbationVector(values)
    assert PerturbationVector.from_dict(vec.as_dict()) == vec
