import math

import numpy as np
import pytest

from sagnacsim.dynamics import (
    IntegratorSettings,
    PacketState,
    analytic_propagate,
    apply_bragg_kick,
    energy_drift,
    propagate,
    trajectory,
    write_trajectory_csv,
)
from sagnacsim.errors import NonUnitDirection
from sagnacsim.model import BraggGeometry, TrapConfig

IDEAL = TrapConfig.ideal()


def _close(a: PacketState, b: PacketState, tol):
    assert np.allclose(a.r, b.r, atol=tol)
    assert np.allclose(a.v, b.v, atol=tol)
    assert a.action == pytest.approx(b.action, abs=tol)


def _random_trap(rng, scale=0.1):
    return TrapConfig(zeta=rng.uniform(0.5, 2.5), coeffs=tuple(rng.uniform(-scale, scale, 31)))


def test_quarter_period():
    s = propagate(IDEAL, PacketState((0, 0, 0), (0, 1, 0)), math.pi / 2)
    assert np.allclose(s.r, (0, 1, 0), atol=1e-8)
    assert np.allclose(s.v, (0, 0, 0), atol=1e-8)


def test_full_period_restores_state():
    rng = np.random.default_rng(1)
    for _ in range(10):
        s0 = PacketState(tuple(rng.uniform(-0.5, 0.5, 3)), tuple(rng.uniform(-1, 1, 3)))
        s = propagate(IDEAL, s0, 2 * math.pi)
        assert np.allclose(s.r, s0.r, atol=1e-8) and np.allclose(s.v, s0.v, atol=1e-8)


def test_full_orbit_action_vanishes():
    s = propagate(IDEAL, PacketState((0, 0, 0), (0, 1, 0)), 2 * math.pi)
    assert abs(s.action) < 1e-8


def test_analytic_examples():
    s = analytic_propagate((1, 1, 1), PacketState((1, 0, 0), (0, 0, 0)), math.pi)
    assert np.allclose(s.r, (-1, 0, 0), atol=1e-14)
    assert abs(s.action) < 1e-14
    s0 = PacketState((0.1, 0.2, 0.3), (0.4, 0.5, 0.6), 0.7)
    assert analytic_propagate((1, 2, 3), s0, 0.0) == s0


def test_numeric_matches_analytic_on_harmonic_traps():
    rng = np.random.default_rng(2)
    for _ in range(100):
        zeta = rng.uniform(0.5, 2.5)
        s0 = PacketState(tuple(rng.uniform(-1, 1, 3)), tuple(rng.uniform(-1, 1, 3)))
        dur = rng.uniform(0, 10 * math.pi)
        _close(propagate(TrapConfig.ideal(zeta), s0, dur), analytic_propagate((1, 1, zeta), s0, dur), 1e-8)


def test_oracle_duration_6pi():
    rng = np.random.default_rng(4)
    for _ in range(20):
        s0 = PacketState(tuple(rng.uniform(-1, 1, 3)), tuple(rng.uniform(-1, 1, 3)))
        _close(propagate(IDEAL, s0, 6 * math.pi), analytic_propagate((1, 1, 1), s0, 6 * math.pi), 1e-8)


def test_energy_conservation():
    rng = np.random.default_rng(6)
    for n in (1, 2, 3):
        trap = _random_trap(rng)
        s0 = PacketState((0.0, 0.0, 0.0), (0.0, 1.0, 0.0))
        assert energy_drift(trap, s0, 2 * math.pi * (n + 1)) <= 1e-7


def test_time_reversal():
    rng = np.random.default_rng(8)
    for _ in range(5):
        trap = _random_trap(rng)
        s0 = PacketState(tuple(rng.uniform(-0.3, 0.3, 3)), tuple(rng.uniform(-1, 1, 3)))
        a = propagate(trap, s0, 5.0)
        b = propagate(trap, PacketState(a.r, tuple(-np.array(a.v))), 5.0)
        assert np.allclose(b.r, s0.r, atol=1e-7)
        assert np.allclose(-np.array(b.v), s0.v, atol=1e-7)


def test_action_additivity():
    rng = np.random.default_rng(9)
    for _ in range(5):
        trap = _random_trap(rng)
        s0 = PacketState(tuple(rng.uniform(-0.3, 0.3, 3)), tuple(rng.uniform(-1, 1, 3)))
        t1, t2 = rng.uniform(0.5, 5, 2)
        _close(propagate(trap, s0, t1 + t2), propagate(trap, propagate(trap, s0, t1), t2), 1e-8)


def test_bragg_kick():
    s = apply_bragg_kick(PacketState((0, 0, 0), (0, 0, 0)), (0, 1, 0), 1)
    assert s.v == (0, 1, 0)
    k = BraggGeometry(psi_x_pp=0.01).kx
    s = apply_bragg_kick(PacketState((0, 0, 0), (0, 0, 0)), k, 1)
    assert np.allclose(s.v, (0.99995, 0, 0.0099995), atol=1e-7)
    s0 = PacketState((0.1, 0, 0), (0.2, 0.3, 0.4), 0.5)
    back = apply_bragg_kick(apply_bragg_kick(s0, k, 1), k, -1)
    assert np.allclose(back.v, s0.v, atol=1e-15) and back.r == s0.r and back.action == s0.action
    with pytest.raises(NonUnitDirection):
        apply_bragg_kick(s0, (1, 1, 0), 1)


def test_tolerance_bounds():
    IntegratorSettings(1e-12, 1e-12)
    with pytest.raises(ValueError):
        IntegratorSettings(1e-4, 1e-10)
    with pytest.raises(ValueError):
        IntegratorSettings(1e-10, 1e-16)


def test_trajectory_dump(tmp_path):
    rows = trajectory(IDEAL, PacketState((0, 0, 0), (0, 1, 0)), math.pi)
    assert rows.shape[1] == 8
    assert rows[0, 0] == 0.0 and rows[-1, 0] == pytest.approx(math.pi)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(rows, path)
    text = path.read_text().splitlines()
    assert text[0] == "t,x,y,z,vx,vy,vz,S"
    assert len(text) == len(rows) + 1
