import io
import warnings

import numpy as np
import pytest

from sagnacsim.calibration import (
    QuadraticSurrogate,
    SimulatedExperiment,
    estimate_eta0,
    iterate_calibration,
)
from sagnacsim.errors import Diverged, IndependentGroupsWarning, SingularM
from sagnacsim.sensitivity import phase_at


def _spd(rng, k):
    A = rng.normal(size=(k, k))
    return A @ A.T + k * np.eye(k)


def test_one_step_on_quadratic_surrogate():
    rng = np.random.default_rng(0)
    for k in (2, 3, 5):
        M = _spd(rng, k)
        eta0 = rng.normal(size=k) * 1e-3
        x = np.zeros(k)
        g = 2 * M @ (x - eta0)
        assert np.allclose(x + estimate_eta0(M, g), eta0, atol=1e-10)


def test_indefinite_surrogate_converges_in_one_step():
    M = np.array([[1.0, 2.0], [2.0, -1.0]])
    exp = QuadraticSurrogate(M, [3e-3, -1e-3])
    state = iterate_calibration(("delta2", "c110"), exp, M=M, tol=1e-9)
    assert state.converged and state.iteration == 2
    assert np.allclose(state.eta, [3e-3, -1e-3], atol=1e-10)


def test_zero_gradient_and_validation():
    assert np.all(estimate_eta0(np.eye(2), np.zeros(2)) == 0)
    with pytest.raises(ValueError):
        estimate_eta0(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))
    with pytest.raises(SingularM):
        estimate_eta0(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))
    shift = estimate_eta0(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2), solver="lstsq")
    assert np.allclose(shift, [-0.25, -0.25])


def test_first_step_on_simulator():
    active = ("delta2", "c110")
    truth = np.array([1e-3, 2e-3])
    exp = SimulatedExperiment(active, dict(zip(active, truth)))
    state = iterate_calibration(active, exp, max_iter=2)
    # the controls should cancel the hidden offsets
    before = np.linalg.norm(truth)
    after = np.linalg.norm(state.trace[1][1] + truth)
    assert after * 5 <= before


def test_three_parameter_convergence_and_trace():
    active = ("delta1", "delta2", "c110")
    exp = SimulatedExperiment(active, {nm: 1e-3 for nm in active})
    state = iterate_calibration(active, exp, max_iter=5)
    assert state.converged and state.grad_norms[-1] < 1e-6
    assert all(b < a for a, b in zip(state.grad_norms[1:], state.grad_norms[2:]))
    assert np.allclose(state.M, state.M.T)
    # the residual phase is what the simulator reports at the converged point
    assert state.phases[-1] == pytest.approx(phase_at(exp.full_vector(state.eta)), abs=1e-7)
    buf = io.StringIO()
    state.write_trace(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iteration,delta1,delta2,c110,grad_inf,Phi"
    assert len(lines) == state.iteration + 1


def test_ideal_start_stops_immediately():
    exp = SimulatedExperiment(("delta2", "c110"))
    state = iterate_calibration(("delta2", "c110"), exp)
    assert state.converged and state.iteration == 1


def test_group_straddle_warns():
    M = np.eye(2)
    exp = QuadraticSurrogate(M, [0.0, 0.0])
    with pytest.warns(IndependentGroupsWarning):
        iterate_calibration(("c110", "z0"), exp, M=M)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        iterate_calibration(("c110", "delta1"), exp, M=M)


def test_divergence_detected():
    M = np.diag([1.0, 2.0])
    exp = QuadraticSurrogate(M, [1e-3, 1e-3])
    with pytest.raises(Diverged):
        iterate_calibration(("delta2", "c110"), exp, M=0.3 * M, max_iter=20)
