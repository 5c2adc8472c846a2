"""Dual Sagnac atom interferometer in a weakly anharmonic trap."""

from .errors import *  # noqa: F401,F403
from .model import (
    PARAM_NAMES,
    BraggGeometry,
    InitialState,
    PerturbationVector,
    PhysicalScales,
    ProtocolTiming,
    TrapConfig,
    pack_parameters,
    unpack_parameters,
)
from .protocol import RunReport, run_interferometer
from .sensitivity import PhaseEvaluator, SensitivityEntry, fit_n_dependence, phase_at, table_scan

__version__ = "0.1.0"
