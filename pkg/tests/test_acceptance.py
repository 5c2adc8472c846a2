"""Acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line and records it for the end-of-run
summary.  Expensive derivative scans are shared through module fixtures.
"""

import math
import sys

import numpy as np
import pytest

from conftest import ACCEPTANCE
from sagnacsim import cli, tables
from sagnacsim.dynamics import IntegratorSettings
from sagnacsim.fringe import SignalModel, fit_ellipse, slope_pipeline, synthesize_fringe, convert_mixed_derivative
from sagnacsim.model import (
    HORIZONTAL_GROUP,
    N_PARAMS,
    PARAM_NAMES,
    VERTICAL_GROUP,
    BraggGeometry,
    InitialState,
    PhysicalScales,
    ProtocolTiming,
    TrapConfig,
)
from sagnacsim.protocol import analytic_phase_harmonic, analytic_phase_second_order, harmonic_kappas, run_interferometer
from sagnacsim.sensitivity import (
    SensitivityEntry,
    PhaseEvaluator,
    contributing_parameters,
    fit_n_dependence,
    fit_zeta_dependence,
    table_scan,
    third_entry,
    write_entries_csv,
)

TIGHT = IntegratorSettings(1e-12, 1e-12)


def record(k, title, ok, detail):
    ACCEPTANCE[k] = (bool(ok), title, detail)
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d} {title}: {detail}", file=sys.__stdout__, flush=True)
    assert ok, detail


def _matches(value, ref, rel, abs_small, small=0.1):
    if abs(ref) < small:
        return abs(value - ref) <= abs_small
    return abs(value - ref) <= rel * abs(ref)


@pytest.fixture(scope="module")
def scan_spherical():
    return table_scan(2, (1, 2, 3), 1.0)


@pytest.fixture(scope="module")
def scans_by_zeta(scan_spherical):
    out = {1.0: [e for e in scan_spherical if e.n == 1]}
    for z in (0.5, 1.7, 2.0, 4.0):
        out[z] = table_scan(2, (1,), z)
    return out


# ---------------------------------------------------------------------------


def test_criterion_01_spherical_second_order(scan_spherical):
    at1 = [e for e in scan_spherical if e.n == 1]
    keys = {e.param_names for e in at1}
    missing = set(tables.SPHERICAL) - keys
    extra = keys - set(tables.SPHERICAL)
    worst, bad = 0.0, []
    for e in scan_spherical:
        if e.param_names in tables.SPHERICAL:
            err = abs(e.value - tables.SPHERICAL[e.param_names](e.n))
            worst = max(worst, err)
            if err > 1e-3:
                bad.append((e.param_names, e.n, err))
    ok = len(at1) == 30 and not missing and not extra and not bad
    record(1, "spherical table", ok, f"{len(at1)} retained at n=1, missing={sorted(missing)}, extra={sorted(extra)}, max |err|={worst:.2e} over n=1..3")


def test_criterion_02_cylindrical_second_order():
    keys = list(tables.CYLINDRICAL)
    bad = []
    for z in (0.35, 0.5, 1.7, 2.5):
        for e in table_scan(2, (1, 2), z, threshold=1e-12, keys=keys, step_check=False):
            ref = tables.CYLINDRICAL[e.param_names](e.n, z)
            if not _matches(e.value, ref, 1e-2, 1e-3):
                bad.append(f"{':'.join(e.param_names)}@zeta={z},n={e.n} sim={e.value:.5g} printed={ref:.5g}")
    # two-sided mean cancels the linear approach to a removable singularity
    limit_bad = []
    for key, form in tables.CYLINDRICAL.items():
        for n in (1, 2, 3):
            ref = tables.SPHERICAL.get(key, lambda n: 0.0)(n)
            mid = 0.5 * (form(n, 1 - 1e-3) + form(n, 1 + 1e-3))
            if not _matches(mid, ref, 1e-2, 1e-2, small=1e-9):
                limit_bad.append(f"{':'.join(key)}@n={n}")
    bad_keys = sorted({b.split("@")[0] for b in bad})
    ok = not bad and not limit_bad
    record(2, "cylindrical table", ok, f"{len(bad)} value mismatches in {bad_keys}; zeta->1 limit mismatches: {limit_bad}")


def test_criterion_03_third_order():
    ev = PhaseEvaluator(1, 1.0)
    bad, worst = [], 0.0
    for key, form in tables.THIRD_ORDER.items():
        v = third_entry(*key, evaluator=ev, cylindrical=True).value
        ref = form(1)
        rel = abs(v - ref) / abs(ref)
        worst = max(worst, rel)
        if rel > 0.02:
            bad.append(f"{':'.join(key)} sim={v:.5g} printed={ref:.5g}")
    record(3, "third-order table", not bad, f"{12 - len(bad)}/12 within 2%; mismatches: {bad}")


def test_criterion_04_harmonic_oracle():
    rng = np.random.default_rng(2024)
    worst_phi = worst_cancel = 0.0
    for _ in range(50):
        q = {nm: rng.uniform(-0.02, 0.02) for nm in ("c200", "c020", "c110", "c101", "c011", "c002")}
        trap = TrapConfig.from_coefficients(zeta=rng.uniform(0.5, 2.5), **q)
        bragg = BraggGeometry(*rng.uniform(-0.02, 0.02, 4))
        timing = ProtocolTiming(int(rng.integers(1, 4)), *rng.uniform(-1e-3, 1e-3, 2))
        rep = run_interferometer(trap, InitialState(), bragg, timing)
        an = analytic_phase_harmonic(*harmonic_kappas(trap, bragg), rep.t1, rep.t2)
        worst_phi = max(worst_phi, abs(rep.Phi - an.Phi))
        worst_cancel = max(worst_cancel, abs(rep.phases.Phi_dyn + rep.phases.Phi_sep))
    ok = worst_phi <= 1e-7 and worst_cancel <= 1e-7
    record(4, "harmonic oracle", ok, f"max |Phi_num - Phi_analytic| = {worst_phi:.2e}, max |dyn + sep| = {worst_cancel:.2e} over 50 configs")


def test_criterion_05_cubic_remainder():
    rng = np.random.default_rng(5)
    ratios, spans = [], []
    for _ in range(3):
        u = rng.normal(size=5)
        u /= np.linalg.norm(u)
        zeta, n = rng.uniform(0.4, 2.5), int(rng.integers(1, 3))
        res = []
        for k in range(8):
            eps = 2e-2 / 2**k
            g, d1, d2, px, py = eps * u
            trap = TrapConfig.from_coefficients(zeta=zeta, c110=2 * g)
            rep = run_interferometer(trap, InitialState(), BraggGeometry(psi_x_pp=px, psi_y_pp=py), ProtocolTiming(n, d1, d2), TIGHT)
            res.append(abs(rep.Phi - analytic_phase_second_order(g, d1, d2, px, py, zeta, n)))
        ratios += [a / b for a, b in zip(res, res[1:])]
        spans.append(math.log10(res[0] / res[-1]))
    ok = min(ratios) >= 7 and min(spans) >= 3
    record(5, "second-order expansion remainder", ok, f"min halving ratio {min(ratios):.3f}, residual spans {min(spans):.1f} decades (eta 2e-2 .. 1.6e-4)")


def test_criterion_06_parameter_counts(scans_by_zeta):
    facts = {}
    facts["43 parameters"] = N_PARAMS == 43 and len(PARAM_NAMES) == 43
    at1 = contributing_parameters(scans_by_zeta[1.0])
    facts["16 at zeta=1"] = len(at1) == 16
    union = set()
    for z in (0.5, 1.0, 1.7):
        union |= contributing_parameters(scans_by_zeta[z])
    facts["23 across zeta"] = len(union) == 23
    cross = [
        e.param_names for z in (0.5, 1.0, 1.7) for e in scans_by_zeta[z]
        if len({nm in HORIZONTAL_GROUP for nm in e.param_names}) > 1
    ]
    facts["two groups"] = not cross and union <= set(HORIZONTAL_GROUP) | set(VERTICAL_GROUP)
    v2 = contributing_parameters(scans_by_zeta[2.0]) & set(VERTICAL_GROUP)
    facts["zeta=2 vertical {vz0,c111,c201}"] = v2 == {"vz0", "c111", "c201"}
    v4 = contributing_parameters(scans_by_zeta[4.0]) & set(VERTICAL_GROUP)
    facts["zeta=4 vertical none"] = not v4
    failed = [k for k, v in facts.items() if not v]
    detail = (
        f"zeta=1: {len(at1)}, union: {len(union)}, cross-group: {len(cross)}, "
        f"zeta=2 vertical: {sorted(v2)}, zeta=4 vertical: {sorted(v4)}; failed: {failed}"
    )
    record(6, "parameter counts", not failed, detail)


def test_criterion_07_amplitude_analysis():
    key = [("psi_y_pp", "c301")]
    fits = {}
    for z in (0.35, 0.5, 0.7, 1.7, 2.5):
        entries = table_scan(2, range(1, 9), z, keys=key, step_check=False)
        fits[z] = fit_n_dependence([(e.n, e.value) for e in entries], z)
    n0 = {z: fits[z].n0_free for z in (0.35, 1.7)}
    zf = fit_zeta_dependence([(z, f.amplitude) for z, f in fits.items()])
    ok = all(abs(v - 0.25) <= 1e-3 for v in n0.values()) and abs(zf.A0 + 12) <= 0.02 * 12
    record(7, "sinusoid and pole fit", ok, f"free n0 = {n0[0.35]:.6f} (0.35), {n0[1.7]:.6f} (1.7); A0 = {zf.A0:.5f}")


def test_criterion_08_experimental_pipeline():
    scales = PhysicalScales.rb87()
    omega, kR = scales.omega, scales.phase_scale
    rows = []
    for beta in (-0.02, -0.01, 0.0, 0.01, 0.02):
        for t2 in (-2e-3, -1e-3, 0.0, 1e-3, 2e-3):
            phi = kR * analytic_phase_second_order(beta / 7, 0.0, omega * t2, 0.0, 0.0, 1.0, 1)
            rows.append((beta, t2, phi))
    got = slope_pipeline(rows, omega).d2_delta2_gamma
    theory = 5 * math.pi * kR
    measured = convert_mixed_derivative(3.0e5, omega)
    ok = abs(got / theory - 1) <= 0.01 and abs(measured / 3.6e4 - 1) <= 0.01
    record(8, "slope pipeline", ok, f"recovered {got:.6g} vs 5 pi kR = {theory:.6g}; 3.0e5 * 7/omega = {measured:.5g}")


def test_criterion_09_fringe_round_trip():
    phis = (0.2, 0.5, math.pi / 2, 2.5)
    clean = max(abs(fit_ellipse(synthesize_fringe(SignalModel(p), 100, seed=0)).Phi - p) for p in phis)
    bias = {}
    for p in phis:
        est = [fit_ellipse(synthesize_fringe(SignalModel(p, sigma=0.01), 100, seed=s)).Phi for s in range(20)]
        bias[p] = abs(np.mean(est) - p)
    worst = max(bias.values())
    record(9, "fringe round trip", clean <= 1e-8 and worst < 0.02, f"noiseless max err {clean:.1e}; noisy max |bias| {worst:.4f} rad")


def test_criterion_10_rotation_budget(tmp_path):
    path = tmp_path / "table.csv"
    with open(path, "w", newline="") as fh:
        write_entries_csv([SensitivityEntry(2, ("c110", "delta1"), 16 * math.pi, 1, 1.0, 1e-4)], fh)
    cfg = cli.load_config()
    cfg.target = 1e-9
    out = tmp_path / "budget.csv"
    rows = cli.cmd_budget(cfg, str(path), str(out))
    eta = rows[0][2]
    record(10, "rotation budget", 0.5e-5 <= eta <= 2e-5, f"omega = 2 pi x 2 Hz, target 1e-9 rad/s, C = 16 pi: eta = {eta:.3e}")
