"""Command-line front end: ``sagnacsim {simulate,table,fitforms,calibrate,ellipse,budget}``.

Configuration is an INI file layered over the packaged ``defaults.ini``;
command-line flags override both.  All numeric output uses 12 significant
digits and '.' decimals.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import sys
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from scipy import constants

from . import calibration, fringe, sensitivity
from .dynamics import IntegratorSettings
from .errors import AmbiguousFit, ConfigError, SagnacError
from .model import PARAM_INDEX, PhysicalScales, PerturbationVector, unpack_parameters
from .protocol import run_interferometer

DEFAULTS_PATH = Path(__file__).with_name("defaults.ini")


@dataclass
class RunConfig:
    scales: PhysicalScales
    zeta: float = 1.0
    n: int = 1
    overrides: dict = field(default_factory=dict)
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    search_tol: float = 1e-6
    order: int = 2
    h: float | None = None
    threshold: float = 1e-4
    n_list: tuple = (1, 2, 3)
    zeta_list: tuple = (1.0,)
    cylindrical: str = "auto"
    workers: int = 0
    poles: tuple = ((0, 1), (1, 1), (3, 1))
    active: tuple = ("delta2", "c110")
    max_iter: int = 10
    tol: float = 1e-6
    solver: str = "inverse"
    bootstrap: int = 200
    target: float = 1e-9
    budget_omega: float = 4 * math.pi
    seed: int = 0

    @property
    def eval_settings(self) -> sensitivity.EvalSettings:
        return sensitivity.EvalSettings(self.integrator, self.search_tol)

    @property
    def eta(self) -> PerturbationVector:
        return PerturbationVector.from_dict(self.overrides)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    return cp


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _poles(text: str) -> tuple:
    out = []
    for item in text.split(","):
        loc, _, mult = item.strip().partition(":")
        out.append((float(loc), int(mult or 1)))
    return tuple(out)


def load_config(path=None) -> RunConfig:
    """Defaults overlaid with ``path``; unknown sections or keys raise ConfigError."""
    cp = _parser()
    cp.read(DEFAULTS_PATH)
    allowed = {sec: set(cp[sec]) for sec in cp.sections()}
    if path is not None:
        user = _parser()
        try:
            with open(path) as fh:
                user.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in user.sections():
            if sec not in allowed:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for key, value in user[sec].items():
                if sec == "parameters":
                    if key not in PARAM_INDEX:
                        raise ConfigError(f"{path}: unknown parameter '{key}' in [parameters]")
                elif key not in allowed[sec]:
                    raise ConfigError(f"{path}: unknown key '{key}' in [{sec}]")
                cp[sec][key] = value
    try:
        return _build(cp)
    except ValueError as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from None


def _build(cp) -> RunConfig:
    s = cp["scales"]
    mass = float(s["mass_u"]) * constants.atomic_mass
    scales = PhysicalScales(mass, 2 * math.pi / float(s["wavelength"]), 2 * math.pi * float(s["frequency_hz"]))
    integ = cp["integrator"]
    scan = cp["scan"]
    h = scan["h"].strip()
    cal = cp["calibration"]
    return RunConfig(
        scales=scales,
        zeta=float(cp["trap"]["zeta"]),
        n=int(cp["protocol"]["n"]),
        overrides={k: float(v) for k, v in cp["parameters"].items()},
        integrator=IntegratorSettings(float(integ["rel_tol"]), float(integ["abs_tol"]), float(integ["max_step"])),
        search_tol=float(integ["search_tol"]),
        order=int(scan["order"]),
        h=None if h == "auto" else float(h),
        threshold=float(scan["threshold"]),
        n_list=_ints(scan["n_list"]),
        zeta_list=_floats(scan["zeta_list"]),
        cylindrical=scan["cylindrical"].strip(),
        workers=int(scan["workers"]),
        poles=_poles(cp["fit"]["poles"]),
        active=tuple(v.strip() for v in cal["active"].split(",") if v.strip()),
        max_iter=int(cal["max_iter"]),
        tol=float(cal["tol"]),
        solver=cal["solver"].strip(),
        bootstrap=int(cp["fringe"]["bootstrap"]),
        target=float(cp["budget"]["target"]),
        budget_omega=2 * math.pi * float(cp["budget"]["frequency_hz"]),
        seed=int(cp["run"]["seed"]),
    )


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    if args.zeta is not None:
        cfg.zeta = args.zeta
        cfg.zeta_list = (args.zeta,)
    if args.n is not None:
        cfg.n = args.n
        cfg.n_list = tuple(range(1, args.n + 1))
    if args.order is not None:
        cfg.order = args.order
    if args.h is not None:
        cfg.h = args.h
    if args.threshold is not None:
        cfg.threshold = args.threshold
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "target", None) is not None:
        cfg.target = args.target
    return cfg


class _Output:
    def __init__(self, path):
        self.path = path
        self.buf = io.StringIO()

    def __enter__(self):
        return self.buf

    def __exit__(self, *exc):
        if exc[0] is None:
            text = self.buf.getvalue()
            if self.path:
                with open(self.path, "w", newline="") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
        return False


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig, out_path=None):
    trap, init, bragg, timing = unpack_parameters(cfg.eta, cfg.zeta, cfg.n)
    report = run_interferometer(trap, init, bragg, timing, cfg.integrator, cfg.search_tol)
    if out_path:
        with _Output(out_path) as fh:
            fh.write(report.csv_header() + "\n" + report.to_csv_row() + "\n")
    sys.stdout.write(report.to_text())
    return report


def cmd_table(cfg: RunConfig, out_path=None):
    cyl = cfg.cylindrical == "true" or (cfg.cylindrical == "auto" and cfg.order == 3)
    entries = []
    for zeta in cfg.zeta_list:
        entries += sensitivity.table_scan(
            cfg.order,
            cfg.n_list,
            zeta,
            cfg.threshold,
            cfg.h,
            eta0=cfg.eta,
            cylindrical=cyl,
            settings=cfg.eval_settings,
            workers=cfg.workers or None,
        )
    with _Output(out_path) as fh:
        sensitivity.write_entries_csv(entries, fh)
    return entries


def cmd_fitforms(cfg: RunConfig, input_path, out_path=None):
    with open(input_path, newline="") as fh:
        entries = sensitivity.read_entries_csv(fh)
    groups = defaultdict(list)
    for e in entries:
        groups[(e.param_names, e.zeta)].append((e.n, e.value))
    amplitudes = defaultdict(list)
    lines = []
    for (names, zeta), pts in sorted(groups.items(), key=lambda kv: (tuple(PARAM_INDEX[x] for x in kv[0][0]), kv[0][1])):
        key = ":".join(names)
        pts.sort()
        try:
            fit = sensitivity.fit_n_dependence(pts, zeta)
        except AmbiguousFit as exc:
            lines.append(f"key={key} zeta={zeta:.12g} form=ambiguous detail={exc}")
            continue
        except SagnacError as exc:
            lines.append(f"key={key} zeta={zeta:.12g} form=none detail={exc}")
            continue
        if fit.kind == "polynomial":
            c0, c1, c2 = fit.coefficients
            lines.append(
                f"key={key} zeta={zeta:.12g} form=polynomial c0={c0:.12g} c1={c1:.12g} c2={c2:.12g} residual={fit.residual:.3g}"
            )
        elif fit.kind == "sinusoid":
            lines.append(
                f"key={key} zeta={zeta:.12g} form=sinusoid A={fit.amplitude:.12g} n0={fit.n0:.12g} n0_free={fit.n0_free:.12g} "
                f"label={fit.label or '-'} residual={fit.residual:.3g}"
            )
            amplitudes[names].append((zeta, fit.amplitude))
        else:
            lines.append(f"key={key} zeta={zeta:.12g} form=zero residual=0")
    for names, pts in amplitudes.items():
        usable = [p for p in pts if all(abs(p[0] - loc) >= 0.05 for loc, _ in cfg.poles)]
        if not usable:
            continue
        zf = sensitivity.fit_zeta_dependence(usable, cfg.poles)
        poles = ",".join(f"{loc:g}:{m}" for loc, m in cfg.poles)
        lines.append(f"key={':'.join(names)} A0={zf.A0:.12g} poles={poles} points={len(usable)} rms_relative={zf.rms_relative:.3g}")
    with _Output(out_path) as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    return lines


def cmd_calibrate(cfg: RunConfig, out_path=None):
    exp = calibration.SimulatedExperiment(cfg.active, cfg.overrides, cfg.n, cfg.zeta, cfg.eval_settings)
    state = calibration.iterate_calibration(cfg.active, exp, max_iter=cfg.max_iter, tol=cfg.tol, solver=cfg.solver)
    with _Output(out_path) as fh:
        state.write_trace(fh)
    return state


def cmd_ellipse(cfg: RunConfig, input_path, out_path=None):
    with open(input_path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if {"beta", "t2", "phi"} <= set(header):
        res = fringe.slope_pipeline(fringe.read_slope_csv(input_path), cfg.scales.omega)
        text = (
            f"d2Phi_dt2_dbeta = {res.d2_t2_beta:.12g}\n"
            f"d2Phi_dt2_dbeta_err = {res.d2_t2_beta_err:.3g}\n"
            f"d2Phi_ddelta2_dgamma = {res.d2_delta2_gamma:.12g}\n"
            f"d2Phi_ddelta2_dgamma_err = {res.d2_delta2_gamma_err:.3g}\n"
            f"theory_5pi_kR = {5 * math.pi * cfg.scales.phase_scale:.12g}\n"
        )
        result = res
    else:
        result = fringe.fit_ellipse(fringe.read_points_csv(input_path), cfg.bootstrap, cfg.seed)
        text = result.report()
    with _Output(out_path) as fh:
        fh.write(text)
    return result


def cmd_budget(cfg: RunConfig, input_path, out_path=None):
    with open(input_path, newline="") as fh:
        entries = [e for e in sensitivity.read_entries_csv(fh) if e.order == 2]
    rows = []
    for e in entries:
        prod = sensitivity.allowed_eta_product(e.value, e.n, cfg.budget_omega, cfg.target)
        rows.append((e, prod, math.sqrt(prod)))
    with _Output(out_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param1", "param2", "n", "zeta", "value", "target", "omega", "allowed_product", "allowed_eta"])
        for e, prod, eta in rows:
            w.writerow(
                [*e.param_names, e.n, f"{e.zeta:.12g}", f"{e.value:.12g}", f"{cfg.target:.12g}", f"{cfg.budget_omega:.12g}",
                 "inf" if math.isinf(prod) else f"{prod:.12g}", "inf" if math.isinf(eta) else f"{eta:.12g}"]
            )
    return rows


# ---------------------------------------------------------------------------


def build_argparser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file layered over the packaged defaults")
    common.add_argument("--zeta", type=float)
    common.add_argument("--n", type=int, help="orbit count (table: scan n = 1..N)")
    common.add_argument("--order", type=int, choices=(1, 2, 3))
    common.add_argument("--h", type=float, help="finite-difference step")
    common.add_argument("--threshold", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="PATH", help="write the main output here instead of stdout")

    parser = argparse.ArgumentParser(prog="sagnacsim", description="Dual Sagnac atom interferometer simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one configuration and print the phase report")
    sub.add_parser("table", parents=[common], help="scan derivative coefficients and write CSV")
    p = sub.add_parser("fitforms", parents=[common], help="fit n and zeta dependence of a table CSV")
    p.add_argument("input")
    sub.add_parser("calibrate", parents=[common], help="iterate toward grad Phi = 0 on the simulator")
    p = sub.add_parser("ellipse", parents=[common], help="fit S_R,S_L points (or beta,t2,phi slopes)")
    p.add_argument("input")
    p = sub.add_parser("budget", parents=[common], help="allowed parameter products for a rotation-error target")
    p.add_argument("input")
    p.add_argument("--target", type=float, help="rotation error target in rad/s")
    return parser


def main(argv=None) -> int:
    args = build_argparser().parse_args(argv)
    try:
        cfg = _apply_flags(load_config(args.config), args)
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "table":
            cmd_table(cfg, args.out)
        elif args.command == "fitforms":
            cmd_fitforms(cfg, args.input, args.out)
        elif args.command == "calibrate":
            with warnings.catch_warnings():
                warnings.simplefilter("always")
                cmd_calibrate(cfg, args.out)
        elif args.command == "ellipse":
            cmd_ellipse(cfg, args.input, args.out)
        elif args.command == "budget":
            cmd_budget(cfg, args.input, args.out)
    except (SagnacError, ValueError, OSError) as exc:
        print(f"sagnacsim {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
