"""Command-line driver for the simulated experiments.

Subcommands::

    qeff calibrate-weights   --config cfg.json --out DIR
    qeff extract-eta         --config cfg.json --out DIR [--seed N] [--shots N]
    qeff sweep-detuning      --config cfg.json --out DIR
    qeff optimize-depletion  --config cfg.json --out DIR [--mode mc]
    qeff fit-chain           [points.csv] --out DIR
    qeff selftest

Exit codes: 0 success, 2 bad config or input file, 3 simulation error,
4 fit failure, 5 self-test failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import chain_model as cm
from . import depletion_opt as dopt
from .cavity_dynamics import (EXCITED, GROUND, TWO_PI, ReadoutParams, compute_trajectory,
                              eta_identity, depleted_envelope)
from .config import ExperimentConfig, load_config
from .errors import FitFailure, InvalidInputError, QeffError
from .homodyne_sim import averaged_transients
from .pipeline import PipelineConfig, calibrate, run_extraction
from .pulses import envelope_to_dict, save_envelope, skyline_envelope, square_ramp_envelope

log = logging.getLogger("qeff")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_FIT = 4
EXIT_SELFTEST = 5


class _ConfigStage(Exception):
    """Wraps errors raised while reading configuration and input files."""


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _provenance(cfg: ExperimentConfig, command: str) -> dict:
    effective = {"readout": asdict(cfg.readout), "pipeline": asdict(cfg.pipeline),
                 "envelope": envelope_to_dict(cfg.envelope)}
    return {"command": command, "seed": cfg.seed, "config": cfg.resolved,
            "effective": effective, "version": __version__}


def _load(args) -> ExperimentConfig:
    try:
        return load_config(args.config, seed=args.seed, shots=args.shots, mode=args.mode)
    except (QeffError, ValueError, OSError) as exc:
        raise _ConfigStage(str(exc)) from exc


# ------------------------------------------------------------------ commands

def cmd_calibrate_weights(cfg: ExperimentConfig, out: Path) -> dict:
    cal = calibrate(cfg.readout, cfg.envelope, cfg.pipeline, cfg.seed)
    traj = compute_trajectory(cfg.readout, cal.envelope.scaled(cal.eps_calib))
    n_avg = None if cfg.pipeline.calibration == "noiseless" else cfg.pipeline.calib_shots
    words = [cfg.seed, 11]
    i0, q0 = averaged_transients(traj, cfg.readout, GROUND, n_avg, words)
    i1, q1 = averaged_transients(traj, cfg.readout, EXCITED, n_avg, words)
    t_ns = traj.times * 1e9
    _write_csv(out / "weights.csv", ["t_ns", "w_i", "w_q"],
               zip(t_ns, cal.weights.w_i, cal.weights.w_q))
    _write_csv(out / "transients.csv", ["t_ns", "i0", "q0", "i1", "q1"],
               zip(t_ns, i0, q0, i1, q1))
    save_envelope(cal.envelope, out / "envelope.json")
    dep = None if cal.depletion is None else asdict(cal.depletion)
    write_json(out / "depletion.json", {"depletion": dep, "tuneup_evals": cal.tuneup_evals,
                                        "mode": cfg.pipeline.depletion})
    return {"eps_calib": cal.eps_calib, "gamma_m_unit": cal.gamma_unit,
            "weights_kind": cal.weights.kind, "phi_w": cal.weights.phi_w, "depletion": dep,
            "files": ["weights.csv", "transients.csv", "envelope.json", "depletion.json"]}


def cmd_extract_eta(cfg: ExperimentConfig, out: Path) -> dict:
    res = run_extraction(cfg.readout, cfg.envelope, cfg.pipeline, cfg.seed)
    snr = {p.epsilon: p for p in res.snr}
    rows = []
    for c in res.coherence:
        s = snr.get(c.epsilon)
        rows.append([c.epsilon, c.rho01, c.rho01_err, c.phi0,
                     s.snr if s else 0.0, s.snr_err if s else 0.0])
    _write_csv(out / "points.csv", ["epsilon", "rho01", "rho01_err", "phi0", "snr", "snr_err"], rows)
    return res.as_dict()


def _conditions(cond: str) -> dict:
    weights, depletion = cond.split("/")
    return {"weights": weights, "depletion": depletion}


def cmd_sweep_detuning(cfg: ExperimentConfig, out: Path) -> dict:
    if len(cfg.sweep_delta) < 3 and len(cfg.sweep_delta) != 1:
        raise _ConfigStage("sweep-detuning needs at least 3 detunings (or exactly one)")
    reports = out / "reports"
    reports.mkdir(exist_ok=True)
    rows, entries = [], []
    for i, d_mhz in enumerate(cfg.sweep_delta):
        params = cfg.readout.replace(delta=TWO_PI * d_mhz * 1e6)
        for j, cond in enumerate(cfg.conditions):
            pc = replace(cfg.pipeline, **_conditions(cond))
            entry = {"delta_mhz": d_mhz, "condition": cond}
            try:
                res = run_extraction(params, cfg.envelope, pc, [cfg.seed, i, j])
            except QeffError as exc:
                entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
                log.warning("delta %.3f MHz %s failed: %s", d_mhz, cond, exc)
                rows.append([d_mhz, cond, "nan", "nan", "failed"])
            else:
                name = f"delta_{i:02d}_{cond.replace('/', '_')}.json"
                write_json(reports / name, res.as_dict())
                entry.update(status="ok", eta_e=res.eta.eta_e, eta_err=res.eta.eta_err,
                             report=f"reports/{name}")
                rows.append([d_mhz, cond, res.eta.eta_e, res.eta.eta_err, "ok"])
            entries.append(entry)
    _write_csv(out / "summary.csv", ["delta_mhz", "condition", "eta_e", "eta_err", "status"], rows)
    return {"points": entries}


def cmd_optimize_depletion(cfg: ExperimentConfig, out: Path) -> dict:
    pc = cfg.pipeline
    res = dopt.optimize_depletion(cfg.readout, cfg.envelope, config=pc.cost, mode=pc.tuneup_mode,
                                  seed=[cfg.seed, 14], max_evals=pc.max_evals)
    exact = dopt.analytic_depletion(cfg.readout, cfg.envelope)
    res.write_trace(out / "trace.csv")
    env = dopt.apply_depletion(cfg.envelope, res.params)
    compute_trajectory(cfg.readout, env).to_csv(out / "fields.csv")
    save_envelope(env, out / "envelope.json")
    mismatch = dopt.depletion_mismatch(res.params, exact)
    ramp = dopt.ramp_amplitude(cfg.envelope)
    return {"optimized": asdict(res.params), "optimized_relative": res.params.relative_to(ramp),
            "analytic": asdict(exact),
            "mismatch": dict(zip(["eps_d0_rel", "eps_d1_rel", "phi_d0_rad", "phi_d1_rad"],
                                 mismatch.tolist())), "cost": res.cost, "n_evals": res.n_evals,
            "converged": res.converged, "warning": res.warning, "mode": pc.tuneup_mode,
            "files": ["trace.csv", "fields.csv", "envelope.json"]}


def cmd_fit_chain(cfg: ExperimentConfig, out: Path, csv_path: Path | None) -> dict:
    path = csv_path or cfg.chain_csv
    if path is None:
        raise _ConfigStage("fit-chain needs a CSV path (argument or chain.csv in the config)")
    try:
        points = cm.read_points_csv(path)
    except FileNotFoundError:
        raise _ConfigStage(f"points file not found: {path}") from None
    except InvalidInputError as exc:
        raise _ConfigStage(f"{path}: {exc}") from None
    fit = cm.fit_chain(points, cfg.n_sections, cfg.freq, fixed=cfg.chain_fixed)
    gains = cfg.chain_gains if cfg.chain_gains is not None else np.linspace(0, 30, 61)
    cm.write_stage_curves_csv(out / "stages.csv", fit.params, gains)
    cm.write_fit_json(out / "fit.json", fit)
    body = {**fit.as_dict(), "fixed": cfg.chain_fixed, "points_csv": str(path),
            "files": ["fit.json", "stages.csv"]}
    if cfg.pump_map is not None:
        pm = cfg.pump_map
        ridge = cm.GainRidge(**pm.get("ridge", {}))
        grid = cm.pump_map(fit.params, ridge, np.linspace(*pm["power_dbm"]),
                           np.linspace(*pm["freq_ghz"]))
        cm.write_pump_map_csv(out / "pump_map.csv", grid)
        body["pump_map_best"] = grid["best"]
        body["files"].append("pump_map.csv")
    return body


def run_selftest() -> list[tuple[str, bool, str]]:
    """Quick consistency checks of the noiseless paths."""
    results = []
    p = ReadoutParams.nominal()
    for name, env in (("square", square_ramp_envelope()), ("skyline", skyline_envelope())):
        e = eta_identity(compute_trajectory(p, depleted_envelope(p, env)), p)
        results.append((f"eta identity ({name})", abs(e / p.eta - 1) < 1e-6, f"{e:.9f}"))
    res = dopt.optimize_depletion(p, square_ramp_envelope())
    ref = dopt.analytic_depletion(p, square_ramp_envelope())
    worst = float(np.max(dopt.depletion_mismatch(res.params, ref)))
    results.append(("depletion optimizer vs linear solve", worst < 1e-3, f"max mismatch {worst:.2e}"))
    post = float(cm.eta_post(21.6, 2.6))
    results.append(("eta_post at 21.6 dB, 2.6 K", abs(post - 0.91) < 0.01, f"{post:.4f}"))
    ext = run_extraction(p, square_ramp_envelope(), PipelineConfig(shots=2 ** 13, ramsey_shots=2 ** 10),
                         seed=7)
    ok = abs(ext.eta.eta_e - p.eta) < 5 * ext.eta.eta_err
    results.append(("closed-loop extraction", ok,
                    f"{ext.eta.eta_e:.4f} +- {ext.eta.eta_err:.4f} (injected {p.eta})"))
    return results


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qeff", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("qeff-out"), help="output directory")
    common.add_argument("--shots", type=int, help="override shots per epsilon")
    common.add_argument("--mode", choices=["noiseless", "mc"],
                        help="transients for tune-up and weight calibration")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("calibrate-weights", "depletion tune-up and weight calibration"),
                       ("extract-eta", "full three-step extraction"),
                       ("sweep-detuning", "extraction across detunings and conditions"),
                       ("optimize-depletion", "Nelder-Mead depletion tune-up against the exact solve"),
                       ("selftest", "quick built-in consistency checks")):
        sub.add_parser(name, parents=[common], help=text)
    fc = sub.add_parser("fit-chain", parents=[common], help="fit the amplifier-chain model")
    fc.add_argument("csv", nargs="?", type=Path, help="gain_db,eta_e,eta_err points")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        results = run_selftest()
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFTEST
    try:
        if args.command == "fit-chain" and args.config is None and args.seed is None:
            args.seed = 0  # the chain fit draws no random numbers
        cfg = _load(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        if args.command == "calibrate-weights":
            body = cmd_calibrate_weights(cfg, out)
        elif args.command == "extract-eta":
            body = cmd_extract_eta(cfg, out)
        elif args.command == "sweep-detuning":
            body = cmd_sweep_detuning(cfg, out)
        elif args.command == "optimize-depletion":
            body = cmd_optimize_depletion(cfg, out)
        else:
            body = cmd_fit_chain(cfg, out, args.csv)
        log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    except _ConfigStage as exc:
        print(f"qeff: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitFailure as exc:
        print(f"qeff: fit failed: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, default=_jsonable, sort_keys=True), file=sys.stderr)
        return EXIT_FIT
    except QeffError as exc:
        print(f"qeff: simulation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    report = {**_provenance(cfg, args.command), "result": body}
    write_json(out / "report.json", report)
    print(f"wrote {out / 'report.json'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
