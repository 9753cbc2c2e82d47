"""Command-line interface: ``omcool {model,synth,fit,thermo,sweep,report}``.

Exit status 0 on success, 1 for usage or validation errors, 2 when a
computation fails (no convergence, degenerate regression, ...). With
``--json-errors`` the failure is also written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import fileio
from .errors import ComputationError
from .fitting import LorentzianFitResult, fit_coherent_response, fit_lorentzians, read_trace
from .model import TWO_PI, HeatingModel, dressed_state, occupancy_with_heating
from .spectra import frequency_grid, heterodyne_psd, read_spectrum, synthesize, write_spectrum
from .sweeps import (_drive_from_config, detuning_grid, power_grid, run_sweep,
                     system_from_config, theory_curves, write_sweep_outputs)
from .thermometry import (Anchor, Calibration, occupancy_from_asymmetry,
                          occupancy_from_calibration, occupancy_noise_anchored, pool_calibration)

DEFAULT_DETUNING_SIGMA_HZ = 10e6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _schema(name):
    return json.loads(resources.files("omcool").joinpath("data", name).read_text())


def _sweep_schema():
    run = _schema("run_config.schema.json")
    sweep = _schema("sweep_config.schema.json")
    text = json.dumps(sweep).replace('"run_config.schema.json#/$defs/', '"#/$defs/')
    sweep = json.loads(text)
    sweep["$defs"] = run["$defs"]
    return sweep


def load_config(path, kind="run") -> dict:
    """Read and validate a JSON config; unknown keys are rejected."""
    cfg = fileio.read_json(path)
    schema = _schema("run_config.schema.json") if kind == "run" else _sweep_schema()
    jsonschema.validate(cfg, schema)
    return cfg


def bundled_config() -> dict:
    return json.loads(resources.files("omcool").joinpath("data", "reference_device.json").read_text())


def _emit(text, out):
    if out:
        fileio.atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _heating(cfg):
    h = cfg.get("heating")
    return None if h is None else HeatingModel(**h)


def _config(args, kind="run"):
    if getattr(args, "config", None):
        return load_config(args.config, kind)
    if kind == "run":
        return bundled_config()
    raise UsageError("--config is required")


# -- subcommands ------------------------------------------------------------

MODEL_COLUMNS = ("gamma_eff_hz", "spring_hz", "n_f", "gamma_c_hz", "gamma_b_hz", "n_min",
                 "n_f_heated")


def cmd_model(args):
    cfg = _config(args)
    params = system_from_config(cfg["system"])
    heating = _heating(cfg)
    if args.sweep is None:
        drive = _drive_from_config(cfg, params)
        state = dressed_state(params, drive, heating)
        _emit(fileio.dumps(state.to_hz()), args.out)
        return
    block = cfg.get("sweep", {}).get(args.sweep)
    if block is None:
        raise UsageError(f"config has no sweep.{args.sweep} block")
    d = cfg.get("drive", {})
    delta, lo = TWO_PI * d.get("delta_hz", 0.0), TWO_PI * d.get("delta_lo_hz", 0.0)
    if args.sweep == "detuning":
        dc = TWO_PI * np.linspace(block["start_hz"], block["stop_hz"], block["num"])
        if "n_c" in block:
            drives = detuning_grid(dc, params, n_c=block["n_c"], delta=delta, delta_lo=lo)
        elif "cooling_power_w" in block and "coupling_efficiency" in block:
            drives = detuning_grid(dc, params, power_w=block["cooling_power_w"],
                                   coupling_efficiency=block["coupling_efficiency"],
                                   delta=delta, delta_lo=lo)
        else:
            raise UsageError("sweep.detuning needs n_c or cooling_power_w + coupling_efficiency")
        first = ("delta_c_hz", "n_c")
    else:
        drives = power_grid(block["n_c"], TWO_PI * d.get("delta_c_hz", -cfg["system"]["omega_m_hz"]),
                            params.omega_m, d.get("n_b", 0.0), delta, lo)
        first = ("n_c", "delta_c_hz")
    table = theory_curves(params, drives, heating)
    cols = {k: table[k] for k in (first[0],) + MODEL_COLUMNS[:3] + (first[1],) + MODEL_COLUMNS[3:]}
    _emit(fileio.csv_text(cols), args.out)


def cmd_synth(args):
    cfg = _config(args)
    params = system_from_config(cfg["system"])
    drive = _drive_from_config(cfg, params)
    syn = cfg.get("synth", {})
    eta = args.eta if args.eta is not None else syn.get("eta", 1.0)
    averages = args.averages if args.averages is not None else syn.get("averages", 1e4)
    seed = args.seed if args.seed is not None else cfg.get("seeds", {}).get("synth", 0)
    heating = _heating(cfg) or HeatingModel()
    n_f = syn.get("n_f", occupancy_with_heating(params, drive, heating))
    grid = frequency_grid(params, drive, syn.get("rbw_hz"))
    spec = heterodyne_psd(params, drive, n_f, eta, grid)
    if not args.noiseless:
        spec = synthesize(spec, averages, np.random.default_rng(seed))
    write_spectrum(args.out, spec)


def cmd_fit(args):
    if (args.spectrum is None) == (args.trace is None):
        raise UsageError("give exactly one of --spectrum and --trace")
    if args.spectrum:
        res = fit_lorentzians(read_spectrum(args.spectrum), mode=args.mode, weights=args.weights)
        _emit(fileio.dumps(res.to_dict()), args.out)
        return
    omega, resp = read_trace(args.trace)
    init = {}
    if args.config:
        params = system_from_config(load_config(args.config)["system"])
        init = {"omega_m": params.omega_m, "gamma_m": params.gamma_m}
    res = fit_coherent_response(omega, resp, init=init)
    _emit(fileio.dumps(res.to_dict()), args.out)


def _anchor_from_dict(d):
    return Anchor(area=TWO_PI * d["area_hz"], gamma_s=TWO_PI * d["gamma_s_hz"],
                  temperature=d["temperature_k"], gamma_m=TWO_PI * d["gamma_m_hz"],
                  area_sigma=TWO_PI * d.get("area_sigma_hz", 0.0),
                  gamma_m_sigma=TWO_PI * d.get("gamma_m_sigma_hz", 0.0))


def cmd_thermo(args):
    if args.pool:
        cal = pool_calibration([Calibration.from_dict(fileio.read_json(p)) for p in args.pool])
        _emit(fileio.dumps(cal.to_dict()), args.out)
        return
    if not args.fit:
        raise UsageError("--fit is required unless --pool is given")
    cfg = _config(args)
    params = system_from_config(cfg["system"])
    drive = _drive_from_config(cfg, params)
    sig = TWO_PI * cfg.get("tolerances", {}).get("detuning_sigma_hz", DEFAULT_DETUNING_SIGMA_HZ)
    fit = LorentzianFitResult.from_dict(fileio.read_json(args.fit))
    if args.asymmetry:
        est, cal = occupancy_from_asymmetry(fit, params, drive, args.run_id, args.session, sig)
        payload = {"occupancy": est.to_dict(), "calibration": cal.to_dict()}
    elif args.calibration:
        cal = Calibration.from_dict(fileio.read_json(args.calibration))
        est = occupancy_from_calibration(fit, params, drive, cal, args.run_id, sig)
        payload = {"occupancy": est.to_dict()}
    elif args.anchor:
        anchor = _anchor_from_dict(fileio.read_json(args.anchor))
        est = occupancy_noise_anchored(fit, params, drive, anchor, args.run_id, sig)
        payload = {"occupancy": est.to_dict()}
    elif args.make_anchor:
        payload = {"anchor": Anchor.from_fit(fit, params, drive).to_dict()}
    else:
        raise UsageError("choose one of --asymmetry, --calibration, --anchor, --make-anchor, --pool")
    _emit(fileio.dumps(payload), args.out)
    if args.ledger and "occupancy" in payload:
        fileio.append_jsonl(args.ledger, payload["occupancy"])


def cmd_sweep(args):
    cfg = _config(args, kind="sweep")
    base = Path(args.config).resolve().parent
    runs, summary = run_sweep(cfg, base, workers=args.workers)
    write_sweep_outputs(args.out, runs, summary, system_from_config(cfg["system"]))
    sys.stdout.write(render_summary(summary))


def render_summary(summary: dict) -> str:
    lines = [f"runs: {summary['n_runs']} ({summary.get('n_ok', 0)} ok)"]
    for f in summary.get("failures", []):
        lines.append(f"  failed {f['run_id']}: {f['type']}: {f['message']}")
    for sess, cal in (summary.get("calibrations") or {}).items():
        lines.append(f"calibration [{sess}]: C = {cal['c_cal']:.6g} +- {cal['c_cal_sigma']:.2g}"
                     f" from {len(cal['source_runs'])} runs")
    a = summary.get("anchor")
    if a:
        lines.append(f"anchor: gamma_m = {a['gamma_m_hz'] / 1e3:.4g} kHz at T = {a['temperature_k']:g} K")
    h = summary.get("heating")
    if h:
        lines.append(f"heating: alpha1 = {h['alpha1']:.4g} +- {h['alpha1_sigma']:.2g}, "
                     f"alpha2 = {h['alpha2']:.4g} +- {h['alpha2_sigma']:.2g}")
    s = summary.get("snr")
    if s:
        lines.append(f"detection efficiency: eta = {s['eta']:.4g} +- {s['eta_sigma']:.2g}")
    fl = summary.get("noise_floor")
    if fl:
        lines.append(f"noise floor: {fl['intercept']:.6g} + {fl['slope']:.4g} / W")
    for k, v in (summary.get("regression_errors") or {}).items():
        lines.append(f"{k} regression not available: {v['type']}: {v['message']}")
    return "\n".join(lines) + "\n"


def cmd_report(args):
    summary = fileio.read_json(args.summary)
    sys.stdout.write(render_summary(summary))
    if args.out:
        out = Path(args.out)
        if summary.get("theory"):
            fileio.write_csv(out / "theory.csv", summary["theory"])
        ledger = Path(args.summary).with_name("ledger.jsonl")
        if ledger.exists():
            rows = fileio.read_jsonl(ledger)
            cols = {k: [] for k in ("run_id", "delta_c_hz", "n_c", "n_f", "n_f_sigma_lo",
                                    "n_f_sigma_hi", "snr")}
            for r in rows:
                if r["error"] or r["occupancy"] is None:
                    continue
                occ = r["occupancy"]
                cols["run_id"].append(r["run_id"])
                cols["delta_c_hz"].append(occ["inputs"]["delta_c_hz"])
                cols["n_c"].append(r["drive"]["n_c"])
                cols["n_f"].append(occ["n_f"])
                cols["n_f_sigma_lo"].append(occ["sigma_lo"])
                cols["n_f_sigma_hi"].append(occ["sigma_hi"])
                cols["snr"].append(r["snr"])
            fileio.write_csv(out / "occupancy.csv", cols)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="omcool", description=__doc__.splitlines()[0])
    p.add_argument("--json-errors", action="store_true",
                   help="also report failures as JSON on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("model", help="evaluate the closed-form model")
    m.add_argument("--config", help="run config (default: bundled device config)")
    m.add_argument("--sweep", choices=["detuning", "power"])
    m.add_argument("--out")
    m.set_defaults(func=cmd_model)

    s = sub.add_parser("synth", help="write a synthetic heterodyne spectrum")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--eta", type=float)
    s.add_argument("--averages", type=float)
    s.add_argument("--noiseless", action="store_true")
    s.add_argument("--out", required=True, help="spectrum CSV; a .meta.json sidecar is written")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="fit a spectrum or a coherent-response trace")
    f.add_argument("--spectrum")
    f.add_argument("--trace")
    f.add_argument("--mode", choices=["single", "double"], default="double")
    f.add_argument("--weights", choices=["uniform", "model"], default="uniform")
    f.add_argument("--config", help="run config used to seed the transparency window")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("thermo", help="occupancy from a fit result")
    t.add_argument("--fit")
    t.add_argument("--config")
    g = t.add_mutually_exclusive_group()
    g.add_argument("--asymmetry", action="store_true")
    g.add_argument("--calibration")
    g.add_argument("--anchor")
    g.add_argument("--make-anchor", action="store_true")
    g.add_argument("--pool", nargs="+")
    t.add_argument("--run-id")
    t.add_argument("--session")
    t.add_argument("--ledger", help="append the estimate to this JSON-lines file")
    t.add_argument("--out")
    t.set_defaults(func=cmd_thermo)

    w = sub.add_parser("sweep", help="run the full pipeline on a sweep config")
    w.add_argument("--config", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="render a sweep summary")
    r.add_argument("--summary", required=True)
    r.add_argument("--out", help="directory for plot-ready CSVs")
    r.set_defaults(func=cmd_report)
    return p


def _fail(json_errors, code, exc, message=None):
    message = str(exc) if message is None else message
    sys.stderr.write(f"omcool: error: {message}\n")
    if json_errors:
        sys.stderr.write(json.dumps({"error": {"type": type(exc).__name__, "message": message,
                                               "exit_code": code}}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    json_errors = "--json-errors" in argv
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except ComputationError as exc:
        return _fail(json_errors, 2, exc)
    except jsonschema.ValidationError as exc:
        return _fail(json_errors, 1, exc, f"config validation failed: {exc.message}")
    except (UsageError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        return _fail(json_errors, 1, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
