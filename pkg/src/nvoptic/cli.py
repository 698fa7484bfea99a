"""Command-line front end.

    nvoptic run CONFIG [--out DIR] [--threads N] [--seed S] [--runs N]
    nvoptic replay MANIFEST [--out DIR]
    nvoptic list-experiments
    nvoptic validate CONFIG

A run writes ``results.csv`` (unit-tagged header), ``manifest.json``,
two-column ``series/*.dat`` files and, unless disabled, PNG figures.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .config import DESCRIPTIONS, EXPERIMENT_PARAMS, ConfigError, parse_config, resolve
from .ensemble import observe
from .noise import NORMAL_ALGORITHM, SEED_RULE

OUT_ENV = "NVOPTIC_OUT"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))


def freq_unit(convention: str) -> str:
    return "MHz" if convention == "ordinary" else "rad/us"


class Report:
    """Everything one experiment produces before it is written to disk."""

    def __init__(self, columns):
        self.columns = columns
        self.rows = []
        self.series = {}       # name -> (x, y)
        self.summary = {}
        self.figures = []      # (filename, callable(path))

    def add(self, *row):
        self.rows.append(row)


def _run_coherence_vs_drive(cfg, s, p, fu):
    res = ex.exp_coherence_vs_drive(s, p["omegas"], p["t"])
    rep = Report([f"omega [{fu}]", "abs_L [1]", "stderr [1]"])
    for row in zip(res.x, res.y, res.stderr):
        rep.add(*row)
    rep.series["abs_L_vs_omega"] = (res.x, res.y)
    k = int(np.argmax(res.y))
    rep.summary = {"argmax_omega": float(res.x[k]), "max_abs_L": float(res.y[k]), "t": p["t"]}
    rep.figures.append(("coherence_vs_drive.png", lambda path: _plots().line_plot(
        path, [(res.x, res.y, res.stderr, None)], f"Omega [{fu}]", f"|L({p['t']:g} us)|")))
    return rep


def _run_coherence_vs_time(cfg, s, p, fu):
    out = ex.exp_coherence_vs_time(s, p["omegas"], p["T"])
    rep = Report(["t [us]", "abs_L [1]", "stderr [1]", f"omega [{fu}]"])
    for om, ser in out.items():
        for t, y, e in zip(ser.x, ser.y, ser.stderr):
            rep.add(t, y, e, om)
        rep.series[f"abs_L_omega={om:g}"] = (ser.x, ser.y)
        tc, observed = ex.coherence_time(ser.x, ser.y)
        rep.summary[f"coherence_time_omega={om:g}"] = {"t_e": tc, "observed": observed}
    curves = [(ser.x, ser.y, ser.stderr, f"Omega={om:g} {fu}") for om, ser in out.items()]
    rep.figures.append(("coherence_vs_time.png", lambda path: _plots().line_plot(
        path, curves, "t [us]", "|L(t)|", hline=ex.E_INV)))
    return rep


def _run_drive_fluctuations(cfg, s, p, fu):
    res = ex.exp_drive_fluctuations(s, p["deltas"], p["omega"], p["t"])
    rep = Report(["delta_omega [1]", "abs_L [1]", "stderr [1]"])
    for row in zip(res.x, res.y, res.stderr):
        rep.add(*row)
    rep.series["abs_L_vs_delta_omega"] = (res.x, res.y)
    rep.summary = {"omega": p["omega"], "t": p["t"]}
    rep.figures.append(("drive_fluctuations.png", lambda path: _plots().line_plot(
        path, [(res.x, res.y, res.stderr, None)], "relative drive noise", f"|L({p['t']:g} us)|")))
    return rep


def _run_spectrum(cfg, s, p, fu):
    res = ex.exp_spectrum(s, p["omega"], p["eta0"], p["t"], p["grid"], p["theta_sig"])
    rep = Report([f"omega_s [{fu}]", f"detuning [{fu}]", "delta_P [1]", "stderr [1]"])
    for f, d, e in zip(res.frequencies, res.delta_p, res.stderr):
        rep.add(f, f - res.resonance, d, e)
    rep.series["delta_P_vs_detuning"] = (res.frequencies - res.resonance, res.delta_p)
    rep.summary = {"center": res.center, "depth": res.depth, "fwhm": res.fwhm,
                   "resonance": res.resonance, "unit": fu}
    rep.figures.append(("spectrum.png", lambda path: _plots().spectrum_plot(path, res, fu)))
    return rep


def _run_angle(cfg, s, p, fu):
    res = ex.exp_angle(s, p["thetas"], p["theta_sig"], p["omega"], p["eta0"], p["t"])
    rel = (res.x - p["theta_sig"]) / math.pi
    rep = Report(["theta [rad]", "theta_minus_theta_sig [pi rad]", "delta_P [1]", "stderr [1]"])
    for row in zip(res.x, rel, res.y, res.stderr):
        rep.add(*row)
    rep.series["delta_P_vs_angle"] = (rel, res.y)
    k = int(np.argmax(res.y))
    rep.summary = {"argmax_theta": float(res.x[k]), "max_delta_P": float(res.y[k])}
    rep.figures.append(("angle.png", lambda path: _plots().line_plot(
        path, [(rel, res.y, res.stderr, None)], "(theta - theta_sig) / pi", "delta P")))
    return rep


def _run_sensitivity(cfg, s, p, fu):
    curves = {}
    cols = ["t [us]", "P0 [1]", f"dP_deta0 [1/{fu}]", f"sensitivity [{fu}]", "flagged [bool]"]
    if p["T_all"]:
        cols.append(f"sensitivity_total [{fu}]")
    rep = Report(cols + [f"omega [{fu}]"])
    for om in (0.0, p["omega"]):
        res = ex.exp_sensitivity(s, p["times"], om, p["eta0"], p["rel_step"], p["theta_sig"])
        for k, t in enumerate(res.times):
            row = [t, res.P[k], res.dP_deta[k], res.sensitivity[k], bool(res.flagged[k])]
            if p["T_all"]:
                row.append(res.sensitivity[k] * ex.averaging_factor(p["T_all"], p["T_init"], t))
            rep.add(*row, om)
        rep.series[f"sensitivity_omega={om:g}"] = (res.times, res.sensitivity)
        curves[om] = res
    plot_curves = [(r.times, r.sensitivity, None, f"Omega={om:g} {fu}") for om, r in curves.items()]
    rep.figures.append(("sensitivity.png", lambda path: _plots().line_plot(
        path, plot_curves, "t [us]", f"one-trial sensitivity [{fu}]", logy=True)))
    return rep


RUNNERS = {
    "coherence_vs_drive": _run_coherence_vs_drive,
    "coherence_vs_time": _run_coherence_vs_time,
    "drive_fluctuations": _run_drive_fluctuations,
    "spectrum": _run_spectrum,
    "angle": _run_angle,
    "sensitivity": _run_sensitivity,
}


def _plots():
    from . import plots
    return plots


def render_csv(report: Report) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns)
    for row in report.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def execute(cfg, out_dir: Path, plots: bool = True) -> dict:
    """Run one configured experiment and write its artifacts into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ensembles = []
    started = time.time()
    with observe(ensembles.append):
        report = RUNNERS[cfg.experiment](cfg, cfg.settings, cfg.params, freq_unit(cfg.convention))
    wall = time.time() - started

    table = render_csv(report)
    (out_dir / "results.csv").write_bytes(table)
    series_dir = out_dir / "series"
    series_dir.mkdir(exist_ok=True)
    for name, (x, y) in report.series.items():
        lines = [f"{_fmt(a)} {_fmt(b)}" for a, b in zip(x, y)]
        (series_dir / f"{name}.dat").write_text("\n".join(lines) + "\n")
    figures = []
    if plots:
        for fname, draw in report.figures:
            draw(out_dir / fname)
            figures.append(fname)
    manifest = {
        "config": cfg.resolved,
        "master_seed": cfg.settings.seed,
        "seed_rule": SEED_RULE,
        "normal_algorithm": NORMAL_ALGORITHM,
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_seconds": wall,
        "ensembles": len(ensembles),
        "total_steps": sum(m["steps"] for m in ensembles),
        "results_sha256": hashlib.sha256(table).hexdigest(),
        "summary": report.summary,
        "figures": figures,
    }
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2) + "\n")
    return manifest


def _default_out(cfg, explicit):
    if explicit:
        return Path(explicit)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUT_ENV, "results")) / cfg.experiment


def _apply_overrides(cfg, args):
    tree = copy.deepcopy(cfg.resolved)
    if args.threads is not None:
        tree["threads"] = args.threads
    if getattr(args, "seed", None) is not None:
        tree["ensemble"]["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        tree["ensemble"]["n_runs"] = args.runs
    return resolve(tree)


def cmd_run(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    out = _default_out(cfg, args.out)
    manifest = execute(cfg, out, cfg.plots)
    print(f"wrote {out / 'results.csv'}")
    if cfg.experiment == "spectrum":
        s = manifest["summary"]
        print(json.dumps({k: s[k] for k in ("center", "depth", "fwhm")}))
    return 0


def cmd_replay(args) -> int:
    path = Path(args.manifest)
    old = json.loads(path.read_text())
    cfg = resolve(old["config"], source=str(path))
    if args.threads is not None:
        cfg = _apply_overrides(cfg, args)
    out = Path(args.out) if args.out else path.parent / "replay"
    manifest = execute(cfg, out, cfg.plots)
    same = manifest["results_sha256"] == old["results_sha256"]
    print(f"wrote {out / 'results.csv'}; results {'identical' if same else 'DIFFER'} "
          f"(sha256 {manifest['results_sha256'][:16]})")
    return 0 if same else 1


def cmd_list(args) -> int:
    for name in EXPERIMENT_PARAMS:
        print(f"{name:20s} {DESCRIPTIONS[name]}")
    return 0


def cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    print(json.dumps(_jsonable(cfg.resolved), indent=2))
    print(f"{args.config}: ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nvoptic", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a YAML config")
    run.add_argument("config")
    run.add_argument("--out")
    run.add_argument("--threads", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--runs", type=int, help="override ensemble.n_runs")
    run.set_defaults(func=cmd_run)
    rep = sub.add_parser("replay", help="re-run a manifest and compare results")
    rep.add_argument("manifest")
    rep.add_argument("--out")
    rep.add_argument("--threads", type=int)
    rep.set_defaults(func=cmd_replay)
    ls = sub.add_parser("list-experiments", help="list available experiments")
    ls.set_defaults(func=cmd_list)
    val = sub.add_parser("validate", help="check a config and print it with defaults")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
