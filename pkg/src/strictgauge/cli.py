"""Command-line front end: check, solve, catalog, report-diff.

Exit codes: 0 pass, 1 condition failure, 2 usage or parse error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np
import sympy as sp

from . import __version__
from . import catalog as cat
from . import expr as ex
from . import specfile as sf

REPORT_SCHEMA = "strictgauge.report/1"
DYNAMIC_EXAMPLES = ("toy_rotation", "toy_rotation_extended", "r3_flux:good", "r3_flux:bad", "r3_flux:wrong")


class UsageError(Exception):
    pass


def _dump(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _load_spec(path):
    try:
        return sf.read_spec(path)
    except OSError as err:
        raise UsageError(f"cannot read {path}: {err.strerror}") from None
    except (sf.SpecError, ex.ParseError) as err:
        raise UsageError(f"{path}: {err}") from None


def _base_report(command, spec, args):
    return {
        "schema": REPORT_SCHEMA,
        "tool": f"strictgauge {__version__}",
        "command": command,
        "problem": spec.name,
        "input_sha256": spec.source_hash,
        "settings": {"mode": args.mode, "seed": args.seed, "tol": args.tol, "points": args.points},
    }


def _sample_summary(chart, args):
    with ex.sampling(args.points, args.seed):
        pts = ex.sample_points(chart, args.points)
    names = [s.name for s in chart.symbols + chart.param_symbols]
    return {"count": int(len(pts)), "variables": names,
            "first": [[round(float(v), 12) for v in row] for row in pts[:4]]}


def _run_check(spec, args):
    from .gauge import check_gauging

    t0 = time.perf_counter()
    with ex.sampling(args.points, args.seed):
        rep = check_gauging(spec.problem, args.mode, args.tol)
    elapsed = time.perf_counter() - t0
    out = rep.to_dict()
    out["strictness_residuals"] = rep.strictness_residuals
    out["sample_points"] = _sample_summary(spec.problem.chart, args)
    return rep, out, elapsed


def cmd_check(args):
    spec = _load_spec(args.spec)
    rep, body, elapsed = _run_check(spec, args)
    report = _base_report("check", spec, args)
    report.update(body)
    if args.timings:
        report["timings"] = {"check_seconds": round(elapsed, 3)}
    _dump(report, args.out)
    return 0 if rep.passed else 1


def _lattice_from(spec):
    from .worldsheet import Lattice

    cfg = dict(sf.DEFAULT_LATTICE)
    cfg.update(spec.lattice)
    lat_kw = {k: cfg[k] for k in ("n_sigma", "n_tau", "length_sigma", "length_tau") if k in cfg}
    return Lattice(**lat_kw), cfg


def cmd_solve(args):
    from . import worldsheet as ws

    spec = _load_spec(args.spec)
    if not spec.lattice:
        raise UsageError(f"{args.spec}: solve needs a [lattice] section")
    if spec.transversal is None:
        raise UsageError(f"{args.spec}: solve needs a transversal invariant in [problem]")
    try:
        lat, cfg = _lattice_from(spec)
    except ValueError as err:
        raise UsageError(f"{args.spec}: {err}") from None
    rep, body, _ = _run_check(spec, args)
    report = _base_report("solve", spec, args)
    report["gauging"] = {"overall": body["overall"], "strictness": body["strictness"]}
    report["lattice"] = lat.to_dict()
    t0 = time.perf_counter()
    try:
        fv = ws.detect_freezing(spec.problem, lat, spec.transversal, trials=cfg["trials"], low=cfg["low"],
                                high=cfg["high"], stiffness=cfg["stiffness"], seed=args.seed,
                                steps=cfg["steps"], tol=cfg["tol"], B=spec.primitive)
    except ws.LatticeError as err:
        raise UsageError(f"{args.spec}: {err}") from None
    elapsed = time.perf_counter() - t0
    report["freezing"] = {
        "verdict": fv.verdict,
        "directions": [int(d) for d in fv.directions],
        "variances": [float(f"{v:.6e}") for v in fv.variances],
        "initial_variances": [float(f"{v:.6e}") for v in fv.initial_variances],
        "converged": [bool(r.converged) for r in fv.results],
    }
    if args.timings:
        report["timings"] = {"solve_seconds": round(elapsed, 3)}
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    header = {"problem": spec.name, "schema": ws.SCHEMA, "seed": args.seed}
    cols = {"tau_index": np.arange(lat.n_tau)}
    for k, prof in enumerate(fv.profiles):
        cols[f"transversal_trial{k}"] = prof
    with open(os.path.join(outdir, "profile.csv"), "w", encoding="utf-8") as fh:
        fh.write(ws.series_to_csv(cols, header))
    history = fv.results[0].history
    with open(os.path.join(outdir, "history.csv"), "w", encoding="utf-8") as fh:
        fh.write(ws.series_to_csv({"step": np.arange(len(history)), "objective": history}, header))
    with open(os.path.join(outdir, "config.csv"), "w", encoding="utf-8") as fh:
        ws.config_to_csv(fv.results[0].config, lat, spec.problem.chart.name, fh)
    report["artifacts"] = ["config.csv", "history.csv", "profile.csv"]
    _dump(report, os.path.join(outdir, "report.json"))
    _dump(report)
    if not rep.passed or fv.verdict == "undetermined":
        return 1
    return 0


def _catalog_params(items):
    params = {}
    for item in items:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"parameter {item!r} is not key=value")
        key = {"ε": "eps", "epsilon": "eps"}.get(key.strip(), key.strip())
        value = value.strip()
        try:
            params[key] = sp.Rational(value)
        except (TypeError, ValueError, sp.SympifyError):
            params[key] = value
    return params


def cmd_catalog(args):
    if args.name in (None, "list"):
        sys.stdout.write("\n".join(cat.NAMES) + "\n")
        return 0
    if args.name not in cat.NAMES:
        sys.stderr.write(f"unknown example {args.name!r}; known examples:\n  " + "\n  ".join(cat.NAMES) + "\n")
        return 2
    params = _catalog_params(args.params)
    try:
        entry = cat.make(args.name, **params)
    except (cat.CatalogError, TypeError, ValueError) as err:
        raise UsageError(str(err)) from None
    lattice = None
    if args.lattice:
        lattice = dict(sf.DEFAULT_LATTICE, n_sigma=args.lattice, n_tau=args.lattice)
    elif args.name in DYNAMIC_EXAMPLES:
        lattice = dict(sf.DEFAULT_LATTICE)
    text = sf.export_spec(sf.spec_from_entry(entry, lattice))
    spec = sf.parse_spec(text)
    if sf.export_spec(spec) != text:
        sys.stderr.write("exported spec does not round-trip through the parser\n")
        return 1
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if not args.check:
        return 0
    # check the catalog object directly (the parsed spec is equivalent, checked above)
    spec = sf.GeometrySpec(entry.name, entry.problem, spec.charts, spec.transitions, entry.transversal,
                           spec.primitive, spec.lattice, spec.source_hash)
    rep, body, _ = _run_check(spec, args)
    report = _base_report("catalog", spec, args)
    report.update(body)
    if args.name == "su2:almost_strict":
        eps = float(entry.extras["eps"])
        radii = [round(eps * f, 10) for f in (0.25, 0.45, 0.55, 0.7, 0.85, 0.95, 1.05, 1.5, 3.0)]
        prof = cat.strictness_profile(entry, radii)
        report["shell_profile"] = {
            "radius": "rb",
            "shell": [eps / 2, eps],
            "rows": [{"rb": rr, "max_residual": float(f"{v:.6e}")} for rr, v in zip(radii, prof)],
        }
    _dump(report, args.report)
    return 0 if rep.passed else 1


def _strip(report):
    out = dict(report)
    out.pop("timings", None)
    return out


def _diff(a, b, path=""):
    if isinstance(a, dict) and isinstance(b, dict):
        out = []
        for k in sorted(set(a) | set(b)):
            if k not in a or k not in b:
                out.append(f"{path}/{k}: {'missing in first' if k not in a else 'missing in second'}")
            else:
                out += _diff(a[k], b[k], f"{path}/{k}")
        return out
    if a != b:
        return [f"{path}: {json.dumps(a, sort_keys=True)} != {json.dumps(b, sort_keys=True)}"]
    return []


def cmd_report_diff(args):
    loaded = []
    for path in (args.first, args.second):
        try:
            with open(path, encoding="utf-8") as fh:
                loaded.append(json.load(fh))
        except OSError as err:
            raise UsageError(f"cannot read {path}: {err.strerror}") from None
        except json.JSONDecodeError as err:
            raise UsageError(f"{path}: not JSON ({err})") from None
    diffs = _diff(_strip(loaded[0]), _strip(loaded[1]))
    sys.stdout.write("identical\n" if not diffs else "\n".join(diffs) + "\n")
    return 0 if not diffs else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="strictgauge", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"strictgauge {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--mode", choices=("auto", "canonical", "sampled"), default="auto")
        p.add_argument("--seed", type=int, default=0, help="offset of the sample sequence / initial data seed")
        p.add_argument("--tol", type=float, default=1e-9)
        p.add_argument("--points", type=int, default=32)
        p.add_argument("--timings", action="store_true", help="add wall-clock timings (breaks byte reproducibility)")

    p = sub.add_parser("check", help="run the gauging checks on a spec file")
    p.add_argument("spec")
    p.add_argument("--out", help="report path (default stdout)")
    common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve", help="relax on the lattice and classify freezing")
    p.add_argument("spec")
    p.add_argument("--out", help="output directory for report and CSV files")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("catalog", help="export a worked example as a spec file")
    p.add_argument("name", nargs="?", help="example name, or 'list'")
    p.add_argument("params", nargs="*", help="key=value parameters, e.g. eps=1/10")
    p.add_argument("--out", help="spec path (default stdout)")
    p.add_argument("--check", action="store_true", help="also run the checks")
    p.add_argument("--report", help="report path for --check (default stdout)")
    p.add_argument("--lattice", type=int, help="add a lattice block with this many sites per side")
    common(p)
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("report-diff", help="compare two JSON reports, ignoring timings")
    p.add_argument("first")
    p.add_argument("second")
    p.set_defaults(func=cmd_report_diff)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return args.func(args)
    except UsageError as err:
        sys.stderr.write(f"error: {err}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
