"""Command line entry point: ``duckpac validate|run|compare|export-problem``.

Failures print one line ``error: <ErrorClass>: <message>`` on stderr and exit
with the code attached to the error class (2 validation, 3 infeasible,
4 divergence, 5 I/O).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import DataIOError, DuckPacError, ValidationError
from .grid import bundled_network_path, load_network
from .profiles import generate_profiles, read_profiles_csv
from .scenarios import (SCENARIOS, SOC_CASES, ScenarioResult, SolverConfig, build_problem,
                        compare, run_baseline, run_distributed, run_local, soc_sweep,
                        summary_json, write_results)

MANIFEST = "manifest.json"


def _sha256(path):
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc
    return h.hexdigest()


def _versions():
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "piqp"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _write_json(path, doc):
    try:
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc
    return Path(path)


def _split(value):
    return [v.strip() for v in value.split(",") if v.strip()] if value else []


# --------------------------------------------------------------------------- configuration

def _network_path(arg):
    path = Path(arg) if arg else bundled_network_path()
    if not path.exists():
        raise DataIOError(f"{path}: no such file")
    return path.resolve()


def _solver_config(args, base=None):
    doc = dict(base or {})
    if args.solver_config:
        path = Path(args.solver_config)
        if not path.exists():
            raise DataIOError(f"{path}: no such file")
        doc.update(dataclasses.asdict(SolverConfig.load(path)))
    if args.max_iter is not None:
        doc["max_iter"] = args.max_iter
    if args.tol is not None:
        doc["eps_primal"] = doc["eps_coord"] = args.tol
    if args.workers is not None:
        doc["workers"] = args.workers
    return SolverConfig.from_dict(doc)


def run_config(args):
    """Resolved, JSON-serialisable run configuration."""
    if args.manifest:
        try:
            cfg = json.loads(Path(args.manifest).read_text())["config"]
        except OSError as exc:
            raise DataIOError(f"{args.manifest}: {exc}") from exc
        except (KeyError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{args.manifest}: not a run manifest ({exc})") from exc
        for key in ("network", "profiles"):
            if cfg.get(key) and _sha256(cfg[key]) != cfg[f"{key}_sha256"]:
                raise ValidationError(f"{cfg[key]}: content differs from the manifest")
        cfg["solver"] = dataclasses.asdict(SolverConfig.from_dict(cfg["solver"]))
        return cfg
    if args.seed is None:
        raise ValidationError("--seed is required")
    net_path = _network_path(args.network)
    prof_path = None
    if args.profiles:
        prof_path = Path(args.profiles)
        if not prof_path.exists():
            raise DataIOError(f"{prof_path}: no such file")
        prof_path = prof_path.resolve()
    scenarios = _split(args.scenarios) or list(SCENARIOS)
    bad = [s for s in scenarios if s not in SCENARIOS]
    if bad:
        raise ValidationError(f"unknown scenario(s) {bad}; choose from {list(SCENARIOS)}")
    soc_cases = _split(args.soc_case)
    bad = [c for c in soc_cases if c not in SOC_CASES]
    if bad:
        raise ValidationError(f"unknown SOC case(s) {bad}; choose from {list(SOC_CASES)}")
    return {
        "network": str(net_path),
        "network_sha256": _sha256(net_path),
        "profiles": str(prof_path) if prof_path else None,
        "profiles_sha256": _sha256(prof_path) if prof_path else None,
        "seed": int(args.seed),
        "scenarios": scenarios,
        "soc_cases": soc_cases,
        "solver": dataclasses.asdict(_solver_config(args)),
    }


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _inputs(cfg):
    net = load_network(cfg["network"])
    if cfg["profiles"]:
        profiles = read_profiles_csv(cfg["profiles"], net)
        # the file holds loads only; PV and demand response come from the seed
        gen = generate_profiles(cfg["seed"], net)
        profiles.pv_capacity, profiles.pv_avail = gen.pv_capacity, gen.pv_avail
        profiles.alpha_dr = gen.alpha_dr
    else:
        profiles = generate_profiles(cfg["seed"], net)
    return net, profiles


# --------------------------------------------------------------------------- subcommands

def cmd_validate(args):
    path = _network_path(args.path or args.network)
    net = load_network(path)
    report = {"network": str(path), "counts": net.summary(), "invariants": "ok"}
    if args.seed is not None:
        profiles = generate_profiles(args.seed, net)
        prob = build_problem(net, profiles)
        report["problem"] = prob.counts()
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_run(args):
    cfg = run_config(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"{out}: {exc}") from exc
    net, profiles = _inputs(cfg)
    solver = SolverConfig.from_dict(cfg["solver"])
    results, files = [], []
    for tag in cfg["scenarios"]:
        if tag == "A":
            results.append(run_baseline(net, profiles))
        elif tag == "B":
            results.append(run_local(net, profiles))
        else:
            results.append(run_distributed(net, profiles, solver, trace_path=out / "trace_C.csv"))
            files.append(out / "trace_C.csv")
    for r in results:
        r.check(net)
    files += write_results(results, out)
    report = None
    if "A" in cfg["scenarios"] and len(results) > 1:
        report = compare(results)
        files.append(_write_json(out / "comparison.json", report))
    files.append(_write_json(out / "summary.json", summary_json(report, results)))
    if cfg["soc_cases"]:
        b0 = {c: SOC_CASES[c] for c in cfg["soc_cases"]}
        sweep = soc_sweep(net, profiles, cfg["soc_cases"], solver, b0)
        base = [r for r in results if r.tag == "A"] or [run_baseline(net, profiles)]
        rows = []
        for case, res in sweep.items():
            res.check(net)
            files += write_results([res], out, prefix=f"sweep_{case}_")
            rows.append({"soc_case": case, **compare([base[0], res])["rows"][1]})
        files.append(_write_json(out / "soc_sweep.json", {"rows": rows}))
    manifest = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "versions": _versions(),
        "outputs": {p.name: _sha256(p) for p in files},
    }
    _write_json(out / MANIFEST, manifest)
    if report is not None:
        for row in report["rows"]:
            print(f"{row['scenario']}: total ramp {row['total_ramp_kw']:.1f} kW, "
                  f"reduction {row['ramp_reduction_pct']:.2f}%, "
                  f"peak-hour reduction {row['peak_ramp_reduction_pct']:.2f}%")
    print(f"wrote {len(files) + 1} files to {out}")
    return 0


def _read_pcc(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc
    if not rows or rows[0][0] != "hour" or len(rows) < 3:
        raise ValidationError(f"{path}: not a PCC series file")
    tags = [h.removeprefix("pcc_kw_") for h in rows[0][1:]]
    try:
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return [ScenarioResult(t, data[:, k]) for k, t in enumerate(tags)]


def cmd_compare(args):
    path = Path(args.results)
    pcc = path / "pcc.csv" if path.is_dir() else path
    results = _read_pcc(pcc)
    summary = pcc.parent / "summary.json"
    if summary.exists():
        doc = json.loads(summary.read_text())["scenarios"]
        for r in results:
            if r.tag in doc:
                r.mean_agent_time = doc[r.tag]["mean_agent_time_s"]
                r.info = doc[r.tag]["info"]
    print(json.dumps(compare(results, baseline=args.baseline), indent=2, sort_keys=True))
    return 0


def cmd_export(args):
    from .opf import export_problem

    if args.seed is None:
        raise ValidationError("--seed is required")
    cfg = {"network": str(_network_path(args.network)),
           "profiles": str(Path(args.profiles).resolve()) if args.profiles else None,
           "seed": args.seed}
    if cfg["profiles"] and not Path(cfg["profiles"]).exists():
        raise DataIOError(f"{cfg['profiles']}: no such file")
    net, profiles = _inputs(cfg)
    prob = build_problem(net, profiles, _solver_config(args))
    export_problem(prob, args.out)
    print(json.dumps(prob.counts(), sort_keys=True))
    return 0


# --------------------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="duckpac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def inputs(sp_, seed_required=False):
        sp_.add_argument("--network", help="network JSON (default: bundled 34-bus feeder)")
        g = sp_.add_mutually_exclusive_group()
        g.add_argument("--profiles", help="load profile CSV (bus,phase,hour,p_kw,q_kvar)")
        g.add_argument("--gen-profiles", action="store_true",
                       help="generate profiles from the seed (default)")
        sp_.add_argument("--seed", type=int, help="RNG seed (required)")

    def solver(sp_):
        sp_.add_argument("--solver-config", help="JSON file with solver settings")
        sp_.add_argument("--max-iter", type=int, help="NST-PAC round limit")
        sp_.add_argument("--tol", type=float, help="primal and coordination tolerance")
        sp_.add_argument("--workers", type=int, help="solver threads")

    v = sub.add_parser("validate", help="check a network file and print entity counts")
    v.add_argument("path", nargs="?", help="network JSON")
    v.add_argument("--network", help=argparse.SUPPRESS)
    v.add_argument("--seed", type=int, help="also build the relaxed problem and count rows")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run scenarios and write results")
    inputs(r)
    r.add_argument("--scenarios", default="A,B,C", help="comma list from A,B,C")
    r.add_argument("--soc-case", help="comma list from min,mid,full for the SOC sweep")
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--manifest", help="re-run the configuration stored in a manifest")
    solver(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="ramping table from a run directory or pcc.csv")
    c.add_argument("results", help="run directory or pcc.csv")
    c.add_argument("--baseline", default="A")
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("export-problem", help="write the relaxed problem as sparse triplets")
    inputs(e)
    e.add_argument("--out", required=True, help="output text file")
    solver(e)
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DuckPacError as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
