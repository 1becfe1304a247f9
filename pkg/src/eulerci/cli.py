"""Command-line front end: validate parameters, run levels, verify and report.

All outputs of one run live under a single directory:

    <out>/manifest.json      run manifest (inputs, hash, telemetry)
    <out>/level_<q>/         one triple per level
    <out>/verify/            estimate records (CSV) and the JSON summary
    <out>/report/            plot-ready CSV tables
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import resource
import sys
import time
import warnings
from fractions import Fraction

from . import __version__
from .beltrami import LAMBDA_BAR
from .fields import Grid3, SnapshotError, set_threads
from .iteration import (ResolutionError, initial_triple, load_triple, save_triple, step,
                        verify_checksums)
from .params import ParamError, check_constraints, check_orderings, params_from_dict

EXIT_OK, EXIT_FAIL, EXIT_REFUSED = 0, 1, 2

DEFAULTS = {
    "grid": 32,
    "time_step": "1/256",
    "q": 1,
    "step": {"c_flow": 0.1, "nodes": 24, "rho_safety": 1.25},
    "verify": {"stride": 4, "holder_stride": 16},
}

CONSTRAINT_TEXT = {
    "b_gt_1": "b>1 required",
    "condition": "1 - 3b(beta0 + betaInf) > 0 required",
    "condition2": "5 betaInf > b(1 + 3 beta0) required",
    "eps0_bound": "eps0 above its admissible bound",
}


# ---------------------------------------------------------------------------
# configuration

def parse_time_step(x):
    """h from a number or a string '1/m'."""
    h = Fraction(str(x)) if isinstance(x, str) else Fraction(x).limit_denominator(1 << 20)
    if h <= 0 or h.numerator != 1:
        raise ValueError(f"time step must be 1/m, got {x}")
    return float(h)


def parse_grid(x):
    if isinstance(x, int):
        return Grid3(x)
    if isinstance(x, str):
        x = [int(s) for s in x.split(",")]
    x = list(x)
    return Grid3(x[0]) if len(x) == 1 else Grid3(None, tuple(x))


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path, args=None):
    """Config file merged over the defaults and then the command-line flags."""
    with open(path) as fh:
        cfg = json.load(fh)
    if "params" not in cfg:
        cfg = {"params": cfg}
    cfg = _merge(DEFAULTS, cfg)
    if args is not None:
        if getattr(args, "grid", None):
            cfg["grid"] = [int(s) for s in args.grid.split(",")]
        if getattr(args, "time_step", None):
            cfg["time_step"] = args.time_step
        if getattr(args, "q", None) is not None:
            cfg["q"] = args.q
        if getattr(args, "toy", False):
            cfg["params"] = dict(cfg["params"], toy_mode=True)
    return cfg


def config_hash(cfg):
    blob = json.dumps({"config": cfg, "version": __version__}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _params(cfg, validate=True):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return params_from_dict(cfg["params"], validate=validate)


def _emit(obj, path=None):
    text = json.dumps(obj, indent=1, sort_keys=True, default=str)
    if path is not None:
        _atomic_write(path, text)
    print(text)


def _atomic_write(path, text):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# validate

def cmd_validate(args):
    cfg = load_config(args.config, args)
    ps = _params(cfg, validate=False)
    cons = check_constraints(ps)
    orders = check_orderings(ps)
    failed = cons.failures()
    hard_orders = [r for r in orders.failures() if not r["lambda0_dependent"]]
    errors = [CONSTRAINT_TEXT.get(r["name"], r["name"] + " violated") for r in failed]
    errors += [r["name"] + " violated" for r in hard_orders]
    warnings_ = [r["name"] for r in orders.failures() if r["lambda0_dependent"]]
    ok = not errors or ps.toy_mode
    _emit({"ok": ok, "toy_mode": ps.toy_mode, "errors": errors,
           "lambda0_dependent_warnings": sorted(set(warnings_)),
           "constraints": cons.records, "orderings": orders.records,
           "params": ps.to_dict(), "params_hash": ps.fingerprint()})
    if errors:
        print("; ".join(errors), file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# run / step

def resolution_report(ps, grid: Grid3, q_target):
    """Required band lambda_{q+1} lambda_bar + 2 lambda_q per level against the grid band."""
    have = min(s // 4 - 1 for s in grid.shape)
    rows = []
    for q in range(q_target):
        need = ps.lam(q + 1) * LAMBDA_BAR + 2 * ps.lam(q)
        rows.append({"q": q, "lambda_next": ps.lam(q + 1), "required_band": need,
                     "grid_band": have, "kmax": list(grid.kmax), "ok": need <= have})
    return rows


def _level_dir(out, q):
    return os.path.join(out, f"level_{q}")


def _run_manifest(out, cfg, ps, grid, levels, telemetry):
    man = {
        "format": "eulerci-run", "tool_version": __version__,
        "config": cfg, "config_hash": config_hash(cfg),
        "params_hash": ps.fingerprint(), "grid": list(grid.shape),
        "levels_completed": max(levels) if levels else -1,
        "levels": {str(q): os.path.relpath(_level_dir(out, q), out) for q in levels},
        "telemetry": telemetry,
    }
    _atomic_write(os.path.join(out, "manifest.json"), json.dumps(man, indent=1, sort_keys=True))
    return man


def _step_kwargs(cfg):
    s = cfg.get("step", {})
    return {k: s[k] for k in ("c_flow", "nodes", "rho_safety") if k in s}


def _maxrss_mb():
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024


def cmd_run(args):
    cfg = load_config(args.config, args)
    ps = _params(cfg)
    grid = parse_grid(cfg["grid"])
    h = parse_time_step(cfg["time_step"])
    q_target = int(cfg["q"])
    if q_target < 0:
        print("q must be nonnegative", file=sys.stderr)
        return EXIT_FAIL
    plan = resolution_report(ps, grid, q_target)
    if not all(r["ok"] for r in plan):
        _emit({"refused": "grid too small for the requested levels", "plan": plan})
        print("refusing: required band lambda_{q+1}*lambda_bar + 2 lambda_q exceeds the grid band",
              file=sys.stderr)
        return EXIT_REFUSED
    out = args.out
    os.makedirs(out, exist_ok=True)
    start = time.perf_counter()
    telemetry = {"levels": {}}
    t0 = time.perf_counter()
    tr = initial_triple(ps, grid, h)
    save_triple(tr, _level_dir(out, 0))
    telemetry["levels"]["0"] = {"wall_s": time.perf_counter() - t0}
    levels = [0]
    tr = load_triple(_level_dir(out, 0))
    for q in range(q_target):
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr, eng = step(tr, _level_dir(out, q + 1), **_step_kwargs(cfg))
        telemetry["levels"][str(q + 1)] = dict(eng.telemetry, wall_s=time.perf_counter() - t0)
        levels.append(q + 1)
        _run_manifest(out, cfg, ps, grid, levels, telemetry)
    telemetry["wall_s"] = time.perf_counter() - start
    telemetry["maxrss_mb"] = _maxrss_mb()
    man = _run_manifest(out, cfg, ps, grid, levels, telemetry)
    _emit({"out": out, "levels": levels, "config_hash": man["config_hash"],
           "wall_s": telemetry["wall_s"]})
    return EXIT_OK


def cmd_step(args):
    with open(os.path.join(args.out, "manifest.json")) as fh:
        man = json.load(fh)
    cfg = man["config"]
    q = man["levels_completed"] if args.q is None else args.q
    src = _level_dir(args.out, q)
    tr = load_triple(src)
    plan = resolution_report(tr.params, tr.grid, q + 1)[-1]
    if not plan["ok"]:
        _emit({"refused": "grid too small", "plan": plan})
        return EXIT_REFUSED
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, eng = step(tr, _level_dir(args.out, q + 1), **_step_kwargs(cfg))
    levels = sorted({int(k) for k in man["levels"]} | {q + 1})
    telemetry = man.get("telemetry", {"levels": {}})
    telemetry.setdefault("levels", {})[str(q + 1)] = dict(eng.telemetry,
                                                          wall_s=time.perf_counter() - t0)
    telemetry["maxrss_mb"] = max(telemetry.get("maxrss_mb", 0.0), _maxrss_mb())
    _run_manifest(args.out, cfg, tr.params, tr.grid, levels, telemetry)
    _emit({"out": args.out, "level": q + 1})
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify / suite / report

def _levels(run_dir):
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        man = json.load(fh)
    return man, [int(q) for q in sorted(man["levels"], key=int)]


def verify_run(run_dir, stride=None, holder_stride=None):
    """Checksums, estimate records, residuals, invariants and energy for every level."""
    from . import verify as V
    man, levels = _levels(run_dir)
    vcfg = _merge(DEFAULTS["verify"], man["config"].get("verify", {}))
    stride = stride or vcfg["stride"]
    holder_stride = holder_stride or vcfg["holder_stride"]
    summary = {"levels": {}}
    records = []
    triples = []
    ok = True
    for q in levels:
        path = _level_dir(run_dir, q)
        n_snap = verify_checksums(path)
        tr = load_triple(path)
        triples.append(tr)
        st = 1 if q == 0 else stride
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            recs = V.check_inductive(tr, stride=st)
            if q > 0:
                recs += V.perturbation_records(tr)
            res = V.residual_series(tr, stride=st)
            inv = V.triple_invariants(tr, stride=st)
        records += recs
        lev = {"snapshots": n_snap, "estimates": V.summarize(recs), "invariants": inv,
               "residual_max": max((r[2] for r in res), default=0.0)}
        if q == 0:
            lev["residual_ok"] = lev["residual_max"] < 1e-10
            lev["threshold"] = V.initial_threshold(tr.params)
            ok &= lev["residual_ok"]
        ok &= lev["estimates"]["ok"] and inv["ok"]
        summary["levels"][str(q)] = lev
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        energy = V.energy_and_l1_holder(triples, stride=1, holder_stride=holder_stride)
    for lev in energy["levels"]:
        lev.pop("times")
        lev.pop("energy")
        ok &= lev["support_ok"] and lev["nontrivial"]
    summary["energy"] = energy
    summary["ok"] = bool(ok)
    return summary, records


def cmd_verify(args):
    from . import verify as V
    try:
        summary, records = verify_run(args.run_dir, args.stride)
    except SnapshotError as err:
        print(f"checksum failure: {err}", file=sys.stderr)
        return EXIT_FAIL
    out = os.path.join(args.run_dir, "verify")
    os.makedirs(out, exist_ok=True)
    V.write_records_csv(records, os.path.join(out, "records.csv"))
    _atomic_write(os.path.join(out, "summary.json"), V.to_json(summary))
    print(json.dumps({"ok": summary["ok"], "records": len(records),
                      "levels": {q: {"estimates_ok": s["estimates"]["ok"],
                                     "invariants_ok": s["invariants"]["ok"]}
                                 for q, s in summary["levels"].items()}}, indent=1))
    return EXIT_OK if summary["ok"] else EXIT_FAIL


def cmd_suite(args):
    from . import verify as V
    alpha = 0.05
    seed = 0
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        alpha = cfg.get("suite", {}).get("alpha", alpha)
        seed = cfg.get("suite", {}).get("seed", seed)
    rep = V.property_suite(seed=seed, alpha=alpha)
    text = V.to_json(rep)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _atomic_write(os.path.join(args.out, "suite.json"), text)
    print(text)
    return EXIT_OK if rep["pass"] else EXIT_FAIL


def cmd_report(args):
    """Plot-ready CSV: energy per sample and level, and the perturbation records."""
    from . import verify as V
    man, levels = _levels(args.run_dir)
    out = os.path.join(args.run_dir, "report")
    os.makedirs(out, exist_ok=True)
    triples = [load_triple(_level_dir(args.run_dir, q)) for q in levels]
    energy = V.energy_and_l1_holder(triples, stride=1, holder_stride=10 ** 9)
    with open(os.path.join(out, "energy.csv"), "w") as fh:
        fh.write("level,t,energy\n")
        for lev in energy["levels"]:
            for t, e in zip(lev["times"], lev["energy"]):
                fh.write(f"{lev['level']},{t!r},{e!r}\n")
    with open(os.path.join(out, "perturbation.csv"), "w") as fh:
        fh.write("level,n,t,j,w_sup,w_bound,dp_sup,dp_bound\n")
        for q, tr in zip(levels, triples):
            recs = tr.records.get("records", []) if isinstance(tr.records, dict) else []
            for r in recs:
                fh.write(f"{q},{r['n']},{r['t']!r},{r['j']},{r['w_sup']!r},{r['w_bound']!r},"
                         f"{r['dp_sup']!r},{r['dp_bound']!r}\n")
    maj = {"alpha": energy["alpha"], "majorant": energy["majorant"],
           "terms": energy["majorant_terms"]}
    _atomic_write(os.path.join(out, "majorant.json"), V.to_json(maj))
    _emit({"report": out, "files": ["energy.csv", "perturbation.csv", "majorant.json"]})
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="eulerci", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=None,
                   help="FFT worker threads (default: $EULERCI_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--q", type=int, default=None)
        sp.add_argument("--grid", default=None, help="N or n1,n2,n3")
        sp.add_argument("--toy", action="store_true")
        sp.add_argument("--time-step", dest="time_step", default=None, help="h, e.g. 1/256")

    sp = sub.add_parser("validate", help="check parameter constraints and orderings")
    common(sp)
    sp.set_defaults(func=cmd_validate)
    sp = sub.add_parser("run", help="build levels 0..q and write them under --out")
    common(sp, out_required=True)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("step", help="one more level in an existing run directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--q", type=int, default=None, help="source level (default: last)")
    sp.set_defaults(func=cmd_step)
    sp = sub.add_parser("verify", help="estimate records and hard checks for a run directory")
    sp.add_argument("run_dir")
    sp.add_argument("--stride", type=int, default=None)
    sp.set_defaults(func=cmd_verify)
    sp = sub.add_parser("suite", help="property suite and scaling fits")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_suite)
    sp = sub.add_parser("report", help="plot-ready CSV tables for a run directory")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        set_threads(args.threads)
    try:
        return args.func(args)
    except (ParamError, ValueError) as err:
        if isinstance(err, ResolutionError):
            print(f"refusing: {err}", file=sys.stderr)
            return EXIT_REFUSED
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
