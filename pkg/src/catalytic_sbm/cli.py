"""Command-line entry point: ``calibrate``, ``run``, ``validate``, ``schedule`` and ``pde``."""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys

from . import harness
from .catalyst import DensityCatalyst
from .pde import PdeGrid, extinction_sweep, grid_convergence, solve_loglaplace
from .schedules import verify_hypothesis_b


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _load_doc(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return harness.tomllib.load(fh)


def _run_config(args, doc: dict) -> harness.RunConfig:
    run = harness.config_from_dict(doc, seed=args.seed, out_dir=args.out, replicates=args.replicates,
                                   threads=args.threads)
    if args.config and run.calibration and not os.path.isabs(run.calibration):
        run.calibration = os.path.join(os.path.dirname(os.path.abspath(args.config)), run.calibration)
    return run


def _write_json(path: str, doc: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(harness._jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_calibrate(args) -> int:
    doc = _load_doc(args.config)
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    out = args.out or doc.get("out", "out")
    cal = doc.get("calibrate", {})
    res = harness.run_calibration(seed, float(cal.get("scale", args.scale)), delta=float(cal.get("delta", 0.1)),
                                  alpha_m=int(cal.get("alpha_m", 2)), d=int(cal.get("d", 1)))
    path = os.path.join(out, "calibration.json")
    _write_json(path, res)
    for name, rec in res["constants"].items():
        print(f"{name} = {float(rec['value']):.6g} (se {float(rec['se']):.2g})")
    print(f"wrote {path}")
    return 0


def _execute(run: harness.RunConfig) -> int:
    manifest = harness.run_all(run, log=print)
    manifest.write(run.out_dir)
    n_fail = sum(not c.passed for e in manifest.experiments for c in e.checks)
    incomplete = [e.name for e in manifest.experiments if not e.complete]
    print(f"{'PASS' if manifest.passed else 'FAIL'}: {n_fail} failed checks"
          + (f", incomplete: {incomplete}" if incomplete else "") + f"; artifacts in {run.out_dir}")
    return 0 if manifest.passed else 1


def cmd_run(args) -> int:
    run = _run_config(args, _load_doc(args.config))
    if not run.experiments:
        print("config defines no [[experiment]] entries", file=sys.stderr)
        return 2
    return _execute(run)


def cmd_validate(args) -> int:
    doc = copy.deepcopy(harness.DEFAULT_SUITE)
    user = _load_doc(args.config)
    # a config may select a subset of the suite or replace entries by name
    if "experiment" in user:
        by_name = {e.get("name", e["kind"]): e for e in doc["experiment"]}
        chosen = []
        for e in user["experiment"]:
            base = dict(by_name.get(e.get("name", e["kind"]), {}))
            params = {**base.get("params", {}), **e.get("params", {})}
            chosen.append({**base, **e, "params": params})
        doc["experiment"] = chosen
    doc.update({k: v for k, v in user.items() if k != "experiment"})
    return _execute(_run_config(args, doc))


def cmd_schedule(args) -> int:
    doc = _load_doc(args.config)
    run = _run_config(args, doc)
    try:
        consts = harness.load_constants(run, required=())
        schedules = harness.build_schedules(run.schedule, consts)
    except harness.MissingConstants as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    os.makedirs(run.out_dir, exist_ok=True)
    for s in schedules:
        path = os.path.join(run.out_dir, f"schedule_{s.model}_eps{s.epsilon:.6g}.csv")
        with open(path, "w", newline="") as fh:
            s.to_csv(fh)
    report = verify_hypothesis_b(schedules)
    _write_json(os.path.join(run.out_dir, "schedule_report.json"),
                {"schedule": run.schedule, "constants": consts, "report": report.to_dict(),
                 "remainders": [s.remainders() for s in schedules]})
    for f in report.flags:
        print(f"flag: {f}")
    print(f"{'PASS' if report.ok else 'FAIL'}: decay order {report.decay_order:.3g}; artifacts in {run.out_dir}")
    return 0 if report.ok else 1


def cmd_pde(args) -> int:
    doc = _load_doc(args.config)
    run = _run_config(args, doc)
    table = run.pde
    cat = harness.build_catalyst(table.get("catalyst", {"kind": "parabolic", "q": 2.0}))
    if not isinstance(cat, DensityCatalyst):
        print("error: the PDE solver takes density catalysts only", file=sys.stderr)
        return 2
    t, a = float(table.get("t", 1.0)), float(table.get("a", 0.0))
    h, mode = float(table.get("h", 0.01)), table.get("mode", "crank_nicolson")
    sweep = [float(x) for x in table.get("theta_sweep", [1e2, 1e3, 1e4, 1e5, 1e6])]
    res = extinction_sweep(cat, t, a, sweep, h=h, mode=mode)
    summary = {"input": table, **res.to_dict()}
    if table.get("grid_convergence", False):
        summary["grid_convergence"] = grid_convergence(cat, sweep[-1], t, a, mode=mode)
    os.makedirs(run.out_dir, exist_ok=True)
    if table.get("dump_field", True):
        grid = PdeGrid.for_problem(t, a, h=h, mode=mode)
        field = solve_loglaplace(cat, sweep[-1], t, grid, save_every=int(table.get("save_every", 50)))
        with open(os.path.join(run.out_dir, "pde_field.csv"), "w", newline="") as fh:
            field.to_csv(fh)
    _write_json(os.path.join(run.out_dir, "pde_summary.json"), summary)
    p = res.probability
    print(f"v_inf = {res.v_inf:.6g} +- {res.v_inf_err:.2g}; extinction probability {p:.6g}"
          + (" (divergent sweep)" if res.divergent else ""))
    return 0 if math.isfinite(p) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catalytic-sbm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    cmds = {
        "calibrate": (cmd_calibrate, "fit a, c0, c1 and alpha_hat and write calibration.json"),
        "run": (cmd_run, "run the experiments of a config file"),
        "validate": (cmd_validate, "run the built-in validation suite (a config may subset or override it)"),
        "schedule": (cmd_schedule, "build stage schedules and check their summability"),
        "pde": (cmd_pde, "solve the log-Laplace equation and extrapolate the extinction probability"),
    }
    for name, (fn, help_text) in cmds.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name == "run", help="TOML config file")
        p.add_argument("--seed", type=_u64, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--replicates", type=_positive, default=None)
        p.add_argument("--threads", type=_positive, default=None)
        if name == "calibrate":
            p.add_argument("--scale", type=float, default=1.0, help="multiplier on calibration path counts")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, harness.MissingConstants) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
