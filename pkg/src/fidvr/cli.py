"""``fidvr`` command line: sim, monitor, mitigate, validate, fit.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 infeasible plan
or failed fit. Global options may also be set through ``FIDVR_SEED``,
``FIDVR_JOBS``, ``FIDVR_OUT_DIR`` and ``FIDVR_LOG_LEVEL``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from fidvr import grid, schemas

log = logging.getLogger("fidvr")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 2, 3, 4
ENV_PREFIX = "FIDVR_"


class InputError(Exception):
    pass


class NumericalError(Exception):
    pass


class InfeasibleError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("fidvr")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_json(path, kind: str | None = None) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: not valid JSON ({exc})") from None
    if kind is not None:
        try:
            schemas.validate(data, kind)
        except schemas.SchemaError as exc:
            raise InputError(f"{p}: {exc}") from None
    return data


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")
    return path


class Run:
    """Collects inputs and outputs of one command and writes its manifest."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict = {}
        self.outputs: list = []
        self.t0 = time.perf_counter()
        self.timings: dict = {}

    def input(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"no such file: {p}")
        self.inputs[str(p)] = _sha256(p)
        return p

    def output(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def lap(self, name: str):
        now = time.perf_counter()
        self.timings[name] = now - self.t0
        self.t0 = now

    def manifest(self) -> Path:
        doc = {
            "command": self.args.command,
            "argv": sys.argv[1:],
            "seed": self.args.seed,
            "version": _version(),
            "inputs": self.inputs,
            "outputs": {p.name: _sha256(p) for p in self.outputs},
            "timings_s": self.timings,
        }
        return _write_json(self.out / "manifest.json", doc)


def _packaged(name: str) -> Path:
    from fidvr.reference import data_path

    return data_path(name)


def _load_net(run: Run, path):
    p = run.input(path or _packaged("ieee37_network.json"))
    try:
        return grid.FeederNetwork.load(p)
    except schemas.SchemaError as exc:
        raise InputError(f"{p}: {exc}") from None
    except (grid.GridError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"{p}: {exc}") from None


def _load_areas(run: Run, path):
    from fidvr.reference import area_from_dict

    p = run.input(path or _packaged("ieee37_areas.json"))
    data = _read_json(p, "areas")
    try:
        return [area_from_dict(d) for d in data["areas"]]
    except (TypeError, ValueError) as exc:
        raise InputError(f"{p}: {exc}") from None


def _load_submodels(run: Run, path):
    from fidvr.rdsm import SubModelParameters

    p = run.input(path or _packaged("ieee37_submodels.json"))
    data = _read_json(p, "submodels")
    try:
        return {a: SubModelParameters.from_dict(d) for a, d in data["areas"].items()}
    except (TypeError, ValueError) as exc:
        raise InputError(f"{p}: {exc}") from None


# --------------------------------------------------------------------------
# commands


def cmd_sim(args) -> int:
    from fidvr import reference, simulation

    run = Run(args)
    net = _load_net(run, args.network)
    areas = _load_areas(run, args.areas)
    doc = _read_json(run.input(args.scenario), "scenario")
    scenario, cfg, overrides = reference.scenario_from_dict(doc)
    try:
        areas = reference.apply_area_overrides(areas, overrides)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{args.scenario}: {exc}") from None
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    else:
        args.seed = cfg.seed
    run.lap("load")
    res = simulation.run_simulation(net, areas, scenario, cfg)
    run.lap("simulate")
    csv_path = run.output(run.out / "mupmu.csv")
    simulation.emit_mupmu_stream(res, rate=args.rate, path=csv_path)
    states = run.output(run.out / "states.csv")
    _write_states(res, states)
    summary = {"recovery_time_s": res.recovery_time(), "collapsed": res.collapsed, "diagnostic": res.diagnostic,
               "areas": list(res.area_ids), "manifest": "manifest.json"}
    run.output(_write_json(run.out / "sim_summary.json", summary))
    run.lap("write")
    run.manifest()
    if res.collapsed:
        log.error("simulation collapsed: %s", res.diagnostic)
        return EXIT_NUMERIC
    return EXIT_OK


def _write_states(res, path: Path):
    roots = sorted(set(res.area_roots), key=res.area_roots.index)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s"] + [f"v_{r}_pu" for r in roots] + [f"stalled_{a}" for a in res.area_ids]
                   + [f"theta_{a}" for a in res.area_ids])
        vr = np.abs(np.column_stack([res.bus(r) for r in roots]))
        for k in range(len(res.t)):
            w.writerow([format(res.t[k], ".9g")] + [format(x, ".9g") for x in vr[k]]
                       + [format(x, ".9g") for x in res.area_stalled[k]]
                       + [format(x, ".9g") for x in res.area_theta[k]])


def cmd_monitor(args) -> int:
    from fidvr import monitor, simulation

    run = Run(args)
    subs = _load_submodels(run, args.submodels)
    p = run.input(args.csv)
    try:
        frames = simulation.read_mupmu_csv(p)
    except (ValueError, KeyError) as exc:
        raise InputError(f"{p}: {exc}") from None
    run.lap("load")
    try:
        rep = monitor.monitor_report(frames, subs)
    except monitor.NotEnoughDataError as exc:
        raise InputError(str(exc)) from None
    run.lap("monitor")
    rep["manifest"] = "manifest.json"
    run.output(_write_json(run.out / "monitor_report.json", rep))
    run.manifest()
    return EXIT_OK


def cmd_mitigate(args) -> int:
    from fidvr import mitigation

    run = Run(args)
    rep = _read_json(run.input(args.report), "monitor_report")
    net = _load_net(run, args.network)
    subs = _load_submodels(run, args.submodels)
    run.lap("load")
    if rep.get("event") is None:
        raise InputError(f"{args.report}: report contains no FIDVR event")
    try:
        doc, plan = mitigation.mitigate(rep, net, subs, t_criterion=args.t_max, v_recovery=args.v_rec,
                                        use_pv=not args.no_pv, ac_cap_frac=args.ac_cap, c_ac=args.c_ac,
                                        c_pv=args.c_pv)
    except (grid.SingularJacobianError, grid.PowerFlowDivergedError) as exc:
        raise NumericalError(str(exc)) from None
    run.lap("mitigate")
    doc["manifest"] = "manifest.json"
    run.output(_write_json(run.out / "plan.json", doc))
    run.manifest()
    if plan.status != "optimal":
        log.error("no plan meets the requirement; max achievable change per area: %s", plan.max_achievable_dt)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_validate(args) -> int:
    from fidvr import validation

    run = Run(args)
    suite = _read_json(run.input(args.suite), "suite")
    net = _load_net(run, args.network)
    areas = _load_areas(run, args.areas)
    subs = _load_submodels(run, args.submodels)
    cfg = validation.sim_config(suite.get("sim"), args.seed)
    args.seed = cfg.seed
    run.lap("load")
    report = validation.run_suite(suite, validation.Context(net, areas, subs, cfg))
    run.lap("validate")
    plots = report.pop("plots")
    report["manifest"] = "manifest.json"
    run.output(_write_json(run.out / "validation_report.json", report))
    _table_csv(run, "table_recovery.csv", report["scenarios"],
               ["name", "actual_t_total_s", "estimated_t_total_s", "abs_error_pct"])
    _table_csv(run, "table_control.csv", report["control"],
               ["name", "kind", "shed_kw", "pv_kvar", "predicted_dt_s", "resimulated_dt_s"])
    for name, tr in plots.items():
        path = run.output(run.out / f"plot_voltage_{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            keys = list(tr["v"])
            w.writerow(["t_s"] + [f"v_{k}_pu" for k in keys])
            for k, t in enumerate(tr["t"]):
                w.writerow([format(t, ".6g")] + [format(tr["v"][c][k], ".6g") for c in keys])
    run.manifest()
    return EXIT_OK


def _table_csv(run, name, rows, cols):
    path = run.output(run.out / name)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (format(r[c], ".6g") if isinstance(r.get(c), float) else r[c])
                        for c in cols])


def cmd_fit(args) -> int:
    from fidvr import rdsm

    run = Run(args)
    net = _load_net(run, args.network)
    areas = _load_areas(run, args.areas)
    sweep = _read_json(run.input(args.sweep), "sweep")
    if args.seed is None:
        args.seed = sweep.get("seed", 0)
    run.lap("load")
    models, report, failures = rdsm.run_fit(net, areas, sweep, jobs=args.jobs, seed=args.seed)
    run.lap("fit")
    if models:
        out = run.output(run.out / "submodels.json")
        rdsm.save_submodels(models, out, _clean(report))
    report["manifest"] = "manifest.json"
    run.output(_write_json(run.out / "fit_report.json", report))
    run.manifest()
    if failures:
        for a, msg in failures.items():
            log.error("fit failed for %s: %s", a, msg)
        return EXIT_INFEASIBLE
    return EXIT_OK


# --------------------------------------------------------------------------


def _env(name, default, cast=str):
    v = os.environ.get(ENV_PREFIX + name)
    return default if v is None else cast(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fidvr", description="FIDVR simulation, monitoring, mitigation and fitting")
    p.add_argument("--seed", type=int, default=_env("SEED", None, int), help="override the document seed")
    p.add_argument("--jobs", type=int, default=_env("JOBS", os.cpu_count() or 1, int), help="worker processes")
    p.add_argument("--out-dir", default=_env("OUT_DIR", "."), help="directory for outputs")
    p.add_argument("--log-level", default=_env("LOG_LEVEL", "WARNING"))
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim", help="simulate a fault scenario and emit a μPMU stream")
    s.add_argument("scenario")
    s.add_argument("--network")
    s.add_argument("--areas")
    s.add_argument("--rate", type=float, default=None, help="μPMU reporting rate, Hz")
    s.set_defaults(func=cmd_sim)

    s = sub.add_parser("monitor", help="detect FIDVR and estimate recovery time from a μPMU CSV")
    s.add_argument("csv")
    s.add_argument("--submodels")
    s.set_defaults(func=cmd_monitor)

    s = sub.add_parser("mitigate", help="minimal A/C shedding and PV-Q plan for a monitor report")
    s.add_argument("report")
    s.add_argument("--network")
    s.add_argument("--submodels")
    s.add_argument("--v-rec", type=float, default=0.95)
    s.add_argument("--t-max", type=float, default=10.0, help="recovery-time criterion, s")
    s.add_argument("--no-pv", action="store_true", help="do not use PV reactive injection")
    s.add_argument("--ac-cap", type=float, default=0.5, help="max A/C fraction shed per area")
    s.add_argument("--c-ac", type=float, default=1.0)
    s.add_argument("--c-pv", type=float, default=0.01)
    s.set_defaults(func=cmd_mitigate)

    s = sub.add_parser("validate", help="run a closed-loop scenario suite")
    s.add_argument("suite")
    s.add_argument("--network")
    s.add_argument("--areas")
    s.add_argument("--submodels")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("fit", help="generate surrogate data and fit the reduced model")
    s.add_argument("sweep")
    s.add_argument("--network")
    s.add_argument("--areas")
    s.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    from fidvr.rdsm import FitFailedError
    from fidvr.simulation import SimulationError

    try:
        return args.func(args)
    except (InputError, schemas.SchemaError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (NumericalError, SimulationError, grid.PowerFlowDivergedError, grid.SingularJacobianError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (InfeasibleError, FitFailedError) as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
