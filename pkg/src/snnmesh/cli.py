"""Command-line surface: workload generation, compilation, single runs,
oracle verification, experiment sweeps, and summary reporting.

Every failure maps to a distinct nonzero exit code with one machine-parsable
stderr line of the form ``snnmesh: error[<name>] <message>``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import metrics
from .compiler import (
    Capacity,
    CompileError,
    compile_network,
    exchange_with_core0,
    load_program,
    partition,
    save_program,
)
from .engine import ConfigError, DeadlockError, SimConfig, parse_grid, run
from .metrics import MetricsError
from .model import (
    WorkloadError,
    gen_layered,
    gen_synthetic,
    load_workload,
    rate_knobs_for_level,
    reference_run,
    save_workload,
)
from .noc import NocError

EXIT_OK = 0
EXIT_USAGE = 2          # argparse's own convention
EXIT_MISSING_FILE = 3
EXIT_BAD_INPUT = 4
EXIT_COMPILE = 5
EXIT_VERIFY_MISMATCH = 6
EXIT_DEADLOCK = 7
EXIT_IO = 8

ENV_PREFIX = "SNNMESH_"

_BOOL_FIELDS = {"trace", "debug"}
_INT_FIELDS = {"m", "P", "n_vc", "cycles_per_hop", "c_update", "c_spike",
               "inter_cluster_slowdown", "cluster_size", "seed", "t_max",
               "fifo_depth"}


def _fail(name: str, message: str, code: int) -> int:
    print(f"snnmesh: error[{name}] {message}", file=sys.stderr)
    return code


def _atomic_json(path: str, doc) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def env_overrides(environ=None) -> dict:
    """SimConfig keys taken from SNNMESH_<KEY> environment variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for field in SimConfig.__dataclass_fields__:
        raw = environ.get(ENV_PREFIX + field.upper())
        if raw is None:
            continue
        if field == "grid":
            out[field] = parse_grid(raw)
        elif field in _BOOL_FIELDS:
            out[field] = raw.lower() in ("1", "true", "yes")
        elif field in _INT_FIELDS:
            out[field] = int(raw)
        elif field == "energy_costs":
            out[field] = json.loads(raw)
        else:
            out[field] = raw
    return out


def build_config(args, extra: dict | None = None) -> SimConfig:
    """Defaults, then config file, then environment, then CLI flags."""
    doc: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            doc.update(json.load(f))
    doc.update(env_overrides())
    flag_map = {
        "mode": getattr(args, "mode", None),
        "m": getattr(args, "m", None),
        "n_vc": getattr(args, "vc", None),
        "seed": getattr(args, "seed", None),
        "t_max": getattr(args, "t_max", None),
        "P": getattr(args, "period", None),
        "c_update": getattr(args, "c_update", None),
        "c_spike": getattr(args, "c_spike", None),
        "inter_cluster_slowdown": getattr(args, "inter_cluster_slowdown", None),
        "cycles_per_hop": getattr(args, "cycles_per_hop", None),
    }
    if getattr(args, "grid", None):
        flag_map["grid"] = parse_grid(args.grid)
    if getattr(args, "trace_file", None):
        flag_map["trace"] = True
    if getattr(args, "debug", False):
        flag_map["debug"] = True
    for k, v in flag_map.items():
        if v is not None:
            doc[k] = v
    if extra:
        doc.update(extra)
    return SimConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.kind == "synthetic":
        knobs = rate_knobs_for_level(args.rate) if args.rate is not None else None
        net = gen_synthetic(
            args.neurons, args.synapses, frac_inhibitory=args.frac_inhibitory,
            rate_knobs=knobs, seed=args.seed or 0, t_max=args.t_max,
            max_delay=args.max_delay, input_rate=args.input_rate,
        )
    else:
        layers = [int(x) for x in args.layers.split(",")]
        net = gen_layered(layers, fanin=args.fanin, seed=args.seed or 0,
                          t_max=args.t_max, max_delay=args.max_delay)
    save_workload(net, args.out)
    print(f"wrote {args.out}: {net.n_neurons} neurons, "
          f"{len(net.synapses)} synapses, t_max={net.t_max}")
    return EXIT_OK


def _compile_from_args(net, args):
    grid = parse_grid(args.grid)
    capacity = Capacity(max_neurons=args.max_neurons_per_core,
                        max_synapses=args.max_synapses_per_core)
    assignment = None
    if args.exchange_frac:
        n_cores = args.cores or grid[0] * grid[1]
        cores = partition(net, n_cores, capacity)
        base = [0] * net.n_neurons
        for c in cores:
            for nid in c.neuron_ids:
                base[nid] = c.id
        assignment = exchange_with_core0(net, base, args.exchange_frac,
                                         seed=args.exchange_seed)
    return compile_network(net, grid, mapping=args.mapping, capacity=capacity,
                           n_cores=args.cores, assignment=assignment)


def cmd_compile(args) -> int:
    net = load_workload(args.workload)
    prog = _compile_from_args(net, args)
    save_program(prog, args.out)
    print(f"wrote {args.out}: {prog.n_cores} cores on "
          f"{prog.grid[0]}x{prog.grid[1]} grid, mapping={args.mapping}")
    return EXIT_OK


def cmd_run(args) -> int:
    prog = load_program(args.program)
    cfg = build_config(args)
    report = run(prog, cfg)
    metrics.check_report(report)
    _atomic_json(args.out, report.to_dict())
    if args.trace_file:
        metrics.export_trace_csv(report, args.trace_file)
    print(f"mode={report.mode} total_cycles={report.total_cycles} "
          f"spikes={len(report.raster)} energy={report.energy['total']:.1f}")
    return EXIT_OK


def verify_workload(net, grid: tuple[int, int], base_cfg: SimConfig,
                    mapping: str = "plain", keep_reports: bool = False):
    """Run the reference interpreter and all three modes; returns
    (ok, details dict). The workhorse behind ``snnmesh verify``."""
    ref = reference_run(net)
    if base_cfg.t_max is not None and base_cfg.t_max < net.t_max:
        # an overridden horizon truncates the comparison on both sides
        horizon = base_cfg.t_max
        ref = ref.__class__(
            [(n, t) for n, t in ref if t < horizon], t_max=net.t_max
        )
    prog = compile_network(net, grid, mapping=mapping)
    details = {"reference_spikes": len(ref), "modes": {}, "reference": ref}
    if keep_reports:
        details["reports"] = {}
    ok = True
    for mode in ("sync", "se", "depasync"):
        cfg = SimConfig.from_dict({**base_cfg.to_dict(), "mode": mode,
                                   "grid": list(grid)})
        rep = run(prog, cfg)
        got = ref.__class__(rep.raster, t_max=net.t_max)
        divergence = ref.first_divergence(got)
        details["modes"][mode] = {
            "total_cycles": rep.total_cycles,
            "spikes": len(rep.raster),
            "violations": rep.violations,
            "match": divergence is None,
            "first_divergence": divergence,
        }
        if keep_reports:
            details["reports"][mode] = rep
        if divergence is not None or rep.violations:
            ok = False
    return ok, details


def cmd_verify(args) -> int:
    net = load_workload(args.workload)
    cfg = build_config(args)
    ok, details = verify_workload(net, cfg.grid, cfg)
    for mode, info in details["modes"].items():
        status = "ok" if info["match"] else f"MISMATCH at {info['first_divergence']}"
        print(f"{mode}: cycles={info['total_cycles']} spikes={info['spikes']} "
              f"{status}")
    if not ok:
        first = next(info["first_divergence"]
                     for info in details["modes"].values()
                     if info["first_divergence"] is not None)
        return _fail("verify-mismatch",
                     f"raster diverges at (neuron, timestep)={tuple(first)}",
                     EXIT_VERIFY_MISMATCH)
    print("all modes match the reference raster")
    return EXIT_OK


# -- sweep -------------------------------------------------------------------

_AXES = ("m", "vc", "mode", "mapping", "grid", "exchange", "rate")

_RESULT_FIELDS = [
    "axis", "value", "mode", "seed", "rep", "total_cycles", "busy", "wait",
    "rollback_cycles", "rollbacks", "energy_total", "neuron_updates",
    "noc_hops", "blocked_spike", "spikes", "raster_sha256",
]


def _raster_hash(raster) -> str:
    blob = json.dumps([list(p) for p in raster]).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _run_task(task):
    prog, cfg_doc, meta = task
    report = run(prog, SimConfig.from_dict(cfg_doc))
    row = dict(meta)
    row.update({
        "total_cycles": report.total_cycles,
        "busy": sum(c["busy"] for c in report.cores),
        "wait": sum(c["wait"] for c in report.cores),
        "rollback_cycles": sum(c["rollback"] for c in report.cores),
        "rollbacks": report.rollbacks,
        "energy_total": report.energy["total"],
        "neuron_updates": report.counts["neuron_updates"],
        "noc_hops": report.counts["noc_hops"],
        "blocked_spike": report.noc["blocked_cycles"]["SPIKE"],
        "spikes": len(report.raster),
        "raster_sha256": _raster_hash(report.raster),
    })
    return row


def _axis_values(axis: str, raw: str):
    vals = raw.split(",")
    if axis in ("m", "vc"):
        return [int(v) for v in vals]
    if axis in ("exchange", "rate"):
        return [float(v) for v in vals]
    return vals


def build_sweep_tasks(args, base_cfg: SimConfig):
    """One task per (axis value, mode, seed, rep); regenerates or recompiles
    the workload when the axis demands it."""
    axis, raw = args.axis.split("=", 1)
    if axis not in _AXES:
        raise ConfigError(f"unknown sweep axis {axis!r} (choose from {_AXES})")
    values = _axis_values(axis, raw)
    if not values:
        raise ConfigError("sweep axis needs at least one value")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base_cfg.seed]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("sweep seeds must be distinct")
    modes = args.modes.split(",") if axis != "mode" else ["-"]

    base_net = load_workload(args.workload) if args.workload else None
    grid = base_cfg.grid

    tasks = []
    for value in values:
        for seed in seeds:
            net = base_net
            if axis == "rate":
                if args.neurons is None or args.synapses is None:
                    raise ConfigError(
                        "rate sweeps need --neurons and --synapses to regenerate"
                    )
                net = gen_synthetic(args.neurons, args.synapses,
                                    rate_knobs=rate_knobs_for_level(value),
                                    seed=seed, t_max=args.t_max)
            if net is None:
                raise ConfigError("sweep needs --workload (or a rate axis)")
            point_grid = parse_grid(value) if axis == "grid" else grid
            mapping = value if axis == "mapping" else args.mapping
            assignment = None
            if axis == "exchange" and value > 0:
                cores = partition(net, point_grid[0] * point_grid[1])
                base = [0] * net.n_neurons
                for c in cores:
                    for nid in c.neuron_ids:
                        base[nid] = c.id
                assignment = exchange_with_core0(net, base, value, seed=seed)
            prog = compile_network(net, point_grid, mapping=mapping,
                                   assignment=assignment)
            for mode in modes:
                for rep_i in range(args.reps):
                    cfg_doc = {**base_cfg.to_dict(), "seed": seed,
                               "grid": list(point_grid)}
                    if axis == "m":
                        cfg_doc["m"] = value
                    elif axis == "vc":
                        cfg_doc["n_vc"] = value
                    elif axis == "mode":
                        cfg_doc["mode"] = value
                    if mode != "-":
                        cfg_doc["mode"] = mode
                    meta = {"axis": axis, "value": value,
                            "mode": cfg_doc["mode"], "seed": seed, "rep": rep_i}
                    tasks.append((prog, cfg_doc, meta))
    return tasks


def cmd_sweep(args) -> int:
    base_cfg = build_config(args)
    tasks = build_sweep_tasks(args, base_cfg)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_task, tasks))
    else:
        rows = [_run_task(t) for t in tasks]
    tmp = f"{args.out}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=_RESULT_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    os.replace(tmp, args.out)
    print(f"wrote {args.out}: {len(rows)} rows")
    return EXIT_OK


def _harmonic_mean(values):
    vals = [v for v in values if v > 0]
    if not vals:
        return 0.0
    return len(vals) / sum(1.0 / v for v in vals)


def summarize_results(rows: list[dict]) -> dict:
    """Per (axis value, mode): harmonic-mean speedup and energy efficiency
    against the barrier baseline with the same (value, seed)."""
    baseline = {}
    for r in rows:
        if r["mode"] == "sync":
            baseline[(r["axis"], r["value"], r["seed"], r["rep"])] = r
    summary: dict = {}
    for r in rows:
        key = (r["axis"], str(r["value"]), r["mode"])
        base = baseline.get((r["axis"], r["value"], r["seed"], r["rep"]))
        cell = summary.setdefault(
            "|".join(key),
            {"axis": r["axis"], "value": r["value"], "mode": r["mode"],
             "runs": 0, "total_cycles": [], "speedup": [],
             "energy_efficiency": [], "rollback_share": []},
        )
        cell["runs"] += 1
        cell["total_cycles"].append(int(r["total_cycles"]))
        total = int(r["total_cycles"]) * 1.0
        cell["rollback_share"].append(
            float(r["rollback_cycles"]) / max(1.0, float(r["busy"])
                                              + float(r["wait"])
                                              + float(r["rollback_cycles"]))
        )
        if base is not None and base is not r:
            cell["speedup"].append(float(base["total_cycles"]) / max(1.0, total))
            cell["energy_efficiency"].append(
                float(base["energy_total"]) / max(1e-12, float(r["energy_total"]))
            )
    out = {}
    for key, cell in sorted(summary.items()):
        out[key] = {
            "axis": cell["axis"], "value": cell["value"], "mode": cell["mode"],
            "runs": cell["runs"],
            "mean_cycles": sum(cell["total_cycles"]) / cell["runs"],
            "harmonic_speedup": _harmonic_mean(cell["speedup"]),
            "harmonic_energy_efficiency": _harmonic_mean(cell["energy_efficiency"]),
            "mean_rollback_share": sum(cell["rollback_share"]) / cell["runs"],
        }
    return out


def cmd_report(args) -> int:
    with open(args.results, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return _fail("empty-results", f"{args.results} holds no rows",
                     EXIT_BAD_INPUT)
    for r in rows:
        r["value"] = _coerce(r["value"])
        r["seed"] = int(r["seed"])
        r["rep"] = int(r["rep"])
    summary = summarize_results(rows)
    header = f"{'axis':9s} {'value':>8s} {'mode':9s} {'cycles':>12s} " \
             f"{'speedup':>8s} {'energy_eff':>10s} {'rb_share':>8s}"
    print(header)
    for cell in summary.values():
        print(f"{cell['axis']:9s} {str(cell['value']):>8s} {cell['mode']:9s} "
              f"{cell['mean_cycles']:12.1f} {cell['harmonic_speedup']:8.3f} "
              f"{cell['harmonic_energy_efficiency']:10.3f} "
              f"{cell['mean_rollback_share']:8.3f}")
    if args.out:
        _atomic_json(args.out, summary)
    return EXIT_OK


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with simulator config keys")
    p.add_argument("--mode", choices=["sync", "se", "depasync"])
    p.add_argument("--m", type=int, help="spike buffer window (timesteps)")
    p.add_argument("--vc", type=int, help="number of data virtual channels")
    p.add_argument("--grid", help="mesh size, e.g. 4x4")
    p.add_argument("--seed", type=int)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--period", type=int, help="speculative sync period P")
    p.add_argument("--c-update", dest="c_update", type=int)
    p.add_argument("--c-spike", dest="c_spike", type=int)
    p.add_argument("--cycles-per-hop", dest="cycles_per_hop", type=int)
    p.add_argument("--inter-cluster-slowdown", dest="inter_cluster_slowdown",
                   type=int)
    p.add_argument("--debug", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snnmesh",
        description="Cycle-accurate many-core SNN accelerator simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a workload file")
    g.add_argument("--kind", choices=["synthetic", "layered"], required=True)
    g.add_argument("--neurons", type=int, default=1000)
    g.add_argument("--synapses", type=int, default=50000)
    g.add_argument("--rate", type=float, help="firing-rate level in [0,1]")
    g.add_argument("--frac-inhibitory", type=float, default=0.2)
    g.add_argument("--input-rate", type=float, default=0.05)
    g.add_argument("--layers", default="100,100")
    g.add_argument("--fanin", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--t-max", dest="t_max", type=int, default=100)
    g.add_argument("--max-delay", type=int, default=2)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("compile", help="compile a workload onto the mesh")
    c.add_argument("--workload", required=True)
    c.add_argument("--grid", default="4x4")
    c.add_argument("--mapping", choices=["plain", "hilbert"], default="plain")
    c.add_argument("--cores", type=int, help="logic cores (default: all cells)")
    c.add_argument("--max-neurons-per-core", type=int, default=4096)
    c.add_argument("--max-synapses-per-core", type=int, default=262144)
    c.add_argument("--exchange-frac", type=float, default=0.0,
                   help="swap this fraction of core 0's neurons outward "
                        "(manufactures dependency cycles)")
    c.add_argument("--exchange-seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", help="run one simulation")
    r.add_argument("--program", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--trace", dest="trace_file",
                   help="also write the timeline trace CSV here")
    _add_config_flags(r)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify",
                       help="check all modes against the reference raster")
    v.add_argument("--workload", required=True)
    _add_config_flags(v)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="run an experiment sweep")
    s.add_argument("--workload")
    s.add_argument("--axis", required=True, help="e.g. m=2,4,8,16")
    s.add_argument("--modes", default="sync,se,depasync")
    s.add_argument("--seeds", help="comma-separated distinct seeds")
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--mapping", choices=["plain", "hilbert"], default="plain")
    s.add_argument("--neurons", type=int, help="for rate sweeps")
    s.add_argument("--synapses", type=int, help="for rate sweeps")
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("report", help="summarize sweep results")
    rp.add_argument("--results", required=True)
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail("missing-file", str(exc), EXIT_MISSING_FILE)
    except (WorkloadError, ConfigError, MetricsError, NocError,
            json.JSONDecodeError) as exc:
        return _fail("bad-input", str(exc), EXIT_BAD_INPUT)
    except CompileError as exc:
        return _fail("compile", str(exc), EXIT_COMPILE)
    except DeadlockError as exc:
        return _fail("deadlock", str(exc), EXIT_DEADLOCK)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
