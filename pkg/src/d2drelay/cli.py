"""Command-line entry point: ``d2drelay {generate,communities,graph,solve,run}``.

Exit codes: 0 success, 2 validation or input error, 3 no feasible path
(``solve``), 4 internal or numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import __version__
from . import rpf as solver
from .community import dcd, dcd_oracle
from .config import ConfigError, ExperimentConfig, load_config
from .mobility import TraceFormatError, extract_encounters, generate_trace, load_trace, save_trace
from .relaygraph import assemble, cellular_users, load_relay_graph_csv, social_context
from .channel import FadingField
from .sim import METHODS, run_experiment, write_results_csv
from .social import build_contact_graph, nominal_transfer_time

EXIT_OK, EXIT_INVALID, EXIT_NO_PATH, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _header(cfg: ExperimentConfig, command: str) -> list[str]:
    return [f"d2drelay {__version__} {command} config_hash={cfg.config_hash()} seed={cfg.seed}"]


def _config(args, **overrides) -> ExperimentConfig:
    extra = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        extra[k.strip()] = v.strip()
    return load_config(args.config, args.config_json, {**extra, **overrides})


def _out_path(path: str | None, default: Path) -> Path:
    p = Path(path) if path else default
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _parse_tmax(spec: str | None) -> list[float] | None:
    """``100``, ``10,50,100`` or ``10..120`` (step 10) or ``10..120:5``."""
    if not spec:
        return None
    try:
        if ".." in spec:
            rng, _, step = spec.partition(":")
            lo, hi = (float(x) for x in rng.split(".."))
            step = float(step) if step else 10.0
            if step <= 0 or hi < lo:
                raise ValueError
            vals, v = [], lo
            while v <= hi + 1e-9:
                vals.append(round(v, 9))
                v += step
            return vals
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --tmax value {spec!r}") from None


def _contact_and_communities(cfg: ExperimentConfig, trace, window, b):
    st = cfg.sim
    hist = extract_encounters(trace, st.channel.d_max, window)
    gp = build_contact_graph(hist, nominal_transfer_time(b, st.channel), st.social, span=window[1] - window[0])
    return gp


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _config(args, seed=args.seed, n_devices=args.n)
    st = cfg.sim
    if st.n_devices < 2:
        raise UsageError("--n must be at least 2")
    if args.hours is not None and args.hours <= 0:
        raise UsageError("--hours must be > 0")
    hours = args.hours if args.hours is not None else st.mining_hours + st.replay_hours
    trace = generate_trace(cfg.seed, st.n_devices, st.arena, hours * 3600.0, st.mobility)
    out = _out_path(args.out, Path(cfg.output_dir) / f"trace_seed{cfg.seed}.csv")
    save_trace(trace, out, _header(cfg, "generate"))
    print(out)
    return EXIT_OK


def cmd_communities(args) -> int:
    cfg = _config(args)
    trace = load_trace(args.trace)
    hours = args.hours if args.hours is not None else cfg.sim.mining_hours
    window = (trace.t0, min(trace.t_end, trace.t0 + hours * 3600.0))
    gp = _contact_and_communities(cfg, trace, window, args.content_bits)
    if args.oracle:
        comms = dcd_oracle(gp, max_nodes=args.oracle_max_nodes)
    else:
        comms = dcd(gp, cfg.seed, perturbations=cfg.sim.dcd_perturbations)
    out = _out_path(args.out, Path(cfg.output_dir) / "communities.csv")
    comms.dump_csv(out, _header(cfg, "communities"))
    print(f"k={comms.k} R={comms.objective:.9f} -> {out}")
    return EXIT_OK


def cmd_graph(args) -> int:
    cfg = _config(args)
    st = cfg.sim
    trace = load_trace(args.trace)
    t = args.t if args.t is not None else trace.t_end - trace.tick_duration
    hours = args.hours if args.hours is not None else st.mining_hours
    window = (trace.t0, min(t, trace.t0 + hours * 3600.0))
    if window[1] <= window[0]:
        gp = comms = None
    else:
        gp = _contact_and_communities(cfg, trace, window, args.content_bits)
        comms = dcd(gp, cfg.seed, perturbations=st.dcd_perturbations)
    for node in (args.s, args.r):
        trace.index_of(node)
    fading = FadingField(cfg.seed * 100_003, st.channel)
    cues = cellular_users(cfg.seed, st.relay.n_cellular, trace.arena)
    ctx = social_context(comms, gp, st.relay) if comms is not None else None
    graph = assemble(trace, t, args.s, args.r, args.content_bits, args.tmax or st.t_max, comms, gp,
                     st.channel, st.relay, fading, cues, ctx)
    out = _out_path(args.out, Path(cfg.output_dir) / "relay_graph.csv")
    graph.dump_csv(out, _header(cfg, "graph"))
    print(f"{len(graph.edges)} edges -> {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    graph = load_relay_graph_csv(args.graph, args.s, args.r, args.tmax)
    trace_fh = open(args.trace_out, "w", encoding="utf-8") if args.trace_out else None
    try:
        try:
            path = solver.rpf(graph, cut_mode=args.cut_mode, trace=trace_fh)
        except solver.NoFeasiblePath as exc:
            print(f"NoFeasiblePath: {exc}")
            if args.oracle:
                try:
                    solver.rpf_oracle(graph, args.oracle_max_nodes)
                    print("oracle: DISAGREE (oracle found a path)")
                    return EXIT_INTERNAL
                except solver.NoFeasiblePath:
                    print("oracle: AGREE")
            return EXIT_NO_PATH
    finally:
        if trace_fh:
            trace_fh.close()
    print("path: " + ",".join(str(v) for v in path.nodes))
    print(f"weight={path.total_weight!r} delay={path.total_delay!r} cost={path.total_bs_cost!r}")
    if args.oracle:
        ref = solver.rpf_oracle(graph, args.oracle_max_nodes)
        same = abs(ref.total_weight - path.total_weight) <= 1e-9 * max(1.0, abs(ref.total_weight))
        print(f"oracle: {'AGREE' if same else 'DISAGREE'} (oracle weight={ref.total_weight!r})")
        if not same:
            return EXIT_INTERNAL
    return EXIT_OK


SUMMARY_COLUMNS = ["t_max", "content_bits", "method", "sessions", "delivered", "delivery_rate",
                   "delivery_rate_se", "active_b2d_links", "active_b2d_links_se", "total_bs_cost"]


def cmd_run(args) -> int:
    overrides = {}
    if args.method:
        overrides["methods"] = args.method
    if args.seeds is not None:
        overrides["n_seeds"] = args.seeds
    if args.n is not None:
        overrides["n_devices"] = args.n
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.out:
        overrides["output_dir"] = args.out
    cfg = _config(args, **overrides)
    tmaxes = _parse_tmax(args.tmax) or [cfg.sim.t_max]
    jobs = cfg.jobs or os.cpu_count() or 1
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = _header(cfg, "run")
    summary_rows = []
    reports = {}
    for tm in tmaxes:
        st = dataclasses.replace(cfg.sim, t_max=tm)
        records, report = run_experiment(st, cfg.seeds, jobs)
        name = "results.csv" if len(tmaxes) == 1 else f"results_tmax{tm:g}.csv"
        write_results_csv(records, out_dir / name, header + [f"t_max={tm!r}"])
        reports[f"{tm:g}"] = json.loads(report.to_json())
        for b, per in report.per_size.items():
            for m, s in per.items():
                summary_rows.append([repr(tm), repr(b), m, s.sessions, s.delivered, repr(s.delivery_rate),
                                     repr(s.delivery_rate_se), repr(s.active_b2d_links),
                                     repr(s.active_b2d_links_se), repr(s.total_bs_cost)])
                print(f"t_max={tm:g} b={b:g} {m}: delivery={s.delivery_rate:.3f} b2d={s.active_b2d_links:.2f}")
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {header[0]}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SUMMARY_COLUMNS)
        wr.writerows(summary_rows)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump({"config_hash": cfg.config_hash(), "config": cfg.as_flat(), "seeds": cfg.seeds,
                   "reports": reports}, fh, indent=2, sort_keys=True, default=repr)
        fh.write("\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _method_list(text: str) -> str:
    items = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in items if m not in METHODS]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}")
    return ",".join(items)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--config-json", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = argparse.ArgumentParser(prog="d2drelay", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic mobility trace")
    g.add_argument("--seed", type=int)
    g.add_argument("--n", type=int, help="number of devices")
    g.add_argument("--hours", type=float)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("communities", parents=[common], help="mine durable communities from a trace")
    c.add_argument("--trace", required=True)
    c.add_argument("--hours", type=float, help="mining window length from the start of the trace")
    c.add_argument("--content-bits", type=float, default=1.2e6)
    c.add_argument("--oracle", action="store_true", help="exhaustive optimum instead of the greedy")
    c.add_argument("--oracle-max-nodes", type=int, default=10)
    c.add_argument("--out")
    c.set_defaults(func=cmd_communities)

    gr = sub.add_parser("graph", parents=[common], help="dump the relay graph at one instant")
    gr.add_argument("--trace", required=True)
    gr.add_argument("--t", type=float)
    gr.add_argument("--s", type=int, required=True)
    gr.add_argument("--r", type=int, required=True)
    gr.add_argument("--content-bits", type=float, default=1.2e6)
    gr.add_argument("--tmax", type=float)
    gr.add_argument("--hours", type=float)
    gr.add_argument("--out")
    gr.set_defaults(func=cmd_graph)

    s = sub.add_parser("solve", help="least-weight delay-bounded path on a relay graph dump")
    s.add_argument("graph")
    s.add_argument("--s", type=int)
    s.add_argument("--r", type=int)
    s.add_argument("--tmax", type=float)
    s.add_argument("--cut-mode", default="partition", choices=["partition", "combinatorial", "epsilon"])
    s.add_argument("--oracle", action="store_true", help="cross-check against path enumeration")
    s.add_argument("--oracle-max-nodes", type=int, default=40)
    s.add_argument("--trace-out", help="write the solver trace as JSON lines")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("run", parents=[common], help="replay sessions and write results")
    r.add_argument("--method", type=_method_list)
    r.add_argument("--tmax", help="single value, comma list, or LO..HI[:STEP]")
    r.add_argument("--seeds", type=int, help="number of seeds")
    r.add_argument("--n", type=int, help="number of devices")
    r.add_argument("--jobs", type=int)
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, UsageError, TraceFormatError, KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (solver.CappedSearchError, solver.FlowConsistencyError, ArithmeticError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
