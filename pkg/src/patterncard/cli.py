"""Command line: analyze, gen-dataset, gen-workload, simulate, report.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .baseline import analyze, save_stats
from .oracle import load_csv_dir
from .querygraph import Schema
from .simulate import (
    ConfigError, RunConfig, SimulationError, emit_reports, read_replay_csv,
    run_simulation, summarize,
)
from .workload import (
    WorkloadSpec, builtin_workload_spec, generate_workload, make_correlated_dataset, write_sql,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _dataset(args):
    if args.tables:
        if not args.schema:
            raise ConfigError("--tables needs --schema")
        return load_csv_dir(args.tables, Schema.load(args.schema))
    return make_correlated_dataset(seed=args.seed)


def cmd_analyze(args) -> int:
    stats = analyze(_dataset(args), args.buckets, args.mcv)
    save_stats(stats, args.out)
    print(f"analyzed {len(stats)} tables -> {args.out}")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    data = make_correlated_dataset(seed=args.seed, strength=args.strength, skew=args.skew)
    data.save_csv(args.out)
    data.schema().save(os.path.join(args.out, "schema.json"))
    print(f"wrote {len(data.tables)} tables and schema.json to {args.out}")
    return EXIT_OK


def cmd_gen_workload(args) -> int:
    if args.spec:
        spec = WorkloadSpec.load(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
    else:
        spec = builtin_workload_spec(args.templates, args.per_template, args.seed or 0)
    if args.dump_spec:
        spec.save(args.dump_spec)
    queries = generate_workload(spec)
    write_sql(queries, args.out)
    print(f"wrote {len(queries)} queries to {args.out}")
    return EXIT_OK


def _run_config(args) -> RunConfig:
    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
    for key, val in (("schema_path", args.schema), ("tables_dir", args.tables),
                     ("workload_path", args.workload), ("out_dir", args.out),
                     ("seed", args.seed), ("max_queries", args.max_queries)):
        if val is not None:
            d[key] = val
    if args.replay_timings:
        d["replay_timings"] = True
    return RunConfig.from_dict(d)


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    if args.print_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    if not cfg.out_dir:
        raise ConfigError("--out is required")

    def progress(done, total):
        if done % 500 == 0 or done == total:
            print(f"  {done}/{total} queries", file=sys.stderr)
    result = run_simulation(cfg, progress=None if args.quiet else progress)
    paths = emit_reports(result, cfg.out_dir)
    _print_summary(result.summary)
    print(f"overhead {result.timings['overhead_seconds']:.2f} s, "
          f"mean estimate {result.timings['mean_estimate_us']:.0f} us")
    print("reports: " + ", ".join(paths.values()))
    return EXIT_OK


def _print_summary(summary: dict) -> None:
    for block in ("all", "after_warmup"):
        print(f"[{block}]")
        for est in ("learned", "heuristic"):
            s = summary[block][est]
            p = s["percentiles"]
            if p:
                print(f"  {est:9s} n={s['count']:6d}  p50={p['p50']:.3f}  p90={p['p90']:.3f}  p95={p['p95']:.3f}")
            else:
                print(f"  {est:9s} n=0")


def cmd_report(args) -> int:
    replay = os.path.join(args.run, "replay.csv")
    if not os.path.exists(replay):
        raise ConfigError(f"{replay} not found")
    log = read_replay_csv(replay)
    warmup = args.warmup
    if warmup is None:
        summ_path = os.path.join(args.run, "summary.json")
        warmup = 0
        if os.path.exists(summ_path):
            with open(summ_path) as fh:
                warmup = json.load(fh).get("warmup_queries", 0)
    summary = summarize(log, warmup)
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        _print_summary(summary)
        print("provenance:", summary["provenance_counts"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patterncard",
                                description="Pattern-keyed online cardinality estimation simulator")
    sub = p.add_subparsers(dest="verb", required=True)

    a = sub.add_parser("analyze", help="build histogram statistics")
    a.add_argument("--schema")
    a.add_argument("--tables", help="directory of <table>.csv files; synthetic data if omitted")
    a.add_argument("--out", required=True)
    a.add_argument("--buckets", type=int, default=100)
    a.add_argument("--mcv", type=int, default=10)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(fn=cmd_analyze)

    d = sub.add_parser("gen-dataset", help="write the synthetic correlated tables as CSV")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--strength", type=float, default=0.9)
    d.add_argument("--skew", type=float, default=1.2)
    d.set_defaults(fn=cmd_gen_dataset)

    g = sub.add_parser("gen-workload", help="instantiate query templates")
    g.add_argument("--spec", help="workload spec JSON; built-in templates if omitted")
    g.add_argument("--templates", type=int, default=40)
    g.add_argument("--per-template", type=int, default=125)
    g.add_argument("--seed", type=int)
    g.add_argument("--dump-spec", help="also write the spec used as JSON")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_workload)

    s = sub.add_parser("simulate", help="replay a workload with online learning")
    s.add_argument("--schema")
    s.add_argument("--tables")
    s.add_argument("--workload")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--max-queries", type=int)
    s.add_argument("--replay-timings", action="store_true",
                   help="fill est_us/obs_us in replay.csv (makes it run-dependent)")
    s.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_simulate)

    r = sub.add_parser("report", help="summarize a finished run from its replay.csv")
    r.add_argument("--run", required=True, help="output directory of simulate")
    r.add_argument("--warmup", type=int)
    r.add_argument("--json", action="store_true")
    r.set_defaults(fn=cmd_report)
    for sp in (a, d, g, r):
        sp.add_argument("--print-config", action="store_true", help="print the effective options and exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_config and args.verb != "simulate":
        opts = {k: v for k, v in vars(args).items() if k not in ("fn", "print_config")}
        print(json.dumps(opts, indent=2, sort_keys=True))
        return EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime abort
        print(f"aborted: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
