"""Workload replay with online learning, Q-error scoring and report files."""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .baseline import HeuristicEstimator, TableStats, analyze, load_stats
from .hierarchy import EstimatorStore, StoreConfig
from .oracle import Dataset, load_csv_dir, true_cardinality
from .querygraph import Schema, enumerate_subqueries, parse_sql, read_sql_file
from .workload import (
    WorkloadSpec, builtin_workload_spec, generate_workload, make_correlated_dataset,
)

PERCENTILES = (50, 90, 95)
REPLAY_COLUMNS = (
    "query_id", "subquery_id", "n_join", "h1", "h2", "h3", "provenance", "estimate", "truth",
    "q_error", "est_us", "obs_us", "heuristic", "heuristic_q_error", "bucket_size",
)


class EmptyInput(ValueError):
    pass


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, message: str, query_id: int, sql: str):
        super().__init__(f"query {query_id} failed: {message}\n  {sql}")
        self.query_id = query_id
        self.sql = sql


def q_error(y: float, yhat: float) -> float:
    """``max(y/yhat, yhat/y)`` with both sides clamped to at least 1."""
    a, b = max(float(y), 1.0), max(float(yhat), 1.0)
    return max(a / b, b / a)


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    if len(values) == 0:
        raise EmptyInput("percentile of an empty sequence")
    if not 0 <= p <= 100:
        raise ValueError("p must lie in [0, 100]")
    s = sorted(values)
    rank = max(math.ceil(p / 100.0 * len(s)), 1)
    return float(s[rank - 1])


@dataclass
class QErrorSummary:
    count: int
    percentiles: dict[str, float]
    by_join: dict[str, dict]
    by_provenance: dict[str, dict]

    @staticmethod
    def _pcts(values) -> dict[str, float]:
        return {f"p{p}": percentile(values, p) for p in PERCENTILES} if len(values) else {}

    @classmethod
    def from_values(cls, qerrors: Sequence[float], n_join: Sequence[int] | None = None,
                    provenance: Sequence[str] | None = None) -> "QErrorSummary":
        def groups(keys):
            out: dict[str, list[float]] = {}
            if keys is None:
                return {}
            for k, q in zip(keys, qerrors):
                out.setdefault(str(k), []).append(q)
            return {k: {"count": len(v), **cls._pcts(v)} for k, v in sorted(out.items())}
        return cls(len(qerrors), cls._pcts(qerrors), groups(n_join), groups(provenance))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "QErrorSummary":
        return cls(int(d["count"]), dict(d["percentiles"]), dict(d["by_join"]), dict(d["by_provenance"]))


@dataclass
class RunConfig:
    """Everything one replay depends on; serialized into every report."""

    seed: int = 0
    schema_path: str | None = None
    tables_dir: str | None = None
    dataset_sizes: dict[str, int] | None = None
    dataset_strength: float = 0.9
    dataset_skew: float = 1.2
    workload_path: str | None = None
    workload_spec_path: str | None = None
    n_templates: int = 40
    queries_per_template: int = 125
    max_queries: int | None = None
    stats_path: str | None = None
    hist_buckets: int = 100
    mcv_size: int = 10
    store: dict = field(default_factory=dict)
    warmup_queries: int = 1000
    checkpoint_every: int = 100
    replay_timings: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if (self.schema_path is None) != (self.tables_dir is None):
            raise ConfigError("schema_path and tables_dir must be given together")
        if self.workload_path and self.workload_spec_path:
            raise ConfigError("give either workload_path or workload_spec_path, not both")
        if self.checkpoint_every < 1 or self.warmup_queries < 0:
            raise ConfigError("checkpoint_every must be >= 1 and warmup_queries >= 0")
        if not 0.0 <= self.dataset_strength <= 1.0:
            raise ConfigError("dataset_strength must lie in [0, 1]")
        try:
            self.store_config()
        except (ValueError, TypeError, KeyError) as e:
            raise ConfigError(f"bad store config: {e!r}") from None

    def store_config(self) -> StoreConfig:
        d = dict(self.store)
        d.setdefault("seed", self.seed)
        return StoreConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["store"] = self.store_config().to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class LogRow:
    query_id: int
    subquery_id: int
    n_join: int
    h1: str
    h2: str
    h3: str
    provenance: str
    estimate: int
    truth: int
    q_error: float
    est_us: float
    obs_us: float
    heuristic: int
    heuristic_q_error: float
    bucket_size: int


@dataclass
class SimulationResult:
    config: RunConfig
    log: list[LogRow]
    summary: dict
    cumulative: list[dict]
    timings: dict


# -- inputs -------------------------------------------------------------------------------


def load_inputs(cfg: RunConfig) -> tuple[Dataset, Schema, list[str]]:
    if cfg.tables_dir:
        schema = Schema.load(cfg.schema_path)
        data = load_csv_dir(cfg.tables_dir, schema)
        schema = data.schema()
    else:
        data = make_correlated_dataset(cfg.dataset_sizes, cfg.dataset_strength, cfg.dataset_skew, cfg.seed)
        schema = data.schema()
    if cfg.workload_path:
        queries = read_sql_file(cfg.workload_path)
    else:
        spec = (WorkloadSpec.load(cfg.workload_spec_path) if cfg.workload_spec_path
                else builtin_workload_spec(cfg.n_templates, cfg.queries_per_template, cfg.seed))
        queries = generate_workload(spec)
    if cfg.max_queries is not None:
        queries = queries[: cfg.max_queries]
    return data, schema, queries


# -- replay ---------------------------------------------------------------------------------


def run_simulation(cfg: RunConfig, data: Dataset | None = None, schema: Schema | None = None,
                   queries: Sequence[str] | None = None,
                   stats: dict[str, TableStats] | None = None,
                   progress: Callable[[int, int], None] | None = None) -> SimulationResult:
    """Replay the workload: estimate every subquery, execute, then learn.

    Per query all subqueries are estimated first (as a planner would),
    then counted exactly, then observed by the store in order.
    """
    if data is None or schema is None or queries is None:
        d, s, q = load_inputs(cfg)
        data, schema, queries = data or d, schema or s, q if queries is None else queries
    t0 = time.perf_counter()
    if stats is None:
        stats = load_stats(cfg.stats_path) if cfg.stats_path else analyze(data, cfg.hist_buckets, cfg.mcv_size)
    analyze_seconds = time.perf_counter() - t0
    heuristic = HeuristicEstimator(stats)
    store = EstimatorStore(cfg.store_config(), schema)

    log: list[LogRow] = []
    cumulative: list[dict] = []
    oracle_s = heuristic_s = 0.0
    for qid, sql in enumerate(queries):
        try:
            dag = parse_sql(sql, schema)
            subs = enumerate_subqueries(dag)
            pending = []
            for sid, sq in enumerate(subs):
                th = time.perf_counter()
                h = heuristic(sq)
                heuristic_s += time.perf_counter() - th
                res = store.estimate(sq, h)
                pending.append((sid, sq, h, res))
            cache: dict = {}
            truths = []
            for _, sq, _, _ in pending:
                to = time.perf_counter()
                truths.append(true_cardinality(sq, data, cache=cache))
                oracle_s += time.perf_counter() - to
            for (sid, sq, h, res), y in zip(pending, truths):
                ob0 = time.perf_counter()
                store.observe(sq, y, signature=res.signature, heuristic_estimate=h)
                obs = time.perf_counter() - ob0
                sig = res.signature
                log.append(LogRow(
                    qid, sid, sig.n_join, sig.hash_hex(1), sig.hash_hex(2), sig.hash_hex(3),
                    res.provenance, res.cardinality, y, q_error(y, res.cardinality),
                    res.latency * 1e6, obs * 1e6, h, q_error(y, h), res.bucket_size,
                ))
        except Exception as e:  # abort with the failing query echoed
            raise SimulationError(f"{type(e).__name__}: {e}", qid, sql) from e
        if progress is not None:
            progress(qid + 1, len(queries))
        if (qid + 1) % cfg.checkpoint_every == 0 or qid + 1 == len(queries):
            cumulative.append(_checkpoint(log, qid + 1, cfg.warmup_queries))

    timings = {
        "analyze_seconds": analyze_seconds,
        "estimate_seconds": float(sum(r.est_us for r in log) / 1e6),
        "observe_seconds": store.observe_seconds,
        "fit_seconds": store.fit_seconds,
        "overhead_seconds": store.observe_seconds + store.fit_seconds,
        "oracle_seconds": oracle_s,
        "heuristic_seconds": heuristic_s,
        "n_refits": store.n_refits,
        "mean_estimate_us": float(np.mean([r.est_us for r in log])) if log else 0.0,
        "mean_estimate_us_small_buckets": _mean([r.est_us for r in log if r.bucket_size <= 1000]),
        "mean_learned_estimate_us": _mean([r.est_us for r in log if r.provenance != "heuristic"]),
    }
    summary = summarize(log, cfg.warmup_queries)
    summary["store"] = {"buckets": {str(k): v for k, v in store.n_buckets().items()},
                        "observed": store.n_observed}
    result = SimulationResult(cfg, log, summary, cumulative, timings)
    result.store = store
    return result


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else 0.0


def _checkpoint(log: list[LogRow], n_queries: int, warmup: int) -> dict:
    learned = [r.q_error for r in log]
    heur = [r.heuristic_q_error for r in log]
    row = {"n_queries": n_queries, "n_subqueries": len(log)}
    for p in PERCENTILES:
        row[f"learned_p{p}"] = percentile(learned, p) if learned else ""
    for p in PERCENTILES:
        row[f"heuristic_p{p}"] = percentile(heur, p) if heur else ""
    post = [r.q_error for r in log if r.query_id >= warmup]
    row["learned_post_warmup_p50"] = percentile(post, 50) if post else ""
    row["heuristic_share"] = sum(r.provenance == "heuristic" for r in log) / len(log) if log else ""
    return row


def summarize(log: Sequence[LogRow], warmup_queries: int = 0) -> dict:
    def block(rows):
        return {
            "learned": QErrorSummary.from_values(
                [r.q_error for r in rows], [r.n_join for r in rows], [r.provenance for r in rows]).to_dict(),
            "heuristic": QErrorSummary.from_values(
                [r.heuristic_q_error for r in rows], [r.n_join for r in rows]).to_dict(),
        }
    provenance_counts: dict[str, int] = {}
    for r in log:
        provenance_counts[r.provenance] = provenance_counts.get(r.provenance, 0) + 1
    return {
        "all": block(log),
        "after_warmup": block([r for r in log if r.query_id >= warmup_queries]),
        "warmup_queries": warmup_queries,
        "n_queries": len({r.query_id for r in log}),
        "provenance_counts": dict(sorted(provenance_counts.items())),
    }


# -- reports ----------------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_replay_csv(log: Iterable[LogRow], path, timings: bool = False) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLAY_COLUMNS)
        for r in log:
            d = asdict(r)
            if not timings:
                d["est_us"] = d["obs_us"] = ""
            else:
                d["est_us"] = f"{r.est_us:.1f}"
                d["obs_us"] = f"{r.obs_us:.1f}"
            w.writerow([_fmt(d[c]) for c in REPLAY_COLUMNS])
            n += 1
    return n


_INT_COLS = {"query_id", "subquery_id", "n_join", "estimate", "truth", "heuristic", "bucket_size"}
_FLOAT_COLS = {"q_error", "heuristic_q_error", "est_us", "obs_us"}


def read_replay_csv(path) -> list[LogRow]:
    out = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            kw = {}
            for c in REPLAY_COLUMNS:
                v = d[c]
                if c in _INT_COLS:
                    kw[c] = int(v)
                elif c in _FLOAT_COLS:
                    kw[c] = float(v) if v != "" else 0.0
                else:
                    kw[c] = v
            out.append(LogRow(**kw))
    return out


def emit_reports(result: SimulationResult, out_dir) -> dict[str, str]:
    """Write replay.csv, summary.json, cumulative.csv and timings.csv into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f) for k, f in (
        ("replay", "replay.csv"), ("summary", "summary.json"),
        ("cumulative", "cumulative.csv"), ("timings", "timings.csv"))}
    write_replay_csv(result.log, paths["replay"], result.config.replay_timings)
    with open(paths["summary"], "w") as fh:
        json.dump({"config": result.config.to_dict(), **result.summary, "timings": result.timings},
                  fh, indent=2, sort_keys=True)
    with open(paths["cumulative"], "w", newline="") as fh:
        if result.cumulative:
            w = csv.DictWriter(fh, fieldnames=list(result.cumulative[0]), lineterminator="\n")
            w.writeheader()
            for row in result.cumulative:
                w.writerow({k: _fmt(v) for k, v in row.items()})
    with open(paths["timings"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "subquery_id", "provenance", "bucket_size", "est_us", "obs_us"])
        for r in result.log:
            w.writerow([r.query_id, r.subquery_id, r.provenance, r.bucket_size,
                        f"{r.est_us:.1f}", f"{r.obs_us:.1f}"])
    return paths


def bucket_size_medians(log: Sequence[LogRow], small: int = 10, large: int = 50) -> tuple[float, float]:
    """Median learned Q-error for estimates made with bucket_size < small and >= large."""
    lo = [r.q_error for r in log if r.bucket_size < small]
    hi = [r.q_error for r in log if r.bucket_size >= large]
    return percentile(lo, 50), percentile(hi, 50)


def heuristic_share_by_decile(log: Sequence[LogRow]) -> list[float]:
    n = len(log)
    out = []
    for k in range(10):
        part = log[k * n // 10:(k + 1) * n // 10]
        out.append(sum(r.provenance == "heuristic" for r in part) / len(part) if part else 0.0)
    return out
