"""Online estimator store: pattern-hash buckets at three levels plus a heuristic fallback.

A subquery is looked up at the most specific level first.  If that
level's bucket holds at least ``beta`` rows its model answers, otherwise
the next coarser level is tried, and finally the heuristic estimate,
optionally inflated by the join-count bias table.
"""
from __future__ import annotations

import csv
import json
import math
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .canonhash import fingerprint16
from .featurize import (
    COLUMN_UNIQUES_FEATURE, LITERAL_VALUE_FEATURE, OP_CODE_FEATURE,
    FeatureExtractorSpec, featurize,
)
from .learners import (
    DimMismatch, EmptyHistory, GbdtParams, KernelParams, SingularSystem, Standardizer,
    TrainingSet, default_sigma, fit_gbdt, fit_lwlr, fit_weighted_ridge, kernel_weights,
    predict_rbf_oneshot, to_cardinality,
)
from .querygraph import (
    COLUMN_NAME, COLUMN_TYPE, OP_CODE, TABLE_NAME, AttrKey, QueryDag, Schema, parse_attr_key,
)

SNAPSHOT_VERSION = 1
LEARNERS = ("lwlr", "rbf", "gbdt")
FIT_MODES = ("local", "cached")
PROVENANCES = ("level3", "level2", "level1", "heuristic")


@dataclass(frozen=True)
class LevelConfig:
    level_id: int
    pattern_feats: tuple[AttrKey, ...]
    learn_feats: tuple[FeatureExtractorSpec, ...]
    beta: int
    fit_mode: str = "cached"
    learner: str = "gbdt"

    def __post_init__(self):
        if self.level_id not in (1, 2, 3):
            raise ValueError("level_id must be 1, 2 or 3")
        if self.beta < 1:
            raise ValueError("beta must be a positive integer")
        if self.fit_mode not in FIT_MODES:
            raise ValueError(f"fit_mode must be one of {FIT_MODES}")
        if self.learner not in LEARNERS:
            raise ValueError(f"learner must be one of {LEARNERS}")

    def to_dict(self) -> dict:
        return {
            "level_id": self.level_id,
            "pattern_feats": [f"{k.node_type.tag}.{k.attr_name}" for k in self.pattern_feats],
            "learn_feats": [f.to_str() for f in self.learn_feats],
            "beta": self.beta,
            "fit_mode": self.fit_mode,
            "learner": self.learner,
        }

    @classmethod
    def from_dict(cls, d) -> "LevelConfig":
        return cls(
            int(d["level_id"]),
            tuple(parse_attr_key(k) for k in d["pattern_feats"]),
            tuple(FeatureExtractorSpec.from_str(f) for f in d["learn_feats"]),
            int(d["beta"]),
            d.get("fit_mode", "cached"),
            d.get("learner", "gbdt"),
        )


H1 = (TABLE_NAME, COLUMN_TYPE)
H2 = H1 + (COLUMN_NAME,)
H3 = H2 + (OP_CODE,)
F3 = (LITERAL_VALUE_FEATURE,)
F2 = F3 + (OP_CODE_FEATURE,)
F1 = F2 + (COLUMN_UNIQUES_FEATURE,)
DEFAULT_BETAS = (100, 50, 10)


def default_levels(betas: Sequence[int] = DEFAULT_BETAS, learner: str = "gbdt",
                   fit_mode: str = "cached") -> tuple[LevelConfig, LevelConfig, LevelConfig]:
    """Levels 1..3; ``betas`` are given as (beta1, beta2, beta3)."""
    b1, b2, b3 = betas
    return (
        LevelConfig(1, H1, F1, b1, fit_mode, learner),
        LevelConfig(2, H2, F2, b2, fit_mode, learner),
        LevelConfig(3, H3, F3, b3, fit_mode, learner),
    )


def check_nested(levels: Sequence[LevelConfig]) -> None:
    by_id = sorted(levels, key=lambda lv: lv.level_id)
    if [lv.level_id for lv in by_id] != [1, 2, 3]:
        raise ValueError("need exactly one config per level 1, 2, 3")
    for lo, hi in zip(by_id, by_id[1:]):
        if not set(lo.pattern_feats) < set(hi.pattern_feats):
            raise ValueError(f"pattern features of level {lo.level_id} must be a strict "
                             f"subset of level {hi.level_id}")


# -- bias table -------------------------------------------------------------------

DEFAULT_BIAS = {
    1: (0.57, 1.57),
    2: (0.83, 20.20),
    3: (0.93, 1361.38),
    4: (0.98, 68655.97),
}


@dataclass
class _BiasCounts:
    n: int = 0
    under: int = 0
    under_qerror_sum: float = 0.0


class BiasTable:
    """Per join count: (probability of underestimating, mean underestimate Q-error).

    Starts from the configured entries and switches a join count to its
    observed statistics once ``min_online`` pairs have been recorded there.
    """

    def __init__(self, configured: dict[int, tuple[float, float]] | None = None,
                 min_online: int = 50, online: bool = True):
        self.configured = dict(DEFAULT_BIAS if configured is None else configured)
        for n, (p, m) in self.configured.items():
            if not (0.0 <= p <= 1.0 and math.isfinite(m) and m >= 1.0):
                raise ValueError(f"bad bias entry for n_join={n}: {(p, m)}")
        self.min_online = min_online
        self.online = online
        self.counts: dict[int, _BiasCounts] = {}

    def record(self, n_join: int, heuristic: float, truth: int) -> None:
        c = self.counts.setdefault(n_join, _BiasCounts())
        est, y = max(float(heuristic), 1.0), max(float(truth), 1.0)
        c.n += 1
        if est < y:
            c.under += 1
            c.under_qerror_sum += y / est

    def online_fraction(self, n_join: int) -> Fraction:
        c = self.counts.get(n_join, _BiasCounts())
        return Fraction(c.under, c.n) if c.n else Fraction(0)

    def source(self, n_join: int) -> str:
        c = self.counts.get(n_join)
        if self.online and c is not None and c.n >= self.min_online:
            return "online"
        return "configured"

    def entry(self, n_join: int) -> tuple[float, float] | None:
        """(p, m) used at ``n_join``; configured entries fall back to the nearest lower count."""
        if self.source(n_join) == "online":
            c = self.counts[n_join]
            m = c.under_qerror_sum / c.under if c.under else 1.0
            return c.under / c.n, m
        keys = [n for n in self.configured if n <= n_join]
        if not keys:
            return None
        return self.configured[max(keys)]

    def to_dict(self) -> dict:
        return {
            "configured": {str(n): list(v) for n, v in self.configured.items()},
            "min_online": self.min_online,
            "online": self.online,
            "counts": {str(n): [c.n, c.under, c.under_qerror_sum] for n, c in self.counts.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "BiasTable":
        t = cls({int(n): tuple(v) for n, v in d["configured"].items()}, int(d["min_online"]),
                bool(d["online"]))
        t.counts = {int(n): _BiasCounts(int(v[0]), int(v[1]), float(v[2]))
                    for n, v in d.get("counts", {}).items()}
        return t


def bias_adjust(raw: float, n_join: int, bias: BiasTable, u: float) -> float:
    entry = bias.entry(n_join)
    if entry is None:
        return raw
    p, m = entry
    return raw * m if u < p else raw


# -- buckets ----------------------------------------------------------------------------


@dataclass(frozen=True)
class _Fitted:
    model: object | None
    scaler: Standardizer
    sigma: float
    rbf_fallback: bool
    n_rows: int


class PatternBucket:
    """History of one pattern at one level, with a lazily refit model.

    Rows are appended into a growing buffer and only then published by
    bumping ``count``, so a reader that snapshots ``count`` first always
    sees complete rows.
    """

    def __init__(self, pattern: bytes, dim: int, max_rows: int | None = None):
        self.pattern = pattern
        self.dim = dim
        self.max_rows = max_rows
        self._X = np.empty((4, dim))
        self._y = np.empty(4)
        self._raw = np.empty(4, dtype=np.int64)
        self._fp = np.empty(4, dtype=np.uint16)
        self.count = 0
        self.rows_since_refit = 0
        self.last_refit = -1
        self.fitted: _Fitted | None = None
        self.served = {p: 0 for p in PROVENANCES[:3]}
        self.lock = threading.Lock()

    @property
    def rbf_fallback(self) -> bool:
        return self.fitted is not None and self.fitted.rbf_fallback

    def append(self, x: np.ndarray, card: int, fingerprint: int) -> None:
        if x.shape != (self.dim,):
            raise DimMismatch(f"bucket {self.pattern.hex()[:12]} holds dim {self.dim}, got {x.shape}")
        with self.lock:
            n = self.count
            if self.max_rows is not None and n >= self.max_rows:
                for a in (self._X, self._y, self._raw, self._fp):
                    a[: n - 1] = a[1:n]
                n -= 1
                self.count = n
            if n == self._y.shape[0]:
                cap = 2 * n
                self._X = np.resize(self._X, (cap, self.dim))
                self._y = np.resize(self._y, cap)
                self._raw = np.resize(self._raw, cap)
                self._fp = np.resize(self._fp, cap)
            self._X[n] = x
            self._y[n] = math.log1p(card)
            self._raw[n] = card
            self._fp[n] = fingerprint
            self.count = n + 1
            self.rows_since_refit += 1

    def rows(self) -> TrainingSet:
        n = self.count
        return TrainingSet(self._X[:n], self._y[:n], self._raw[:n])

    @property
    def fingerprints(self) -> np.ndarray:
        return self._fp[: self.count]

    def feature_stats(self) -> tuple[np.ndarray, np.ndarray]:
        X = self._X[: self.count]
        return X.mean(axis=0), X.std(axis=0)

    @classmethod
    def from_rows(cls, pattern: bytes, X, raw, fp=None, max_rows=None) -> "PatternBucket":
        X = np.asarray(X, dtype=np.float64).reshape(len(raw), -1)
        b = cls(pattern, X.shape[1], max_rows)
        for i, (x, c) in enumerate(zip(X, raw)):
            b.append(x, int(c), int(fp[i]) if fp is not None else fingerprint16(pattern))
        return b


# -- store -------------------------------------------------------------------------------


@dataclass
class StoreConfig:
    levels: tuple[LevelConfig, ...] = field(default_factory=default_levels)
    refit_every: int = 8
    seed: int = 0
    bias_mode: str = "online"  # online | configured | off
    bias_min_online: int = 50
    bias_table: dict[int, tuple[float, float]] | None = None
    l2: float = 1e-3
    sigma: float | None = None
    gbdt: GbdtParams = field(default_factory=GbdtParams)
    max_rows_per_bucket: int | None = None

    def __post_init__(self):
        check_nested(self.levels)
        if self.bias_mode not in ("online", "configured", "off"):
            raise ValueError("bias_mode must be online, configured or off")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")

    def to_dict(self) -> dict:
        return {
            "levels": [lv.to_dict() for lv in self.levels],
            "refit_every": self.refit_every,
            "seed": self.seed,
            "bias_mode": self.bias_mode,
            "bias_min_online": self.bias_min_online,
            "bias_table": None if self.bias_table is None
            else {str(n): list(v) for n, v in self.bias_table.items()},
            "l2": self.l2,
            "sigma": self.sigma,
            "gbdt": vars(self.gbdt).copy(),
            "max_rows_per_bucket": self.max_rows_per_bucket,
        }

    @classmethod
    def from_dict(cls, d) -> "StoreConfig":
        d = dict(d)
        if "levels" in d:
            d["levels"] = tuple(LevelConfig.from_dict(x) for x in d["levels"])
        if d.get("bias_table") is not None:
            d["bias_table"] = {int(n): tuple(v) for n, v in d["bias_table"].items()}
        if "gbdt" in d:
            d["gbdt"] = GbdtParams(**d["gbdt"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown store config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LevelSignature:
    pattern: bytes
    x: np.ndarray


@dataclass(frozen=True)
class Signature:
    """Per-level pattern hashes and feature vectors of one subquery, by level id."""

    levels: dict[int, LevelSignature]
    n_join: int
    max_card: int | None

    def hash_hex(self, level_id: int) -> str:
        return self.levels[level_id].pattern.hex()


@dataclass(frozen=True)
class EstimateResult:
    cardinality: int
    provenance: str
    bucket_size: int
    latency: float
    level_sizes: dict[int, int]
    signature: Signature
    heuristic_raw: float | None = None


def _max_card(dag: QueryDag) -> int | None:
    sizes = dag.table_sizes()
    if not sizes or any(s <= 0 for s in sizes):
        return None
    return math.prod(sizes)


class EstimatorStore:
    """HashTable per level from pattern hash to bucket, plus the bias table."""

    def __init__(self, config: StoreConfig | None = None, schema: Schema | None = None):
        self.config = config or StoreConfig()
        self.schema = schema
        self.levels = {lv.level_id: lv for lv in self.config.levels}
        self.tables: dict[int, dict[bytes, PatternBucket]] = {k: {} for k in self.levels}
        self.bias = BiasTable(self.config.bias_table, self.config.bias_min_online,
                              online=self.config.bias_mode == "online")
        self.rng = np.random.default_rng(self.config.seed)
        self._write_lock = threading.RLock()
        self.observe_seconds = 0.0
        self.fit_seconds = 0.0
        self.n_observed = 0
        self.n_refits = 0

    # lookups

    def signature(self, dag: QueryDag) -> Signature:
        levels = {}
        for k, lv in self.levels.items():
            canon, vec = featurize(dag, lv.pattern_feats, lv.learn_feats, self.schema)
            levels[k] = LevelSignature(canon.pattern, vec.values)
        return Signature(levels, dag.n_join, _max_card(dag))

    def bucket(self, level_id: int, pattern: bytes) -> PatternBucket | None:
        return self.tables[level_id].get(pattern)

    def bucket_sizes(self, sig: Signature) -> dict[int, int]:
        out = {}
        for k in self.levels:
            b = self.tables[k].get(sig.levels[k].pattern)
            out[k] = b.count if b is not None else 0
        return out

    def n_buckets(self) -> dict[int, int]:
        return {k: len(t) for k, t in self.tables.items()}

    # estimation

    def estimate(self, dag: QueryDag, heuristic: Callable[[QueryDag], float] | float,
                 signature: Signature | None = None) -> EstimateResult:
        t0 = time.perf_counter()
        fit_before = self.fit_seconds
        sig = signature if signature is not None else self.signature(dag)
        sizes = self.bucket_sizes(sig)
        for k in sorted(self.levels, reverse=True):
            lv = self.levels[k]
            if sizes[k] >= lv.beta:
                b = self.tables[k][sig.levels[k].pattern]
                pred = self._predict(b, lv, sig.levels[k].x)
                card = to_cardinality(pred, sig.max_card)
                prov = f"level{k}"
                b.served[prov] += 1
                latency = time.perf_counter() - t0 - (self.fit_seconds - fit_before)
                return EstimateResult(card, prov, sizes[k], latency, sizes, sig)
        raw = float(heuristic(dag) if callable(heuristic) else heuristic)
        u = float(self.rng.random())
        adjusted = raw if self.config.bias_mode == "off" else bias_adjust(raw, sig.n_join, self.bias, u)
        card = max(int(round(adjusted)), 0)
        if sig.max_card is not None:
            card = min(card, sig.max_card)
        latency = time.perf_counter() - t0
        return EstimateResult(card, "heuristic", sizes[3] if 3 in sizes else 0, latency, sizes,
                              sig, raw)

    def _kernel_params(self, X: np.ndarray) -> KernelParams:
        return KernelParams(self.config.sigma if self.config.sigma else default_sigma(X))

    def _predict(self, b: PatternBucket, lv: LevelConfig, x: np.ndarray) -> float:
        fitted = b.fitted
        if fitted is None or b.rows_since_refit >= self.config.refit_every:
            fitted = self.refit_bucket(b, lv)
        xs = fitted.scaler(x)
        if lv.fit_mode == "cached" and fitted.model is not None:
            return fitted.model.predict(xs)
        rows = b.rows()
        hist = TrainingSet(fitted.scaler(rows.X), rows.y)
        params = KernelParams(fitted.sigma)
        if fitted.rbf_fallback or lv.learner == "rbf":
            return predict_rbf_oneshot(hist, xs, params)
        try:
            if lv.learner == "lwlr":
                return fit_lwlr(hist, xs, params, self.config.l2).predict(xs)
            w = kernel_weights(hist.X, xs, params.sigma)
            return fit_gbdt(hist, self.config.gbdt, sample_weight=w).predict(xs)
        except (SingularSystem, EmptyHistory):
            return predict_rbf_oneshot(hist, xs, params)

    def refit_bucket(self, b: PatternBucket, lv: LevelConfig) -> _Fitted:
        """Recompute scaling, kernel width and (in cached mode) the bucket model."""
        t0 = time.perf_counter()
        with b.lock:
            rows = b.rows()
            n = len(rows)
            scaler = Standardizer.fit(rows.X)
            Xs = scaler(rows.X)
            sigma = self._kernel_params(Xs).sigma
            model, fallback = None, False
            if lv.learner == "rbf":
                pass
            elif n < 2:
                fallback = True
            elif lv.fit_mode == "cached":
                hist = TrainingSet(Xs, rows.y)
                try:
                    if lv.learner == "gbdt":
                        model = fit_gbdt(hist, self.config.gbdt)
                    else:
                        model = fit_weighted_ridge(Xs, rows.y, np.ones(n), self.config.l2,
                                                   np.zeros(Xs.shape[1]))
                except (SingularSystem, EmptyHistory):
                    fallback = True
            fitted = _Fitted(model, scaler, sigma, fallback, n)
            b.fitted = fitted
            b.rows_since_refit = 0
            b.last_refit = n
        self.n_refits += 1
        self.fit_seconds += time.perf_counter() - t0
        return fitted

    # ingestion

    def observe(self, dag: QueryDag, true_card: int, signature: Signature | None = None,
                heuristic_estimate: float | None = None) -> None:
        if true_card < 0:
            raise ValueError("true cardinality must be nonnegative")
        t0 = time.perf_counter()
        sig = signature if signature is not None else self.signature(dag)
        with self._write_lock:
            for k, ls in sig.levels.items():
                table = self.tables[k]
                b = table.get(ls.pattern)
                if b is None:
                    b = PatternBucket(ls.pattern, ls.x.shape[0], self.config.max_rows_per_bucket)
                    table[ls.pattern] = b
                b.append(ls.x, int(true_card), fingerprint16(ls.pattern))
            if heuristic_estimate is not None:
                self.bias.record(sig.n_join, heuristic_estimate, int(true_card))
            self.n_observed += 1
        self.observe_seconds += time.perf_counter() - t0

    # persistence

    def snapshot(self) -> dict:
        buckets = {}
        for k, table in self.tables.items():
            buckets[str(k)] = [
                {"pattern": h.hex(), "X": b.rows().X.tolist(), "raw": b.rows().raw.tolist(),
                 "fp": b.fingerprints.tolist(), "dim": b.dim}
                for h, b in table.items()
            ]
        return {
            "version": SNAPSHOT_VERSION,
            "config": self.config.to_dict(),
            "buckets": buckets,
            "bias": self.bias.to_dict(),
            "rng": self.rng.bit_generator.state,
            "n_observed": self.n_observed,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh)

    @classmethod
    def restore(cls, snap: dict, schema: Schema | None = None) -> "EstimatorStore":
        if snap.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {snap.get('version')}")
        store = cls(StoreConfig.from_dict(snap["config"]), schema)
        for k, items in snap["buckets"].items():
            table = store.tables[int(k)]
            for item in items:
                h = bytes.fromhex(item["pattern"])
                X = np.asarray(item["X"], dtype=np.float64).reshape(len(item["raw"]), item["dim"])
                table[h] = PatternBucket.from_rows(h, X, item["raw"], item["fp"],
                                                   store.config.max_rows_per_bucket)
        store.bias = BiasTable.from_dict(snap["bias"])
        store.rng.bit_generator.state = snap["rng"]
        store.n_observed = int(snap.get("n_observed", 0))
        return store

    @classmethod
    def load(cls, path, schema: Schema | None = None) -> "EstimatorStore":
        with open(path) as fh:
            return cls.restore(json.load(fh), schema)

    def dump_debug_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "pattern_hash", "count", "last_refit", *PROVENANCES[:3]])
            for k in sorted(self.tables):
                for h, b in sorted(self.tables[k].items()):
                    w.writerow([k, h.hex(), b.count, b.last_refit, *(b.served[p] for p in PROVENANCES[:3])])

    def check_fingerprints(self) -> bool:
        """Every row's stored 16-bit fingerprint matches its bucket key."""
        return all(
            bool(np.all(b.fingerprints == fingerprint16(h)))
            for table in self.tables.values() for h, b in table.items()
        )
