"""Histogram-and-independence cardinality estimator, used as fallback and baseline.

Per column it keeps a most-common-values list and an equi-depth histogram
over the remaining values.  Predicate selectivities are combined as if
all columns were independent, and each equi-join divides by the larger
distinct count of its two key columns.
"""
from __future__ import annotations

import datetime as _dt
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from .querygraph import NodeType, OP_CODE, QueryDag

DEFAULT_EQ_SEL = 0.005
DEFAULT_INEQ_SEL = 1.0 / 3.0
MCV_RATIO = 1.25


class MissingStats(KeyError):
    pass


@dataclass
class ColumnHistogram:
    """MCV list plus equi-depth bounds over the non-MCV values.

    Values are stored as sort keys: numbers and day ordinals for dates are
    floats, strings stay strings.
    """

    column: str
    col_type: str
    bounds: list
    mcv_values: list
    mcv_freqs: list[float]
    null_frac: float
    num_distinct: int

    @property
    def mcv_total(self) -> float:
        return float(sum(self.mcv_freqs))

    @property
    def numeric(self) -> bool:
        return self.col_type != "string"

    def key(self, value: str):
        """Sort key of a literal's text for this column."""
        if not self.numeric:
            return value
        if self.col_type == "date" or (len(value) == 10 and value[4:5] == "-"):
            return float(_dt.date.fromisoformat(value).toordinal())
        return float(value)

    def eq(self, k) -> float:
        for v, f in zip(self.mcv_values, self.mcv_freqs):
            if v == k:
                return f
        return 1.0 / self.num_distinct if self.num_distinct else 0.0

    def below(self, k, inclusive: bool) -> float:
        """Fraction of non-null rows with value < k (or <= k)."""
        mcv = sum(f for v, f in zip(self.mcv_values, self.mcv_freqs)
                  if (v <= k if inclusive else v < k))
        return min(mcv + (1.0 - self.mcv_total) * self._hist_below(k), 1.0)

    def _hist_below(self, k) -> float:
        b = self.bounds
        nb = len(b) - 1
        if nb < 1:
            return 1.0 if b and b[0] < k else 0.0
        if k <= b[0]:
            return 0.0
        if k > b[-1]:
            return 1.0
        i = bisect_left(b, k) - 1
        i = min(max(i, 0), nb - 1)
        lo, hi = b[i], b[i + 1]
        if self.numeric and hi > lo:
            frac = (k - lo) / (hi - lo)
        else:
            frac = 0.5
        return (i + min(max(frac, 0.0), 1.0)) / nb

    def to_dict(self) -> dict:
        return {"column": self.column, "type": self.col_type, "bounds": self.bounds,
                "mcv_values": self.mcv_values, "mcv_freqs": self.mcv_freqs,
                "null_frac": self.null_frac, "num_distinct": self.num_distinct}

    @classmethod
    def from_dict(cls, d) -> "ColumnHistogram":
        return cls(d["column"], d["type"], list(d["bounds"]), list(d["mcv_values"]),
                   [float(f) for f in d["mcv_freqs"]], float(d["null_frac"]), int(d["num_distinct"]))


@dataclass
class TableStats:
    name: str
    row_count: int
    histograms: dict[str, ColumnHistogram] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "row_count": self.row_count,
                "histograms": {c: h.to_dict() for c, h in self.histograms.items()}}

    @classmethod
    def from_dict(cls, d) -> "TableStats":
        return cls(d["name"], int(d["row_count"]),
                   {c: ColumnHistogram.from_dict(h) for c, h in d["histograms"].items()})


def _sort_keys(values: np.ndarray, col_type: str) -> np.ndarray:
    if col_type == "date":
        # days since 1970 -> proleptic ordinal
        return values.astype("datetime64[D]").astype(np.int64).astype(np.float64) + 719163.0
    if col_type == "string":
        return values
    return values.astype(np.float64)


def analyze_column(name: str, values: np.ndarray, col_type: str, n_buckets: int = 100,
                   n_mcv: int = 10) -> ColumnHistogram:
    n = len(values)
    if n == 0:
        return ColumnHistogram(name, col_type, [], [], [], 0.0, 0)
    keys = _sort_keys(values, col_type)
    uniq, counts = np.unique(keys, return_counts=True)
    nd = len(uniq)
    order = np.argsort(-counts, kind="stable")
    if nd <= n_mcv:
        top = order
    else:
        avg = n / nd
        top = [i for i in order[:n_mcv] if counts[i] > MCV_RATIO * avg]
    top = sorted(top, key=lambda i: (-counts[i], i))
    mcv_vals = [_py(uniq[i]) for i in top]
    mcv_freqs = [float(counts[i]) / n for i in top]
    rest_mask = np.ones(nd, dtype=bool)
    rest_mask[list(top)] = False
    rest = np.repeat(uniq[rest_mask], counts[rest_mask])
    bounds: list = []
    if len(rest):
        nb = min(n_buckets, max(len(rest) - 1, 1))
        pos = np.rint(np.linspace(0, len(rest) - 1, nb + 1)).astype(int)
        bounds = [_py(v) for v in rest[pos]]
    return ColumnHistogram(name, col_type, bounds, mcv_vals, mcv_freqs, 0.0, int(nd))


def _py(v):
    return v.item() if hasattr(v, "item") else v


def analyze(dataset, n_buckets: int = 100, n_mcv: int = 10) -> dict[str, TableStats]:
    out = {}
    for name, t in dataset.tables.items():
        hists = {c: analyze_column(c, v, t.types[c], n_buckets, n_mcv) for c, v in t.columns.items()}
        out[name] = TableStats(name, t.size, hists)
    return out


def save_stats(stats: dict[str, TableStats], path) -> None:
    with open(path, "w") as fh:
        json.dump({n: s.to_dict() for n, s in sorted(stats.items())}, fh, sort_keys=True)


def load_stats(path) -> dict[str, TableStats]:
    with open(path) as fh:
        return {n: TableStats.from_dict(d) for n, d in json.load(fh).items()}


# -- estimation ------------------------------------------------------------------------------


class HeuristicEstimator:
    """Callable ``dag -> estimated rows`` over analyzed table statistics."""

    def __init__(self, stats: dict[str, TableStats]):
        self.stats = stats

    def _table(self, dag: QueryDag, alias: int) -> TableStats:
        name = dag.attrs[dag.table_of_alias(alias)].get("name", "")
        if name not in self.stats:
            raise MissingStats(f"no statistics for table {name!r}")
        return self.stats[name]

    def _hist(self, dag: QueryDag, col: int) -> ColumnHistogram:
        t = self._table(dag, dag.alias_of_column(col))
        name = dag.attrs[col].get("name", "")
        if name not in t.histograms:
            raise MissingStats(f"no statistics for column {t.name}.{name}")
        return t.histograms[name]

    def selectivity(self, dag: QueryDag, j: int) -> float:
        t = dag.types[j]
        if t != NodeType.OP:
            return DEFAULT_INEQ_SEL
        code = dag.value(j, OP_CODE)
        ops = dag.predecessors[j]
        if code == "AND":
            return math.prod(self.selectivity(dag, o) for o in ops)
        if code == "OR":
            s = 0.0
            for o in ops:
                so = self.selectivity(dag, o)
                s = s + so - s * so
            return s
        if code == "NOT":
            return 1.0 - self.selectivity(dag, ops[0])
        col = ops[0] if ops and dag.types[ops[0]] == NodeType.COLUMN else None
        lits = [o for o in ops[1:] if dag.types[o] == NodeType.LITERAL]
        if col is None or len(lits) != len(ops) - 1 or not lits:
            return DEFAULT_EQ_SEL if code in ("=", "IN") else DEFAULT_INEQ_SEL
        h = self._hist(dag, col)
        try:
            keys = [h.key(dag.attrs[k].get("value", "")) for k in lits]
        except ValueError:
            return DEFAULT_EQ_SEL if code in ("=", "IN") else DEFAULT_INEQ_SEL
        live = 1.0 - h.null_frac
        if code == "=":
            s = h.eq(keys[0])
        elif code == "<>":
            s = 1.0 - h.eq(keys[0])
        elif code in ("IN", "NOT IN"):
            s = min(sum(h.eq(k) for k in set(keys)), 1.0)
            if code == "NOT IN":
                s = 1.0 - s
        elif code in ("<", "<="):
            s = h.below(keys[0], inclusive=code == "<=")
        elif code in (">", ">="):
            s = 1.0 - h.below(keys[0], inclusive=code == ">")
        else:
            return DEFAULT_INEQ_SEL
        return min(max(s, 0.0), 1.0) * live

    def estimate_raw(self, dag: QueryDag) -> float:
        aliases = dag.aliases()
        if not aliases:
            return 1.0
        card = 1.0
        for a in aliases:
            card *= self._table(dag, a).row_count
        for c in dag.conjuncts():
            pair = dag.equi_join(c)
            if pair is not None:
                nd = max(self._hist(dag, pair[0]).num_distinct, self._hist(dag, pair[1]).num_distinct, 1)
                card /= nd
            else:
                card *= self.selectivity(dag, c)
        return card

    def __call__(self, dag: QueryDag) -> int:
        upper = math.prod(self._table(dag, a).row_count for a in dag.aliases())
        est = max(int(round(self.estimate_raw(dag))), 1)
        return min(est, max(upper, 1))


def heuristic_estimate(dag: QueryDag, stats: dict[str, TableStats]) -> int:
    return HeuristicEstimator(stats)(dag)
