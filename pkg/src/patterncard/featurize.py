"""Canonically ordered numeric feature vectors for query DAGs."""
from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .canonhash import Canonical, node_rows, pattern_hash_and_order
from .querygraph import (
    COLUMN_MAX, COLUMN_MIN, COLUMN_NUM_UNIQUES, COLUMN_TYPE, LITERAL_KIND,
    LITERAL_VALUE, OP_CODE, TABLE_SIZE, AttrKey, NodeType, QueryDag, Schema,
    parse_attr_key,
)


class SchemaError(ValueError):
    pass


EXTRACTOR_DIMS = {
    "num": 1,
    "scaled": 1,
    "comp": 2,
    "ascii3": 3,
    "date3": 3,
    "table_size": 1,
    "column_range": 2,
    "ordinal_op": 3,
}

# Binding that picks num / date3 / ascii3 from the literal's kind.
LITERAL_DISPATCH = "literal"
_KIND_EXTRACTOR = {"number": "num", "date": "date3", "string": "ascii3"}

ORDINAL_OPS = {
    "=": (0.0, 1.0, 0.0),
    ">": (0.0, 0.0, 1.0),
    ">=": (0.0, 1.0, 1.0),
    "<": (1.0, 0.0, 0.0),
    "<=": (1.0, 1.0, 0.0),
}


@dataclass(frozen=True)
class FeatureExtractorSpec:
    key: AttrKey
    extractor_id: str

    def __post_init__(self):
        if self.extractor_id != LITERAL_DISPATCH and self.extractor_id not in EXTRACTOR_DIMS:
            raise ValueError(f"unknown extractor {self.extractor_id!r}")
        if self.extractor_id == LITERAL_DISPATCH and self.key.node_type != NodeType.LITERAL:
            raise ValueError("literal dispatch only applies to literal nodes")

    @property
    def out_dim(self) -> int | None:
        """Fixed width, or None for the kind-dependent literal binding."""
        return EXTRACTOR_DIMS.get(self.extractor_id)

    def width(self, dag: QueryDag, j: int) -> int:
        if self.key.node_type != dag.types[j]:
            return 0
        return EXTRACTOR_DIMS[self.resolve(dag, j)]

    def resolve(self, dag: QueryDag, j: int) -> str:
        if self.extractor_id != LITERAL_DISPATCH:
            return self.extractor_id
        return _KIND_EXTRACTOR.get(dag.value(j, LITERAL_KIND), "num")

    def to_str(self) -> str:
        return f"{self.key.node_type.tag}.{self.key.attr_name}:{self.extractor_id}"

    @classmethod
    def from_str(cls, text: str) -> "FeatureExtractorSpec":
        key, _, ext = text.partition(":")
        return cls(parse_attr_key(key), ext.strip())


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    pattern: bytes

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


# -- individual extractors ----------------------------------------------------


def f_num(value: str) -> list[float]:
    return [float(value)] if value != "" else [0.0]


def f_ascii3(value: str) -> list[float]:
    codes = [float(ord(c) if ord(c) < 128 else ord(c) % 128) for c in value[:3]]
    return codes + [0.0] * (3 - len(codes))


def f_date3(value: str) -> list[float]:
    if value == "":
        return [0.0, 0.0, 0.0]
    d = _dt.date.fromisoformat(value)
    return [float(d.year), float(d.month), float(d.day)]


def f_ordinal_op(code: str) -> list[float]:
    return list(ORDINAL_OPS.get(code, (0.0, 0.0, 0.0)))


def as_number(value: str, col_type: str = "") -> float:
    """Numeric view of a literal or statistic; dates become day ordinals."""
    if col_type == "date" or (len(value) == 10 and value[4:5] == "-" and value[7:8] == "-"):
        return float(_dt.date.fromisoformat(value).toordinal())
    return float(value)


def f_scaled(value: str, lo: float, hi: float) -> float:
    if hi <= lo:
        raise SchemaError("column min equals max; scaled feature undefined")
    return float(min(max((as_number(value) - lo) / (hi - lo), 0.0), 1.0))


def f_comp(value: str, op_code: str, lo: float, hi: float) -> list[float]:
    s = f_scaled(value, lo, hi)
    if op_code in ("<", "<="):
        return [0.0, s]
    if op_code in (">", ">="):
        return [s, 1.0]
    if op_code in ("=", "IN"):
        return [s, s]
    return [0.0, 1.0]


# -- context lookups ------------------------------------------------------------


def _partner(dag: QueryDag, lit: int) -> tuple[int | None, str]:
    """Column compared with literal ``lit`` and the op code, if any."""
    for op in dag.successors[lit]:
        if dag.types[op] != NodeType.OP:
            continue
        for k in dag.predecessors[op]:
            if dag.types[k] == NodeType.COLUMN:
                return k, dag.value(op, OP_CODE)
    return None, ""


def _column_range(dag: QueryDag, col: int, schema: Schema | None) -> tuple[float, float]:
    lo, hi = dag.value(col, COLUMN_MIN), dag.value(col, COLUMN_MAX)
    ctype = dag.value(col, COLUMN_TYPE)
    if (lo == "" or hi == "") and schema is not None:
        alias = dag.alias_of_column(col)
        table = dag.attrs[dag.table_of_alias(alias)].get("name", "")
        info = schema.column(table, dag.attrs[col].get("name", ""))
        lo, hi, ctype = str(info.min), str(info.max), info.type
    if lo in ("", "None") or hi in ("", "None"):
        raise SchemaError("column min/max statistics are missing")
    if ctype == "string":
        raise SchemaError("string columns have no numeric range")
    return as_number(lo, ctype), as_number(hi, ctype)


def node_features(dag: QueryDag, j: int, spec: FeatureExtractorSpec,
                  schema: Schema | None = None) -> list[float]:
    ext = spec.resolve(dag, j)
    raw = dag.value(j, spec.key)
    if ext == "num":
        return f_num(raw)
    if ext == "ascii3":
        return f_ascii3(raw)
    if ext == "date3":
        return f_date3(raw)
    if ext == "ordinal_op":
        return f_ordinal_op(raw)
    if ext == "table_size":
        return f_num(dag.value(j, TABLE_SIZE) if spec.key.node_type == NodeType.TABLE else raw)
    if ext == "column_range":
        return list(_column_range(dag, j, schema))
    if raw == "":
        return [0.0] * EXTRACTOR_DIMS[ext]
    col, code = _partner(dag, j) if dag.types[j] == NodeType.LITERAL else (j, "")
    if col is None:
        raise SchemaError("scaled/comp features need a column next to the literal")
    lo, hi = _column_range(dag, col, schema)
    if ext == "scaled":
        return [f_scaled(raw, lo, hi)]
    return f_comp(raw, code, lo, hi)


# -- vectors ------------------------------------------------------------------------


def feature_dim(dag: QueryDag, feats: Sequence[FeatureExtractorSpec]) -> int:
    return sum(spec.width(dag, j) for spec in feats for j in range(dag.n_nodes))


def _per_node(dag: QueryDag, feats: Sequence[FeatureExtractorSpec],
              schema: Schema | None) -> list[tuple[float, ...]]:
    out = []
    for j in range(dag.n_nodes):
        vals: list[float] = []
        for spec in feats:
            if spec.key.node_type == dag.types[j]:
                vals.extend(node_features(dag, j, spec, schema))
        out.append(tuple(vals))
    return out


def extract(dag: QueryDag, order: Sequence[int], feats: Sequence[FeatureExtractorSpec],
            schema: Schema | None = None, pattern: bytes = b"") -> FeatureVector:
    """Concatenate node features following ``order``.

    A missing attribute contributes the extractor's zero vector so the
    width depends only on the node types present.
    """
    per_node = _per_node(dag, feats, schema)
    values = [v for j in order for v in per_node[j]]
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite feature value")
    return FeatureVector(arr, pattern)


def featurize(dag: QueryDag, pattern_feats: Sequence[AttrKey],
              feats: Sequence[FeatureExtractorSpec],
              schema: Schema | None = None) -> tuple[Canonical, FeatureVector]:
    """Pattern hash plus canonical feature vector in one pass.

    Nodes whose propagated rows tie are ordered by their own feature
    values, so e.g. the literals of an IN list land in ascending order.
    Swapping nodes that tie on both keeps the vector unchanged.
    """
    rows = node_rows(dag, pattern_feats)
    per_node = _per_node(dag, feats, schema)
    h, order = pattern_hash_and_order(rows, per_node)
    values = np.asarray([v for j in order for v in per_node[j]], dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite feature value")
    return Canonical(h, order, tuple(rows)), FeatureVector(values, h)


def slot_ranges(dag: QueryDag, order: Sequence[int],
                feats: Sequence[FeatureExtractorSpec]) -> dict[int, range]:
    """Node id -> slice of the feature vector it fills."""
    out = {}
    pos = 0
    for j in order:
        w = sum(spec.width(dag, j) for spec in feats)
        out[j] = range(pos, pos + w)
        pos += w
    return out


# Bindings used by the default hierarchy levels.
LITERAL_VALUE_FEATURE = FeatureExtractorSpec(LITERAL_VALUE, LITERAL_DISPATCH)
OP_CODE_FEATURE = FeatureExtractorSpec(OP_CODE, "ordinal_op")
COLUMN_UNIQUES_FEATURE = FeatureExtractorSpec(COLUMN_NUM_UNIQUES, "num")
