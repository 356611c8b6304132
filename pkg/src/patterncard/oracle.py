"""In-memory tables and exact COUNT(*) execution of query DAGs."""
from __future__ import annotations

import csv
import datetime as _dt
import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .querygraph import (
    COLUMN_TYPES, ColumnInfo, NodeType, OP_CODE, QueryDag, Schema, TableInfo,
)


class BudgetExceeded(RuntimeError):
    pass


class ExecutionError(ValueError):
    pass


_DTYPES = {"int": np.int64, "float": np.float64, "date": "datetime64[D]"}


def as_column(values, col_type: str) -> np.ndarray:
    if col_type == "string":
        return np.asarray(values, dtype=np.str_)
    return np.asarray(values, dtype=_DTYPES[col_type])


def _stat(v: np.ndarray, col_type: str, fn):
    if v.size == 0:
        return None
    if col_type == "string":
        srt = np.sort(v)
        return str(srt[0] if fn is np.min else srt[-1])
    x = fn(v)
    if col_type == "int":
        return int(x)
    if col_type == "float":
        return float(x)
    return str(x)


@dataclass
class Table:
    name: str
    columns: dict[str, np.ndarray]
    types: dict[str, str]

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"columns of {self.name} differ in length: {sorted(lengths)}")
        for c, t in self.types.items():
            if t not in COLUMN_TYPES:
                raise ValueError(f"unknown column type {t!r} for {self.name}.{c}")

    @property
    def size(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def info(self) -> TableInfo:
        cols = {}
        for c, v in self.columns.items():
            t = self.types[c]
            cols[c] = ColumnInfo(t, _stat(v, t, np.min), _stat(v, t, np.max),
                                 int(np.unique(v).size))
        return TableInfo(self.name, self.size, cols)

    def take(self, idx: np.ndarray) -> "Table":
        return Table(self.name, {c: v[idx] for c, v in self.columns.items()}, dict(self.types))


@dataclass
class Dataset:
    tables: dict[str, Table] = field(default_factory=dict)

    @property
    def sizes(self) -> dict[str, int]:
        return {n: t.size for n, t in self.tables.items()}

    def schema(self) -> Schema:
        return Schema({n: t.info() for n, t in self.tables.items()})

    def save_csv(self, directory) -> dict[str, str]:
        os.makedirs(directory, exist_ok=True)
        paths = {}
        for name, t in self.tables.items():
            path = os.path.join(directory, f"{name}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                cols = list(t.columns)
                w.writerow(cols)
                for row in zip(*(t.columns[c].tolist() for c in cols)):
                    w.writerow([_fmt_cell(v) for v in row])
            paths[name] = path
        return paths


def _fmt_cell(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return repr(v)
    return str(v)


def _parse_cell(text: str, col_type: str):
    if col_type == "int":
        return int(text)
    if col_type == "float":
        return float(text)
    if col_type == "date":
        return _dt.date.fromisoformat(text)
    return text


def load_csv(paths: Mapping[str, str], schema: Schema) -> Dataset:
    """Read one CSV per table; headers must match the schema's columns.

    A cell that does not parse as its column type raises ``TypeError``
    naming the 1-based data row and the column.
    """
    tables = {}
    for name, path in paths.items():
        if name not in schema.tables:
            raise KeyError(f"table {name!r} is not in the schema")
        info = schema.tables[name]
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, [])
            if set(header) != set(info.columns):
                raise ValueError(f"{path}: header {header} does not match schema columns "
                                 f"{sorted(info.columns)}")
            data: dict[str, list] = {c: [] for c in header}
            for r, row in enumerate(reader, start=1):
                if len(row) != len(header):
                    raise TypeError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
                for c, cell in zip(header, row):
                    t = info.columns[c].type
                    try:
                        data[c].append(_parse_cell(cell, t))
                    except ValueError:
                        raise TypeError(f"{path}: row {r} col `{c}`: {cell!r} is not a valid {t}") from None
        types = {c: info.columns[c].type for c in header}
        tables[name] = Table(name, {c: as_column(data[c], types[c]) for c in header}, types)
    return Dataset(tables)


def load_csv_dir(directory, schema: Schema) -> Dataset:
    paths = {t: os.path.join(directory, f"{t}.csv") for t in schema.tables}
    return load_csv({t: p for t, p in paths.items() if os.path.exists(p)}, schema)


# -- expression evaluation ------------------------------------------------------------


def _literal(dag: QueryDag, j: int):
    a = dag.attrs[j]
    kind, value = a.get("kind", ""), a.get("value", "")
    if kind == "number":
        return float(value) if any(ch in value for ch in ".eE") else int(value)
    if kind == "date":
        return np.datetime64(value, "D")
    return value


def _coerce_pair(a, b):
    """Let a string literal meet a date column."""
    def is_date(x):
        return isinstance(x, np.datetime64) or (isinstance(x, np.ndarray) and x.dtype.kind == "M")
    if is_date(a) and isinstance(b, str):
        return a, np.datetime64(b, "D")
    if is_date(b) and isinstance(a, str):
        return np.datetime64(a, "D"), b
    return a, b


_CMP = {
    "=": np.equal, "<>": np.not_equal, "<": np.less, "<=": np.less_equal,
    ">": np.greater, ">=": np.greater_equal,
}
_ARITH = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.true_divide}


def _function(name: str, args):
    if name == "ABS" and len(args) == 1:
        return np.abs(args[0])
    if name in ("LOWER", "UPPER") and len(args) == 1:
        f = np.char.lower if name == "LOWER" else np.char.upper
        return f(np.asarray(args[0], dtype=np.str_))
    if name == "LENGTH" and len(args) == 1:
        return np.char.str_len(np.asarray(args[0], dtype=np.str_))
    raise ExecutionError(f"unsupported function {name}/{len(args)}")


class _Env:
    """Column values per alias node for the current row set."""

    def __init__(self, dag: QueryDag, data: Dataset, rows: Mapping[int, np.ndarray | None]):
        self.dag = dag
        self.data = data
        self.rows = rows

    def column(self, j: int) -> np.ndarray:
        dag = self.dag
        alias = dag.alias_of_column(j)
        table = self.data.tables[dag.attrs[dag.table_of_alias(alias)]["name"]]
        name = dag.attrs[j]["name"]
        if name not in table.columns:
            raise ExecutionError(f"unknown column {table.name}.{name}")
        col = table.columns[name]
        idx = self.rows[alias]
        return col if idx is None else col[idx]


def evaluate(dag: QueryDag, j: int, env: _Env):
    t = dag.types[j]
    if t == NodeType.COLUMN:
        return env.column(j)
    if t == NodeType.LITERAL:
        return _literal(dag, j)
    args = [evaluate(dag, p, env) for p in dag.predecessors[j]]
    if t == NodeType.FUNCTION:
        return _function(dag.attrs[j].get("name", ""), args)
    if t != NodeType.OP:
        raise ExecutionError(f"cannot evaluate {t.tag} node")
    code = dag.value(j, OP_CODE)
    if code == "AND":
        return np.logical_and.reduce(args) if len(args) > 1 else np.asarray(args[0], bool)
    if code == "OR":
        return np.logical_or.reduce(args) if len(args) > 1 else np.asarray(args[0], bool)
    if code == "NOT":
        return np.logical_not(args[0])
    if code in ("IN", "NOT IN"):
        col = args[0]
        vals = [_coerce_pair(col, v)[1] for v in args[1:]]
        hit = np.isin(col, np.asarray(vals))
        return hit if code == "IN" else ~hit
    if code in _CMP:
        a, b = _coerce_pair(args[0], args[1])
        return _CMP[code](a, b)
    if code in _ARITH:
        if code == "-" and len(args) == 1:
            return np.negative(args[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            return _ARITH[code](args[0], args[1])
    raise ExecutionError(f"unsupported operator {code!r}")


# -- counting ---------------------------------------------------------------------------------


def _table_of(dag: QueryDag, alias: int) -> str:
    return dag.attrs[dag.table_of_alias(alias)]["name"]


def _filter_key(dag: QueryDag, alias: int, c: int) -> tuple[str, str, str]:
    return (_table_of(dag, alias), dag.attrs[alias].get("name", ""), dag.expr_key(c))


def _classify(dag: QueryDag):
    """Split the top-level conjuncts into per-alias filters, equi-joins and the rest."""
    aliases = dag.aliases()
    filters: dict[int, list[int]] = {a: [] for a in aliases}
    joins: list[tuple[int, int]] = []
    residual: list[int] = []
    for c in dag.conjuncts():
        under = dag.aliases_under(c)
        pair = dag.equi_join(c)
        if pair is not None:
            joins.append(pair)
        elif len(under) == 1:
            filters[next(iter(under))].append(c)
        elif len(under) == 0:
            residual.append(c)
        else:
            residual.append(c)
    return aliases, filters, joins, residual


def _alias_rows(dag: QueryDag, data: Dataset, alias: int, conj: list[int],
                cache: dict | None) -> np.ndarray:
    """Row indices of ``alias`` passing all of its filters."""
    table = data.tables.get(_table_of(dag, alias))
    if table is None:
        raise ExecutionError(f"table {_table_of(dag, alias)!r} is not loaded")
    n = table.size
    mask = np.ones(n, dtype=bool)
    env = _Env(dag, data, {alias: None})
    for c in conj:
        key = _filter_key(dag, alias, c)
        m = cache.get(key) if cache is not None else None
        if m is None:
            m = np.broadcast_to(np.asarray(evaluate(dag, c, env), dtype=bool), (n,))
            if cache is not None:
                cache[key] = m
        mask &= m
    return np.nonzero(mask)[0]


def _is_tree(aliases: list[int], edges: list[tuple[int, int]]) -> bool:
    if len(edges) != len(aliases) - 1:
        return False
    parent = {a: a for a in aliases}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a
    for x, y in edges:
        rx, ry = find(x), find(y)
        if rx == ry:
            return False
        parent[rx] = ry
    return True


def _key_codes(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Map two key arrays onto shared dense nonnegative codes."""
    if a.dtype.kind in "iu" and b.dtype.kind in "iu":
        lo = min(a.min(initial=0), b.min(initial=0))
        hi = max(a.max(initial=0), b.max(initial=0))
        if lo >= 0 and hi < 4 * (len(a) + len(b)) + 1024:
            return a, b, int(hi) + 1
    if a.dtype.kind == "f" or b.dtype.kind == "f":
        a, b = a.astype(np.float64), b.astype(np.float64)
    uniq, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    return inv[: len(a)], inv[len(a):], len(uniq)


def _sum_by(codes: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    out = np.bincount(codes, weights=weights.astype(np.float64), minlength=size)
    if out.size and out.max() < 2.0 ** 52:
        return np.rint(out).astype(np.int64)
    exact = np.zeros(size, dtype=object)
    np.add.at(exact, codes, weights.astype(object))
    return exact


def _tree_count(dag: QueryDag, data: Dataset, aliases, rows, joins) -> int:
    """Count a tree-shaped equi-join by passing per-key row counts towards a root."""
    adj: dict[int, list[tuple[int, int, int]]] = {a: [] for a in aliases}
    for x_col, y_col in joins:
        x, y = dag.alias_of_column(x_col), dag.alias_of_column(y_col)
        adj[x].append((y, x_col, y_col))
        adj[y].append((x, y_col, x_col))

    def values(alias, col):
        return _Env(dag, data, {alias: rows[alias]}).column(col)

    def weight(alias, parent):
        w = np.ones(len(rows[alias]), dtype=np.int64)
        for child, my_col, child_col in adj[alias]:
            if child == parent:
                continue
            cw = weight(child, alias)
            mine, theirs, size = _key_codes(values(alias, my_col), values(child, child_col))
            w = w * _sum_by(theirs, cw, size)[mine]
        return w

    total = weight(aliases[0], None).sum()
    return int(total)


def _materialize_count(dag: QueryDag, data: Dataset, aliases, rows, joins, residual,
                       max_rows: int) -> int:
    """Build the joined index tuples step by step, then apply leftover predicates."""
    joined = {aliases[0]: rows[aliases[0]]}
    n = len(rows[aliases[0]])
    pending = list(joins)
    remaining = list(aliases[1:])
    while remaining:
        step = None
        for k, (x_col, y_col) in enumerate(pending):
            x, y = dag.alias_of_column(x_col), dag.alias_of_column(y_col)
            if x in joined and y not in joined:
                step = (k, x_col, y_col, y)
            elif y in joined and x not in joined:
                step = (k, y_col, x_col, x)
            if step:
                break
        if step is None:
            new = remaining[0]
            right = rows[new]
            if n * len(right) > max_rows:
                raise BudgetExceeded("cross product exceeds the materialization budget")
            li = np.repeat(np.arange(n), len(right))
            ri = np.tile(right, n)
        else:
            k, in_col, out_col, new = step
            pending.pop(k)
            left_vals = _Env(dag, data, joined).column(in_col)
            right_vals = _Env(dag, data, {new: rows[new]}).column(out_col)
            li, rpos = _equi_pairs(left_vals, right_vals, max_rows)
            ri = rows[new][rpos]
        joined = {a: idx[li] for a, idx in joined.items()}
        joined[new] = ri
        n = len(ri)
        remaining.remove(new)
    env = _Env(dag, data, joined)
    mask = np.ones(n, dtype=bool)
    for x_col, y_col in pending:
        mask &= env.column(x_col) == env.column(y_col)
    for c in residual:
        mask &= np.broadcast_to(np.asarray(evaluate(dag, c, env), dtype=bool), (n,))
    return int(mask.sum())


def _equi_pairs(left: np.ndarray, right: np.ndarray, max_rows: int):
    """All (i, j) with left[i] == right[j], via sorting."""
    lc, rc, _ = _key_codes(left, right)
    order = np.argsort(rc, kind="stable")
    rs = rc[order]
    lo = np.searchsorted(rs, lc, side="left")
    hi = np.searchsorted(rs, lc, side="right")
    cnt = hi - lo
    total = int(cnt.sum())
    if total > max_rows:
        raise BudgetExceeded(f"join produces {total} rows, over the budget of {max_rows}")
    li = np.repeat(np.arange(len(left)), cnt)
    offs = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    return li, order[np.repeat(lo, cnt) + offs]


def _nested_loop_count(dag: QueryDag, data: Dataset, aliases, rows, joins, residual,
                       max_steps: int) -> int:
    """Reference semantics: loop over every combination of filtered rows.

    The innermost alias is scanned as one vector per outer combination.
    """
    steps = math.prod(data.tables[_table_of(dag, a)].size for a in aliases)
    if steps > max_steps:
        raise BudgetExceeded(f"{steps} nested-loop steps exceed the budget of {max_steps}")
    *outer, inner = aliases
    conds = [("eq", x, y) for x, y in joins] + [("expr", c, None) for c in residual]
    total = 0
    for combo in itertools.product(*(rows[a] for a in outer)):
        m = len(rows[inner])
        env_rows = {a: np.full(m, i) for a, i in zip(outer, combo)}
        env_rows[inner] = rows[inner]
        env = _Env(dag, data, env_rows)
        mask = np.ones(m, dtype=bool)
        for kind, a, b in conds:
            if kind == "eq":
                mask &= env.column(a) == env.column(b)
            else:
                mask &= np.broadcast_to(np.asarray(evaluate(dag, a, env), dtype=bool), (m,))
        total += int(mask.sum())
    return total


def true_cardinality(dag: QueryDag, data: Dataset, method: str = "hash",
                     cache: dict | None = None, max_steps: int = 10 ** 9) -> int:
    """Exact COUNT(*) of ``dag`` over ``data``.

    ``method="nested_loop"`` is the reference executor and refuses inputs
    whose product of table sizes exceeds ``max_steps``.  ``method="hash"``
    counts tree-shaped equi-joins by per-key aggregation and materializes
    everything else; both give identical counts.  ``cache`` memoizes
    per-alias filter masks across calls.
    """
    aliases, filters, joins, residual = _classify(dag)
    if not aliases:
        raise ExecutionError("query references no table")
    rows = {a: _alias_rows(dag, data, a, filters[a], cache) for a in aliases}
    if method == "nested_loop":
        return _nested_loop_count(dag, data, aliases, rows, joins, residual, max_steps)
    if method != "hash":
        raise ValueError(f"unknown method {method!r}")
    if residual:
        return _materialize_count(dag, data, aliases, rows, joins, residual, max_steps)
    edges = [(dag.alias_of_column(x), dag.alias_of_column(y)) for x, y in joins]
    # split into connected components; counts multiply across a cross product
    comps = _components(aliases, edges)
    total = 1
    for comp in comps:
        cjoins = [(x, y) for x, y in joins if dag.alias_of_column(x) in comp]
        cedges = [(dag.alias_of_column(x), dag.alias_of_column(y)) for x, y in cjoins]
        if _is_tree(comp, cedges):
            total *= _tree_count(dag, data, comp, rows, cjoins)
        else:
            total *= _materialize_count(dag, data, comp, rows, cjoins, [], max_steps)
        if total == 0:
            return 0
    return int(total)


def _components(aliases, edges) -> list[list[int]]:
    adj = {a: set() for a in aliases}
    for x, y in edges:
        adj[x].add(y)
        adj[y].add(x)
    seen, out = set(), []
    for a in aliases:
        if a in seen:
            continue
        comp, stack = [], [a]
        seen.add(a)
        while stack:
            k = stack.pop()
            comp.append(k)
            for nb in adj[k]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        out.append(sorted(comp))
    return out
