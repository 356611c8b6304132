"""Query graphs: typed, attributed DAGs built from a small SQL subset.

A parsed query becomes a DAG whose nodes are tables, aliases, columns,
literals, operators and function calls.  Data flows towards the root:
``table -> alias -> column -> op <- literal``, and junctions (AND/OR) sit
above the predicates they combine.
"""
from __future__ import annotations

import datetime as _dt
import enum
import itertools
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence


class ParseError(ValueError):
    """Unsupported or malformed SQL; ``pos`` is the character offset."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class SemanticError(ValueError):
    pass


class CycleError(ValueError):
    pass


class NodeType(enum.IntEnum):
    TABLE = 0
    ALIAS = 1
    COLUMN = 2
    LITERAL = 3
    OP = 4
    FUNCTION = 5
    JOIN = 6
    SCAN = 7

    @property
    def tag(self) -> str:
        return self.name.lower()


class AttrKey(NamedTuple):
    node_type: NodeType
    attr_name: str

    def __str__(self):
        return f"({self.node_type.tag}, {self.attr_name})"


_UNIVERSE: list[AttrKey] = []


def register_attr(node_type: NodeType, attr_name: str) -> AttrKey:
    """Add ``(node_type, attr_name)`` to the ordered attribute universe."""
    key = AttrKey(NodeType(node_type), attr_name)
    if key not in _UNIVERSE:
        _UNIVERSE.append(key)
    return key


def attribute_universe() -> tuple[AttrKey, ...]:
    return tuple(_UNIVERSE)


TABLE_NAME = register_attr(NodeType.TABLE, "name")
TABLE_SIZE = register_attr(NodeType.TABLE, "size")
ALIAS_NAME = register_attr(NodeType.ALIAS, "name")
COLUMN_NAME = register_attr(NodeType.COLUMN, "name")
COLUMN_TYPE = register_attr(NodeType.COLUMN, "type")
COLUMN_NUM_UNIQUES = register_attr(NodeType.COLUMN, "numUniques")
COLUMN_MIN = register_attr(NodeType.COLUMN, "minVal")
COLUMN_MAX = register_attr(NodeType.COLUMN, "maxVal")
LITERAL_VALUE = register_attr(NodeType.LITERAL, "value")
LITERAL_KIND = register_attr(NodeType.LITERAL, "kind")
OP_CODE = register_attr(NodeType.OP, "code")
FUNCTION_NAME = register_attr(NodeType.FUNCTION, "name")
JOIN_TYPE = register_attr(NodeType.JOIN, "type")
SCAN_TYPE = register_attr(NodeType.SCAN, "type")


def parse_attr_key(text: str) -> AttrKey:
    """``"column.name"``, ``"column,name"`` or ``"(column, name)"`` -> registered AttrKey."""
    t, _, a = re.split(r"([.,])", text.strip().strip("()"), maxsplit=1)
    key = AttrKey(NodeType[t.strip().upper()], a.strip())
    if key not in _UNIVERSE:
        raise KeyError(f"unregistered attribute {text!r}")
    return key


# ---------------------------------------------------------------------------
# The DAG


class cached_property:
    """Lock-free per-instance memo; also works on frozen dataclasses."""

    def __init__(self, fn):
        self.fn = fn
        self.name = fn.__name__

    def __set_name__(self, owner, name):
        self.name = name

    def __get__(self, obj, owner=None):
        if obj is None:
            return self
        val = self.fn(obj)
        obj.__dict__[self.name] = val
        return val


@dataclass(frozen=True, eq=False)
class QueryDag:
    """Immutable attributed DAG.

    ``attrs[j]`` maps attribute names of node ``j``'s own type to strings;
    ``value(j, key)`` returns ``""`` for anything absent.  Edge order is
    meaningful for operators: predecessors listed in edge order are the
    operands, left to right.
    """

    types: tuple[NodeType, ...]
    attrs: tuple[Mapping[str, str], ...]
    edges: tuple[tuple[int, int], ...]
    root: int

    def __post_init__(self):
        n = len(self.types)
        if len(self.attrs) != n:
            raise ValueError("attrs and types differ in length")
        for u, v in self.edges:
            if not (0 <= u < n and 0 <= v < n) or u == v:
                raise ValueError(f"bad edge ({u}, {v})")
        if n and not 0 <= self.root < n:
            raise ValueError("root out of range")
        self.topological_order()

    @property
    def n_nodes(self) -> int:
        return len(self.types)

    def value(self, j: int, key: AttrKey) -> str:
        if self.types[j] != key.node_type:
            return ""
        return self.attrs[j].get(key.attr_name, "")

    @cached_property
    def predecessors(self) -> tuple[tuple[int, ...], ...]:
        preds: list[list[int]] = [[] for _ in self.types]
        for u, v in self.edges:
            preds[v].append(u)
        return tuple(tuple(p) for p in preds)

    @cached_property
    def successors(self) -> tuple[tuple[int, ...], ...]:
        succ: list[list[int]] = [[] for _ in self.types]
        for u, v in self.edges:
            succ[u].append(v)
        return tuple(tuple(s) for s in succ)

    def topological_order(self, reverse: bool = False) -> list[int]:
        """Kahn's algorithm, FIFO from the sources in id order; ``reverse`` walks E transposed."""
        return self._topo_reverse if reverse else self._topo_forward

    @cached_property
    def _topo_forward(self) -> list[int]:
        return _kahn(len(self.types), self.edges)

    @cached_property
    def _topo_reverse(self) -> list[int]:
        return _kahn(len(self.types), [(v, u) for u, v in self.edges])

    def relabel(self, perm: Sequence[int]) -> "QueryDag":
        """Return the isomorphic DAG where old node ``i`` becomes ``perm[i]``."""
        n = self.n_nodes
        inv = [0] * n
        for old, new in enumerate(perm):
            inv[new] = old
        return QueryDag(
            types=tuple(self.types[inv[k]] for k in range(n)),
            attrs=tuple(self.attrs[inv[k]] for k in range(n)),
            edges=tuple((perm[u], perm[v]) for u, v in self.edges),
            root=perm[self.root],
        )

    # -- helpers used by the estimators and the executor -------------------

    def nodes_of(self, node_type: NodeType) -> list[int]:
        return [j for j, t in enumerate(self.types) if t == node_type]

    def ancestors(self, j: int) -> set[int]:
        seen = set()
        stack = [j]
        while stack:
            k = stack.pop()
            for p in self.predecessors[k]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def alias_of_column(self, col: int) -> int:
        return self.predecessors[col][0]

    def table_of_alias(self, alias: int) -> int:
        return self.predecessors[alias][0]

    def aliases(self) -> list[int]:
        return self.nodes_of(NodeType.ALIAS)

    @property
    def n_join(self) -> int:
        return max(len(self.aliases()) - 1, 0)

    def conjuncts(self) -> list[int]:
        """Top-level AND operands; ``[]`` when the root is not a predicate."""
        r = self.root
        t = self.types[r]
        if t == NodeType.OP and self.value(r, OP_CODE) == "AND":
            return list(self.predecessors[r])
        if t in (NodeType.OP, NodeType.FUNCTION, NodeType.LITERAL, NodeType.COLUMN):
            return [r]
        return []

    def aliases_under(self, j: int) -> frozenset[int]:
        nodes = self.ancestors(j) | {j}
        return frozenset(k for k in nodes if self.types[k] == NodeType.ALIAS)

    def equi_join(self, j: int) -> tuple[int, int] | None:
        """Column pair ``(a, b)`` when ``j`` is ``a = b`` across two aliases."""
        if self.types[j] != NodeType.OP or self.value(j, OP_CODE) != "=":
            return None
        ops = self.predecessors[j]
        if len(ops) != 2 or any(self.types[o] != NodeType.COLUMN for o in ops):
            return None
        a, b = ops
        if self.alias_of_column(a) == self.alias_of_column(b):
            return None
        return a, b

    def table_sizes(self) -> list[int]:
        """Size of the table behind every alias (self-joins repeat)."""
        out = []
        for a in self.aliases():
            s = self.value(self.table_of_alias(a), TABLE_SIZE)
            out.append(int(float(s)) if s else 0)
        return out

    def expr_key(self, j: int) -> str:
        """Deterministic text of the expression rooted at ``j`` (cache key)."""
        t = self.types[j]
        if t == NodeType.COLUMN:
            alias = self.alias_of_column(j)
            return f"{self.attrs[alias].get('name', '')}.{self.attrs[j].get('name', '')}"
        if t == NodeType.ALIAS:
            return f"@{self.attrs[j].get('name', '')}"
        if t == NodeType.LITERAL:
            return f"{self.attrs[j].get('kind', '')}:{self.attrs[j].get('value', '')!r}"
        name = self.attrs[j].get("code") or self.attrs[j].get("name", "")
        inner = ",".join(self.expr_key(p) for p in self.predecessors[j])
        return f"{t.tag}:{name}({inner})"

    def subgraph(self, roots: Sequence[int], junction: str = "AND") -> "QueryDag":
        """Sub-DAG of all ancestors of ``roots``.

        With several roots a fresh junction node is added on top of them.
        Node ids are renumbered in their original order.
        """
        keep: set[int] = set(roots)
        for r in roots:
            keep |= self.ancestors(r)
        order = sorted(keep)
        remap = {old: new for new, old in enumerate(order)}
        types = [self.types[j] for j in order]
        attrs = [self.attrs[j] for j in order]
        edges = [(remap[u], remap[v]) for u, v in self.edges if u in keep and v in keep]
        if len(roots) == 1:
            root = remap[roots[0]]
        else:
            root = len(types)
            types.append(NodeType.OP)
            attrs.append({"code": junction})
            edges.extend((remap[r], root) for r in roots)
        return QueryDag(tuple(types), tuple(attrs), tuple(edges), root)


def _kahn(n: int, edges: Iterable[tuple[int, int]]) -> list[int]:
    indeg = [0] * n
    out: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        indeg[v] += 1
        out[u].append(v)
    order = [j for j in range(n) if indeg[j] == 0]
    for j in order:  # grows while iterating: a FIFO queue
        for v in out[j]:
            indeg[v] -= 1
            if indeg[v] == 0:
                order.append(v)
    if len(order) != n:
        raise CycleError("graph has a cycle")
    return order


@dataclass
class SubqueryRecord:
    dag: QueryDag
    true_cardinality: int | None = None

    def __post_init__(self):
        if self.true_cardinality is not None and self.true_cardinality < 0:
            raise ValueError("cardinality must be nonnegative")


# ---------------------------------------------------------------------------
# Schema binding

COLUMN_TYPES = ("int", "float", "string", "date")


@dataclass
class ColumnInfo:
    type: str
    min: float | str | None = None
    max: float | str | None = None
    num_uniques: int | None = None

    def __post_init__(self):
        if self.type not in COLUMN_TYPES:
            raise SemanticError(f"unknown column type {self.type!r}")


@dataclass
class TableInfo:
    name: str
    size: int
    columns: dict[str, ColumnInfo] = field(default_factory=dict)


@dataclass
class Schema:
    """Table name -> column name -> type and summary statistics."""

    tables: dict[str, TableInfo] = field(default_factory=dict)

    def column(self, table: str, col: str) -> ColumnInfo:
        try:
            return self.tables[table].columns[col]
        except KeyError:
            raise SemanticError(f"unknown column {table}.{col}") from None

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        tables = {}
        for tname, cols in d.items():
            infos = {}
            size = 0
            for cname, c in cols.items():
                size = int(c.get("table_size", size) or 0)
                infos[cname] = ColumnInfo(
                    type=c["type"], min=c.get("min"), max=c.get("max"),
                    num_uniques=c.get("num_uniques"),
                )
            tables[tname] = TableInfo(tname, size, infos)
        return cls(tables)

    def to_dict(self) -> dict:
        return {
            t.name: {
                cname: {"type": c.type, "min": c.min, "max": c.max,
                        "num_uniques": c.num_uniques, "table_size": t.size}
                for cname, c in t.columns.items()
            }
            for t in self.tables.values()
        }

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _fmt_stat(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


# ---------------------------------------------------------------------------
# Tokenizer and parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<number>\d+\.\d*|\.\d+|\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<qident>"[^"]+")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<op><=|>=|<>|!=|=|<|>|\(|\)|,|\.|\*|\+|-|/|;)
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "IN", "AS", "JOIN", "INNER",
    "ON", "BETWEEN", "DATE", "GROUP", "HAVING", "ORDER", "LIMIT", "UNION",
    "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "LIKE", "IS", "NULL", "EXISTS",
}
_UNSUPPORTED = {"GROUP", "HAVING", "ORDER", "LIMIT", "UNION", "LEFT", "RIGHT",
                "FULL", "OUTER", "CROSS", "LIKE", "IS", "NULL", "EXISTS"}
_COMPARISONS = {"=", "<", "<=", ">", ">=", "<>", "!="}
_FLIP = {"=": "=", "<>": "<>", "<": ">", "<=": ">=", ">": "<", ">=": "<="}


class _Tok(NamedTuple):
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        val = m.group()
        if kind == "ident" and val.upper() in _KEYWORDS:
            toks.append(_Tok("kw", val.upper(), pos))
        elif kind == "qident":
            toks.append(_Tok("ident", val[1:-1], pos))
        elif kind != "ws":
            toks.append(_Tok(kind, val, pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


# AST, kept private: tuples tagged by their first element.
#   ("col", qualifier|None, name, pos)
#   ("lit", value_text, kind, pos)      kind in number|string|date
#   ("op", code, [operands], pos)
#   ("fn", name, [args], pos)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def accept(self, kind: str, text: str | None = None) -> _Tok | None:
        if self.at(kind, text):
            return self.take()
        return None

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        if not self.at(kind, text):
            want = text or kind
            raise ParseError(f"expected {want!r}, found {self.tok.text or 'end of input'!r}", self.tok.pos)
        return self.take()

    def check_supported(self):
        t = self.tok
        if t.kind == "kw" and t.text in _UNSUPPORTED:
            raise ParseError(f"unsupported syntax {t.text}", t.pos)

    # statement ------------------------------------------------------------

    def statement(self):
        self.expect("kw", "SELECT")
        depth = 0
        # The select list does not affect cardinality; skip it.
        while not (depth == 0 and self.at("kw", "FROM")):
            t = self.take()
            if t.kind == "eof":
                raise ParseError("expected FROM", t.pos)
            if t.kind == "kw" and t.text == "SELECT":
                raise ParseError("subqueries are not supported", t.pos)
            depth += t.text == "("
            depth -= t.text == ")"
        self.expect("kw", "FROM")
        tables = [self.table_ref()]
        preds = []
        while True:
            self.check_supported()
            if self.accept("op", ","):
                tables.append(self.table_ref())
            elif self.at("kw", "JOIN") or self.at("kw", "INNER"):
                self.accept("kw", "INNER")
                self.expect("kw", "JOIN")
                tables.append(self.table_ref())
                self.expect("kw", "ON")
                preds.append(self.expr())
            else:
                break
        if self.accept("kw", "WHERE"):
            preds.append(self.expr())
        self.check_supported()
        self.accept("op", ";")
        if not self.at("eof"):
            raise ParseError(f"unexpected {self.tok.text!r}", self.tok.pos)
        return tables, preds

    def table_ref(self):
        if self.at("op", "("):
            raise ParseError("subqueries are not supported", self.tok.pos)
        t = self.expect("ident")
        alias = t.text
        if self.accept("kw", "AS"):
            alias = self.expect("ident").text
        elif self.at("ident"):
            alias = self.take().text
        return t.text, alias, t.pos

    # expressions ----------------------------------------------------------

    def expr(self):
        return self.or_expr()

    def or_expr(self):
        pos = self.tok.pos
        items = [self.and_expr()]
        while self.accept("kw", "OR"):
            items.append(self.and_expr())
        return items[0] if len(items) == 1 else ("op", "OR", items, pos)

    def and_expr(self):
        pos = self.tok.pos
        items = [self.not_expr()]
        while self.accept("kw", "AND"):
            items.append(self.not_expr())
        return items[0] if len(items) == 1 else ("op", "AND", items, pos)

    def not_expr(self):
        t = self.accept("kw", "NOT")
        if t:
            return ("op", "NOT", [self.not_expr()], t.pos)
        return self.comparison()

    def comparison(self):
        self.check_supported()
        left = self.additive()
        t = self.tok
        if t.kind == "op" and t.text in _COMPARISONS:
            self.take()
            code = "<>" if t.text == "!=" else t.text
            right = self.additive()
            return ("op", code, [left, right], t.pos)
        negated = False
        if self.at("kw", "NOT"):
            nxt = self.toks[self.i + 1]
            if nxt.kind == "kw" and nxt.text in ("IN", "BETWEEN"):
                self.take()
                negated = True
        if self.accept("kw", "IN"):
            self.expect("op", "(")
            if self.at("kw", "SELECT"):
                raise ParseError("subqueries are not supported", self.tok.pos)
            items = [self.additive()]
            while self.accept("op", ","):
                items.append(self.additive())
            self.expect("op", ")")
            return ("op", "NOT IN" if negated else "IN", [left, *items], t.pos)
        if self.accept("kw", "BETWEEN"):
            lo = self.additive()
            self.expect("kw", "AND")
            hi = self.additive()
            node = ("op", "AND", [("op", ">=", [left, lo], t.pos), ("op", "<=", [left, hi], t.pos)], t.pos)
            return ("op", "NOT", [node], t.pos) if negated else node
        if negated:
            raise ParseError("expected IN or BETWEEN after NOT", self.tok.pos)
        return left

    def additive(self):
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            t = self.take()
            left = ("op", t.text, [left, self.term()], t.pos)
        return left

    def term(self):
        left = self.factor()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            t = self.take()
            left = ("op", t.text, [left, self.factor()], t.pos)
        return left

    def factor(self):
        t = self.tok
        if t.kind == "number":
            self.take()
            return ("lit", t.text, "number", t.pos)
        if t.kind == "op" and t.text == "-" and self.toks[self.i + 1].kind == "number":
            self.take()
            n = self.take()
            return ("lit", "-" + n.text, "number", t.pos)
        if t.kind == "string":
            self.take()
            return ("lit", t.text[1:-1].replace("''", "'"), "string", t.pos)
        if t.kind == "kw" and t.text == "DATE" and self.toks[self.i + 1].kind == "string":
            self.take()
            s = self.take()
            return ("lit", s.text[1:-1], "date", t.pos)
        if self.accept("op", "("):
            if self.at("kw", "SELECT"):
                raise ParseError("subqueries are not supported", self.tok.pos)
            e = self.expr()
            self.expect("op", ")")
            return e
        if t.kind == "ident":
            self.take()
            if self.accept("op", "("):
                args = []
                if not self.at("op", ")"):
                    args.append(self.expr())
                    while self.accept("op", ","):
                        args.append(self.expr())
                self.expect("op", ")")
                return ("fn", t.text.upper(), args, t.pos)
            if self.accept("op", "."):
                c = self.expect("ident")
                return ("col", t.text, c.text, t.pos)
            return ("col", None, t.text, t.pos)
        self.check_supported()
        raise ParseError(f"unexpected {t.text or 'end of input'!r}", t.pos)


def _canonical_number(text: str) -> str:
    if re.fullmatch(r"-?\d+", text):
        return str(int(text))
    v = float(text)
    return str(int(v)) if v.is_integer() else repr(v)


class _Builder:
    def __init__(self, schema: Schema | None):
        self.schema = schema
        self.types: list[NodeType] = []
        self.attrs: list[dict[str, str]] = []
        self.edges: list[tuple[int, int]] = []
        self.table_nodes: dict[str, int] = {}
        self.alias_nodes: dict[str, int] = {}
        self.alias_table: dict[str, str] = {}
        self.column_nodes: dict[tuple[str, str], int] = {}

    def node(self, t: NodeType, **attrs) -> int:
        self.types.append(t)
        self.attrs.append({k: v for k, v in attrs.items()})
        return len(self.types) - 1

    def add_table(self, table: str, alias: str, pos: int):
        if self.schema is not None and table not in self.schema.tables:
            raise SemanticError(f"unknown table {table!r} at position {pos}")
        if alias in self.alias_nodes:
            raise SemanticError(f"duplicate alias {alias!r} at position {pos}")
        if table not in self.table_nodes:
            attrs = {"name": table}
            if self.schema is not None:
                attrs["size"] = str(self.schema.tables[table].size)
            self.table_nodes[table] = self.node(NodeType.TABLE, **attrs)
        a = self.node(NodeType.ALIAS, name=alias)
        self.edges.append((self.table_nodes[table], a))
        self.alias_nodes[alias] = a
        self.alias_table[alias] = table

    def column(self, qualifier: str | None, name: str, pos: int) -> int:
        if qualifier is None:
            if self.schema is None:
                owners = list(self.alias_table) if len(self.alias_table) == 1 else []
            else:
                owners = [a for a, t in self.alias_table.items()
                          if name in self.schema.tables[t].columns]
            if len(owners) != 1:
                what = "ambiguous" if owners else "unknown"
                raise SemanticError(f"{what} column {name!r} at position {pos}")
            qualifier = owners[0]
        if qualifier not in self.alias_nodes:
            raise SemanticError(f"unknown table or alias {qualifier!r} at position {pos}")
        key = (qualifier, name)
        if key in self.column_nodes:
            return self.column_nodes[key]
        table = self.alias_table[qualifier]
        attrs = {"name": name}
        if self.schema is not None:
            info = self.schema.tables[table].columns.get(name)
            if info is None:
                raise SemanticError(f"unknown column {table}.{name} at position {pos}")
            attrs.update(type=info.type, numUniques=_fmt_stat(info.num_uniques),
                         minVal=_fmt_stat(info.min), maxVal=_fmt_stat(info.max))
        c = self.node(NodeType.COLUMN, **attrs)
        self.edges.append((self.alias_nodes[qualifier], c))
        self.column_nodes[key] = c
        return c

    def column_type(self, ast) -> str:
        if ast[0] == "col" and self.schema is not None:
            q = ast[1]
            if q is None:
                q = next((a for a, t in self.alias_table.items()
                          if ast[2] in self.schema.tables[t].columns), None)
            if q not in self.alias_table:
                return ""
            info = self.schema.tables[self.alias_table[q]].columns.get(ast[2])
            return info.type if info else ""
        return ""

    def expr(self, ast, kind_hint: str = "") -> int:
        tag = ast[0]
        if tag == "col":
            return self.column(ast[1], ast[2], ast[3])
        if tag == "lit":
            _, text, kind, pos = ast
            if kind == "number":
                text = _canonical_number(text)
            elif kind == "string" and kind_hint == "date":
                kind = "date"
            if kind == "date":
                try:
                    text = _dt.date.fromisoformat(text).isoformat()
                except ValueError:
                    raise SemanticError(f"bad date literal {text!r} at position {pos}") from None
            return self.node(NodeType.LITERAL, value=text, kind=kind)
        if tag == "fn":
            _, name, args, _pos = ast
            j = self.node(NodeType.FUNCTION, name=name)
            for a in args:
                self.edges.append((self.expr(a), j))
            return j
        _, code, operands, _pos = ast
        if code in _FLIP and len(operands) == 2 and operands[0][0] == "lit" and operands[1][0] != "lit":
            code = _FLIP[code]
            operands = [operands[1], operands[0]]
        if code in ("AND", "OR"):
            operands = _flatten(code, operands)
        hint = ""
        if code in _FLIP or code in ("IN", "NOT IN"):
            hint = next((h for h in map(self.column_type, operands) if h), "")
        j = self.node(NodeType.OP, code=code)
        for o in operands:
            self.edges.append((self.expr(o, hint), j))
        return j


def _flatten(code: str, items: list) -> list:
    out = []
    for it in items:
        if it[0] == "op" and it[1] == code:
            out.extend(_flatten(code, it[2]))
        else:
            out.append(it)
    return out


def parse_sql(text: str, schema: Schema | None = None) -> QueryDag:
    """Parse one SELECT statement into a query DAG.

    Table and column references are merged into single nodes, every column
    hangs under ``table -> alias``, and the WHERE / ON predicates form the
    expression tree above them.  The root is the top predicate node, or the
    first alias when there is no predicate.
    """
    tables, preds = _Parser(text).statement()
    b = _Builder(schema)
    for table, alias, pos in tables:
        b.add_table(table, alias, pos)
    if not preds:
        root = b.alias_nodes[tables[0][1]]
    else:
        ast = preds[0] if len(preds) == 1 else ("op", "AND", preds, 0)
        if ast[0] == "op" and ast[1] == "AND":
            ast = ("op", "AND", _flatten("AND", ast[2]), ast[3])
        root = b.expr(ast)
    return QueryDag(tuple(b.types), tuple(b.attrs), tuple(b.edges), root)


def read_sql_file(path) -> list[str]:
    """One statement per line; blank lines and ``--`` comments skipped."""
    out = []
    with open(path) as fh:
        for line in fh:
            s = line.split("--", 1)[0].strip() if not _in_string_comment(line) else line.strip()
            if s:
                out.append(s)
    return out


def _in_string_comment(line: str) -> bool:
    idx = line.find("--")
    return idx >= 0 and line[:idx].count("'") % 2 == 1


# ---------------------------------------------------------------------------
# Subquery enumeration


def enumerate_subqueries(dag: QueryDag) -> list[QueryDag]:
    """Subquery DAGs a plan optimizer would estimate.

    For every connected set of aliases in the equi-join graph (cross
    products are skipped) the sub-DAG carries all conjuncts whose aliases
    lie inside the set.  Single-table sets with several conjuncts also
    yield one sub-DAG per conjunct, before their conjunction.  Output is
    ordered by set size, then by alias ids.
    """
    aliases = dag.aliases()
    if not aliases:
        return []
    conj = dag.conjuncts()
    conj_aliases = [dag.aliases_under(c) for c in conj]
    adj: dict[int, set[int]] = {a: set() for a in aliases}
    for c in conj:
        pair = dag.equi_join(c)
        if pair:
            x, y = (dag.alias_of_column(k) for k in pair)
            adj[x].add(y)
            adj[y].add(x)

    out = []
    for size in range(1, len(aliases) + 1):
        for subset in itertools.combinations(aliases, size):
            s = frozenset(subset)
            if not _connected(s, adj):
                continue
            inside = [c for c, al in zip(conj, conj_aliases) if al and al <= s]
            if size == 1 and not inside:
                out.append(dag.subgraph([subset[0]]))
                continue
            if not inside:
                continue
            if size == 1 and len(inside) > 1:
                out.extend(dag.subgraph([c]) for c in inside)
            out.append(dag.subgraph(inside))
    return out


def _connected(s: frozenset[int], adj: Mapping[int, set[int]]) -> bool:
    start = next(iter(s))
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb in s and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(s)
