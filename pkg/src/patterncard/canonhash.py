"""Pattern hashes and canonical node orderings for query DAGs.

Every node starts from a digest of its own pattern attributes, absorbs its
predecessors' digests in one topological sweep, then its successors' in a
sweep over the reversed edges.  Sorting the final rows yields a canonical
node order, and hashing the sorted rows yields the pattern hash.
"""
from __future__ import annotations

import hashlib
from functools import lru_cache
from dataclasses import dataclass
from typing import Any, Sequence

from .querygraph import LITERAL_KIND, AttrKey, NodeType, QueryDag, attribute_universe

DIGEST_BYTES = 32

# Attributes that fix the width of a node's feature slots; always hashed.
STRUCTURAL_ATTRS: tuple[AttrKey, ...] = (LITERAL_KIND,)


_sha256 = hashlib.sha256


def digest(data: bytes) -> bytes:
    return _sha256(data).digest()


@lru_cache(maxsize=65536)
def _field(s: str) -> bytes:
    b = s.encode("utf-8")
    return b"%d:" % len(b) + b


@lru_cache(maxsize=256)
def _attrs_by_type(pattern_feats: tuple[AttrKey, ...]) -> dict[NodeType, tuple[str, ...]]:
    out: dict[NodeType, list[str]] = {}
    for key in STRUCTURAL_ATTRS:
        out.setdefault(key.node_type, []).append(key.attr_name)
    for key in pattern_feats:
        if key not in STRUCTURAL_ATTRS:
            out.setdefault(key.node_type, []).append(key.attr_name)
    return {t: tuple(v) for t, v in out.items()}


def node_label(dag: QueryDag, j: int, pattern_feats: Sequence[AttrKey]) -> bytes:
    """Bytes hashed for node ``j`` before propagation.

    Type tag, in-degree and out-degree always lead; then the values of the
    pattern attributes that belong to this node's type, in set order.
    Fields are length-prefixed so concatenation is unambiguous.
    """
    return _labels(dag, tuple(pattern_feats), (j,))[0]


_TAG_FIELDS = {t: _field(t.tag) for t in NodeType}


def _labels(dag: QueryDag, pattern_feats: tuple[AttrKey, ...], nodes) -> list[bytes]:
    by_type = _attrs_by_type(pattern_feats)
    preds, succ, types, attrs = dag.predecessors, dag.successors, dag.types, dag.attrs
    out = []
    for j in nodes:
        t = types[j]
        parts = [_TAG_FIELDS[t], _field(str(len(preds[j]))), _field(str(len(succ[j])))]
        a = attrs[j]
        for name in by_type.get(t, ()):
            parts.append(_field(a.get(name, "")))
        out.append(b"".join(parts))
    return out


def init_node_hashes(dag: QueryDag, pattern_feats: Sequence[AttrKey]) -> list[bytes]:
    return [_sha256(b).digest() for b in _labels(dag, tuple(pattern_feats), range(dag.n_nodes))]


def propagate(hashes: Sequence[bytes], dag: QueryDag) -> list[bytes]:
    """Forward pass over E, then backward pass over E transposed.

    Updates are in place along the topological order, so each node reads
    neighbour rows that were already updated in the same pass.  Neighbour
    rows are sorted bytewise and duplicates are kept.
    """
    rows = list(hashes)
    preds = dag.predecessors
    succ = dag.successors
    sha = _sha256
    for j in dag.topological_order():
        p = preds[j]
        rows[j] = sha(rows[j] + b"".join(sorted([rows[k] for k in p])) if p else rows[j]).digest()
    for j in dag.topological_order(reverse=True):
        s = succ[j]
        rows[j] = sha(rows[j] + b"".join(sorted([rows[k] for k in s])) if s else rows[j]).digest()
    return rows


def pattern_hash_and_order(
    hashes: Sequence[bytes], tie_keys: Sequence[Any] | None = None
) -> tuple[bytes, tuple[int, ...]]:
    """Argsort the rows and hash them in that order.

    Rows that are equal are ordered by ``tie_keys`` (if given) and then by
    node id; the pattern hash does not depend on that choice.
    """
    n = len(hashes)
    if tie_keys is None:
        order = sorted(range(n), key=lambda j: (hashes[j], j))
    else:
        order = sorted(range(n), key=lambda j: (hashes[j], tie_keys[j], j))
    return digest(b"".join(hashes[j] for j in order)), tuple(order)


def node_rows(dag: QueryDag, pattern_feats: Sequence[AttrKey]) -> list[bytes]:
    return propagate(init_node_hashes(dag, pattern_feats), dag)


def pattern_hash(dag: QueryDag, pattern_feats: Sequence[AttrKey]) -> bytes:
    return digest(b"".join(sorted(node_rows(dag, pattern_feats))))


@dataclass(frozen=True)
class Canonical:
    """Pattern hash, canonical order and propagated rows of one DAG."""

    pattern: bytes
    order: tuple[int, ...]
    rows: tuple[bytes, ...]

    @property
    def hex(self) -> str:
        return self.pattern.hex()


def canonicalize(
    dag: QueryDag,
    pattern_feats: Sequence[AttrKey],
    tie_keys: Sequence[Any] | None = None,
) -> Canonical:
    """Hash and order ``dag`` under ``pattern_feats``.

    Without explicit ``tie_keys``, equal rows are ordered by the node's row
    under the whole attribute universe, then by id.
    """
    rows = node_rows(dag, pattern_feats)
    if tie_keys is None and len(set(rows)) < len(rows):
        tie_keys = node_rows(dag, attribute_universe())
    h, order = pattern_hash_and_order(rows, tie_keys)
    return Canonical(h, order, tuple(rows))


def fingerprint16(h: bytes) -> int:
    return int.from_bytes(h[:2], "big")


__all__ = [
    "Canonical", "DIGEST_BYTES", "NodeType", "STRUCTURAL_ATTRS", "canonicalize",
    "digest", "fingerprint16", "init_node_hashes", "node_label", "node_rows",
    "pattern_hash", "pattern_hash_and_order", "propagate",
]
