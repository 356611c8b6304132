import itertools

import pytest
from hypothesis import given, settings, strategies as st

from patterncard.canonhash import pattern_hash
from patterncard.querygraph import (
    ALIAS_NAME, COLUMN_NAME, OP_CODE, TABLE_NAME, CycleError, NodeType, ParseError,
    QueryDag, SemanticError, SubqueryRecord, attribute_universe, enumerate_subqueries,
    parse_attr_key, parse_sql, read_sql_file,
)

from dagtools import isomorphic

FIG1 = "SELECT * FROM movies WHERE stars>3 AND year IN (2024,2025)"
H_NO_ALIAS = [k for k in attribute_universe() if k != ALIAS_NAME]


def type_counts(dag):
    return {t.tag: len(dag.nodes_of(t)) for t in NodeType if dag.nodes_of(t)}


def test_fig1_shape():
    d = parse_sql(FIG1)
    assert (d.n_nodes, len(d.edges)) == (10, 10)
    assert type_counts(d) == {"table": 1, "alias": 1, "column": 2, "op": 3, "literal": 3}
    ops = sorted(d.value(j, OP_CODE) for j in d.nodes_of(NodeType.OP))
    assert ops == [">", "AND", "IN"]
    lits = sorted(d.attrs[j]["value"] for j in d.nodes_of(NodeType.LITERAL))
    assert lits == ["2024", "2025", "3"]
    assert d.value(d.root, OP_CODE) == "AND"


def test_no_predicate_is_table_alias_chain():
    d = parse_sql("SELECT * FROM t")
    assert [t.tag for t in d.types] == ["table", "alias"]
    assert d.edges == ((0, 1),)
    assert d.root == 1
    assert not d.nodes_of(NodeType.OP) and not d.nodes_of(NodeType.LITERAL)


def test_two_table_join_matches_hand_built_graph():
    d = parse_sql("SELECT * FROM a, b WHERE a.k=b.k AND a.v<5")
    T, A, C, L, O = NodeType.TABLE, NodeType.ALIAS, NodeType.COLUMN, NodeType.LITERAL, NodeType.OP
    # hand-built expected graph
    nodes = [
        (T, {"name": "a"}), (A, {"name": "a"}), (T, {"name": "b"}), (A, {"name": "b"}),
        (C, {"name": "k"}), (C, {"name": "k"}), (C, {"name": "v"}),
        (O, {"code": "="}), (O, {"code": "<"}), (L, {"value": "5", "kind": "number"}),
        (O, {"code": "AND"}),
    ]
    edges = [(0, 1), (2, 3), (1, 4), (3, 5), (1, 6), (4, 7), (5, 7), (6, 8), (9, 8), (7, 10), (8, 10)]
    expected = QueryDag(tuple(t for t, _ in nodes), tuple(a for _, a in nodes), tuple(edges), 10)
    assert (d.n_nodes, len(d.edges)) == (11, 11)
    assert isomorphic(d, expected, attribute_universe())
    eq = next(j for j in d.nodes_of(NodeType.OP) if d.value(j, OP_CODE) == "=")
    reached = {d.attrs[d.table_of_alias(a)]["name"] for a in d.aliases_under(eq)}
    assert reached == {"a", "b"}


def test_identical_references_are_merged():
    d = parse_sql("SELECT * FROM movies m WHERE m.year > 1990 AND m.year < 2000")
    assert len(d.nodes_of(NodeType.COLUMN)) == 1
    assert len(d.nodes_of(NodeType.TABLE)) == 1


def test_self_join_shares_table_node():
    d = parse_sql("SELECT * FROM movies a, movies b WHERE a.id = b.id")
    assert len(d.nodes_of(NodeType.TABLE)) == 1
    assert len(d.aliases()) == 2
    assert d.n_join == 1


def test_inner_join_on_equals_comma_join():
    a = parse_sql("SELECT * FROM a JOIN b ON a.k = b.k WHERE a.v < 5")
    b = parse_sql("SELECT * FROM a, b WHERE a.k = b.k AND a.v < 5")
    assert pattern_hash(a, attribute_universe()) == pattern_hash(b, attribute_universe())


def test_literal_on_left_is_flipped():
    a = parse_sql("SELECT * FROM t WHERE 5 < t.x")
    b = parse_sql("SELECT * FROM t WHERE t.x > 5")
    assert pattern_hash(a, attribute_universe()) == pattern_hash(b, attribute_universe())


def test_schema_binding_fills_column_stats(movies_schema):
    d = parse_sql("SELECT * FROM movies WHERE year > 2000 AND released < '2001-02-03'", movies_schema)
    col = {d.attrs[j]["name"]: d.attrs[j] for j in d.nodes_of(NodeType.COLUMN)}
    assert col["year"]["type"] == "int"
    assert col["year"]["numUniques"] == "126"
    assert col["year"]["minVal"] == "1900"
    kinds = {d.attrs[j]["value"]: d.attrs[j]["kind"] for j in d.nodes_of(NodeType.LITERAL)}
    assert kinds == {"2000": "number", "2001-02-03": "date"}
    t = d.nodes_of(NodeType.TABLE)[0]
    assert d.attrs[t]["size"] == "1000"


def test_function_call_becomes_node():
    d = parse_sql("SELECT * FROM t WHERE ABS(t.x) > 3")
    fns = d.nodes_of(NodeType.FUNCTION)
    assert len(fns) == 1 and d.attrs[fns[0]]["name"] == "ABS"


@pytest.mark.parametrize("sql", [
    "SELECT * FROM t GROUP BY x",
    "SELECT * FROM t WHERE x >",
    "SELECT * FROM t LEFT JOIN u ON t.a = u.a",
    "DELETE FROM t",
    "SELECT * FROM t WHERE x = (SELECT 1)",
])
def test_unsupported_syntax_raises_with_position(sql):
    with pytest.raises(ParseError) as err:
        parse_sql(sql)
    assert err.value.pos >= 0
    assert "position" in str(err.value)


def test_unknown_table_and_column(movies_schema):
    with pytest.raises(SemanticError):
        parse_sql("SELECT * FROM nosuch", movies_schema)
    with pytest.raises(SemanticError):
        parse_sql("SELECT * FROM movies WHERE movies.nosuch = 1", movies_schema)
    with pytest.raises(SemanticError):
        parse_sql("SELECT * FROM movies m, cast c WHERE zz = 1", movies_schema)


def test_ambiguous_unqualified_column(movies_schema):
    with pytest.raises(SemanticError):
        parse_sql("SELECT * FROM movies a, movies b WHERE year = 1", movies_schema)


def test_cycle_rejected():
    with pytest.raises(CycleError):
        QueryDag((NodeType.OP, NodeType.OP), ({}, {}), ((0, 1), (1, 0)), 0)


def test_absent_attribute_reads_empty():
    d = parse_sql("SELECT * FROM t")
    assert d.value(0, TABLE_NAME) == "t"
    assert d.value(0, parse_attr_key("table.size")) == ""
    assert d.value(0, COLUMN_NAME) == ""


def test_subquery_record_rejects_negative():
    with pytest.raises(ValueError):
        SubqueryRecord(parse_sql("SELECT * FROM t"), -1)


# -- subquery enumeration --------------------------------------------------------------


def test_fig1_has_three_subqueries():
    subs = enumerate_subqueries(parse_sql(FIG1))
    roots = [s.value(s.root, OP_CODE) for s in subs]
    assert roots == [">", "IN", "AND"]


def test_single_table_no_predicate():
    subs = enumerate_subqueries(parse_sql("SELECT * FROM t"))
    assert len(subs) == 1
    assert subs[0].types[subs[0].root] == NodeType.ALIAS


def alias_sets(subs):
    out = []
    for s in subs:
        out.append(frozenset(s.attrs[a]["name"] for a in s.aliases()))
    return out


def connected_subsets(nodes, edges):
    """Brute force: every subset whose induced edge set connects it."""
    out = set()
    for r in range(1, len(nodes) + 1):
        for sub in itertools.combinations(nodes, r):
            s = set(sub)
            seen = {sub[0]}
            changed = True
            while changed:
                changed = False
                for u, v in edges:
                    if u in s and v in s and (u in seen) != (v in seen):
                        seen |= {u, v}
                        changed = True
            if seen == s:
                out.add(frozenset(s))
    return out


def test_chain_join_subsets():
    sql = ("SELECT * FROM A, B, C WHERE A.k = B.k AND B.j = C.j "
           "AND A.x < 1 AND B.y < 2 AND C.z < 3")
    subs = enumerate_subqueries(parse_sql(sql))
    got = alias_sets(subs)
    assert len(subs) == 6
    assert set(got) == connected_subsets(["A", "B", "C"], [("A", "B"), ("B", "C")])
    assert frozenset({"A", "C"}) not in got


def test_star_join_subsets_match_brute_force():
    sql = ("SELECT * FROM t, a, b, c WHERE t.id = a.t AND t.id = b.t AND t.id = c.t "
           "AND a.x < 1 AND b.x < 1 AND c.x < 1 AND t.y = 2")
    got = alias_sets(enumerate_subqueries(parse_sql(sql)))
    expected = connected_subsets(["t", "a", "b", "c"], [("t", "a"), ("t", "b"), ("t", "c")])
    assert set(got) == expected
    assert len(got) == len(expected)


def test_multi_conjunct_singletons_emit_each_then_conjunction():
    subs = enumerate_subqueries(parse_sql("SELECT * FROM t WHERE t.a = 1 AND t.b < 2 AND t.c > 3"))
    assert [s.value(s.root, OP_CODE) for s in subs] == ["=", "<", ">", "AND"]


def test_enumeration_is_deterministic():
    sql = "SELECT * FROM A, B WHERE A.k = B.k AND A.x < 1 AND B.y = 'q'"
    a = [pattern_hash(s, attribute_universe()) for s in enumerate_subqueries(parse_sql(sql))]
    b = [pattern_hash(s, attribute_universe()) for s in enumerate_subqueries(parse_sql(sql))]
    assert a == b


def test_every_subquery_is_valid_dag():
    sql = "SELECT * FROM A, B, C WHERE A.k = B.k AND B.j = C.j AND A.x IN (1, 2) AND C.z <> 'u'"
    for s in enumerate_subqueries(parse_sql(sql)):
        assert len(s.topological_order()) == s.n_nodes
        assert 0 <= s.root < s.n_nodes


def test_read_sql_file_skips_comments(tmp_path):
    p = tmp_path / "w.sql"
    p.write_text("-- header\nSELECT * FROM t WHERE t.s = 'a--b'\n\nSELECT * FROM u -- trailing\n")
    assert read_sql_file(p) == ["SELECT * FROM t WHERE t.s = 'a--b'", "SELECT * FROM u"]


# -- properties ----------------------------------------------------------------------------

idents = st.sampled_from(["x", "y", "z", "w"])
ops = st.sampled_from(["=", "<", ">", "<=", ">=", "<>"])
nums = st.integers(-100, 100)


@st.composite
def predicates(draw):
    n = draw(st.integers(1, 4))
    return [f"t.{draw(idents)} {draw(ops)} {draw(nums)}" for _ in range(n)]


@settings(max_examples=60, deadline=None)
@given(predicates(), st.randoms())
def test_junction_commutativity(preds, rnd):
    shuffled = list(preds)
    rnd.shuffle(shuffled)
    a = parse_sql("SELECT * FROM t WHERE " + " AND ".join(preds))
    b = parse_sql("SELECT * FROM t WHERE " + " AND ".join(shuffled))
    assert isomorphic(a, b, attribute_universe())
    assert pattern_hash(a, attribute_universe()) == pattern_hash(b, attribute_universe())
    c = parse_sql("SELECT * FROM t WHERE " + " OR ".join(preds))
    d = parse_sql("SELECT * FROM t WHERE " + " OR ".join(shuffled))
    assert pattern_hash(c, attribute_universe()) == pattern_hash(d, attribute_universe())


@settings(max_examples=60, deadline=None)
@given(predicates(), st.sampled_from(["t", "m", "alias_1"]), st.sampled_from(["u", "q"]))
def test_alias_invariance(preds, a1, a2):
    where = " AND ".join(preds)
    x = parse_sql(f"SELECT * FROM movies {a1}, cast {a2} WHERE {a1}.id = {a2}.mid AND "
                  + where.replace("t.", f"{a1}."))
    y = parse_sql("SELECT * FROM movies m, cast c WHERE m.id = c.mid AND " + where.replace("t.", "m."))
    assert pattern_hash(x, H_NO_ALIAS) == pattern_hash(y, H_NO_ALIAS)


@settings(max_examples=40, deadline=None)
@given(predicates())
def test_parse_is_idempotent_and_acyclic(preds):
    sql = "SELECT * FROM t WHERE " + " AND ".join(preds)
    a, b = parse_sql(sql), parse_sql(sql)
    assert a.types == b.types and a.attrs == b.attrs and a.edges == b.edges
    assert len(a.topological_order()) == a.n_nodes
