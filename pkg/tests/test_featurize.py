import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patterncard.canonhash import canonicalize, pattern_hash
from patterncard.featurize import (
    COLUMN_UNIQUES_FEATURE, EXTRACTOR_DIMS, LITERAL_VALUE_FEATURE, OP_CODE_FEATURE,
    FeatureExtractorSpec, SchemaError, extract, f_ascii3, f_comp, f_date3, f_num,
    f_ordinal_op, f_scaled, feature_dim, featurize, slot_ranges,
)
from patterncard.querygraph import (
    COLUMN_NAME, LITERAL_VALUE, TABLE_SIZE, NodeType, parse_attr_key, parse_sql,
)

from dagtools import H_LEVEL3, random_dag, with_literal

FIG1 = "SELECT * FROM movies WHERE stars>3 AND year IN (2024,2025)"
F3 = [LITERAL_VALUE_FEATURE]
F2 = F3 + [OP_CODE_FEATURE]
F1 = F2 + [COLUMN_UNIQUES_FEATURE]


def test_date_extractor():
    assert f_date3("2024-03-15") == [2024.0, 3.0, 15.0]


@pytest.mark.parametrize("op,expected", [("<", [0.0, 0.5]), (">", [0.5, 1.0]), ("=", [0.5, 0.5])])
def test_comp_extractor(op, expected):
    assert f_comp("5", op, 0.0, 10.0) == expected


def test_scaled_endpoints_and_clamp():
    assert f_scaled("0", 0.0, 10.0) == 0.0
    assert f_scaled("10", 0.0, 10.0) == 1.0
    assert f_scaled("-5", 0.0, 10.0) == 0.0
    assert f_scaled("25", 0.0, 10.0) == 1.0
    with pytest.raises(SchemaError):
        f_scaled("3", 4.0, 4.0)


@pytest.mark.parametrize("op,code", [
    ("=", [0, 1, 0]), (">", [0, 0, 1]), (">=", [0, 1, 1]), ("<", [1, 0, 0]), ("<=", [1, 1, 0]),
    ("IN", [0, 0, 0]), ("AND", [0, 0, 0]), ("<>", [0, 0, 0]),
])
def test_ordinal_op_table(op, code):
    assert f_ordinal_op(op) == [float(c) for c in code]


def test_ascii3():
    assert f_ascii3("abcd") == [97.0, 98.0, 99.0]
    assert f_ascii3("a") == [97.0, 0.0, 0.0]
    assert f_ascii3("") == [0.0, 0.0, 0.0]
    assert f_ascii3("é") == [float(ord("é") % 128), 0.0, 0.0]


def test_num():
    assert f_num("2.5") == [2.5]
    assert f_num("") == [0.0]


def test_declared_widths():
    assert EXTRACTOR_DIMS == {"num": 1, "scaled": 1, "comp": 2, "ascii3": 3, "date3": 3,
                              "table_size": 1, "column_range": 2, "ordinal_op": 3}


def test_fig1_dimension_under_finest_level():
    d = parse_sql(FIG1)
    n_lit = len(d.nodes_of(NodeType.LITERAL))
    assert n_lit == 3
    assert feature_dim(d, F3) == n_lit * 1 == 3
    c, x = featurize(d, H_LEVEL3, F3)
    assert x.dim == 3
    assert sorted(x.values.tolist()) == [3.0, 2024.0, 2025.0]


def test_two_literals_and_op_give_five():
    d = parse_sql("SELECT * FROM t WHERE t.x IN (1, 2)")
    assert feature_dim(d, F2) == 2 * 1 + 1 * 3 == 5
    _, x = featurize(d, H_LEVEL3, F2)
    assert x.dim == 5


def test_no_matching_nodes_gives_zero_dim():
    d = parse_sql("SELECT * FROM t")
    assert feature_dim(d, F1) == 0
    assert featurize(d, H_LEVEL3, F1)[1].dim == 0


def test_literal_kind_picks_extractor(movies_schema):
    d = parse_sql("SELECT * FROM movies WHERE released < '2001-02-03' AND title = 'Zed'", movies_schema)
    _, x = featurize(d, H_LEVEL3, F3)
    assert x.dim == 6
    assert sorted(x.values.tolist()) == sorted([2001.0, 2.0, 3.0, 90.0, 101.0, 100.0])


def test_schema_backed_extractors(movies_schema):
    d = parse_sql("SELECT * FROM movies WHERE stars < 5", movies_schema)
    comp = FeatureExtractorSpec(LITERAL_VALUE, "comp")
    scaled = FeatureExtractorSpec(LITERAL_VALUE, "scaled")
    rng = FeatureExtractorSpec(parse_attr_key("column.name"), "column_range")
    size = FeatureExtractorSpec(TABLE_SIZE, "table_size")
    c = canonicalize(d, H_LEVEL3)
    assert extract(d, c.order, [comp], movies_schema).values.tolist() == [0.0, 0.5]
    assert extract(d, c.order, [scaled], movies_schema).values.tolist() == [0.5]
    assert extract(d, c.order, [rng], movies_schema).values.tolist() == [0.0, 10.0]
    assert extract(d, c.order, [size], movies_schema).values.tolist() == [1000.0]


def test_scaled_without_stats_raises():
    d = parse_sql("SELECT * FROM movies WHERE stars < 5")
    c = canonicalize(d, H_LEVEL3)
    with pytest.raises(SchemaError):
        extract(d, c.order, [FeatureExtractorSpec(LITERAL_VALUE, "scaled")])


def test_missing_attribute_contributes_zeros():
    d = parse_sql("SELECT * FROM t WHERE t.x < 3")  # no schema: numUniques absent
    _, x = featurize(d, H_LEVEL3, [COLUMN_UNIQUES_FEATURE])
    assert x.values.tolist() == [0.0]


def test_spec_string_round_trip():
    for spec in (LITERAL_VALUE_FEATURE, OP_CODE_FEATURE, COLUMN_UNIQUES_FEATURE,
                 FeatureExtractorSpec(COLUMN_NAME, "ascii3")):
        assert FeatureExtractorSpec.from_str(spec.to_str()) == spec
    with pytest.raises(ValueError):
        FeatureExtractorSpec(COLUMN_NAME, "bogus")


def test_in_list_literals_fill_slots_in_value_order():
    a = parse_sql("SELECT * FROM t WHERE t.x IN (9, 1, 5)")
    b = parse_sql("SELECT * FROM t WHERE t.x IN (5, 9, 1)")
    xa, xb = featurize(a, H_LEVEL3, F3)[1], featurize(b, H_LEVEL3, F3)[1]
    assert xa.values.tolist() == xb.values.tolist() == [1.0, 5.0, 9.0]


def test_single_literal_perturbation_touches_only_its_slots():
    d = parse_sql("SELECT * FROM t WHERE t.x < 10 AND t.y > 3 AND t.z = 'ab'")
    c, x = featurize(d, H_LEVEL3, F1)
    slots = slot_ranges(d, c.order, F1)
    for j in d.nodes_of(NodeType.LITERAL):
        new_val = "zz" if d.attrs[j]["kind"] == "string" else "77"
        e = with_literal(d, j, new_val)
        c2, x2 = featurize(e, H_LEVEL3, F1)
        assert c2.pattern == c.pattern and x2.dim == x.dim
        changed = set(np.flatnonzero(x.values != x2.values))
        assert changed and changed <= set(slots[j])


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relabeled_graphs_give_identical_vectors(seed):
    rng = np.random.default_rng(seed)
    d = random_dag(rng)
    p = d.relabel(rng.permutation(d.n_nodes).tolist())
    ca, xa = featurize(d, H_LEVEL3, F1)
    cb, xb = featurize(p, H_LEVEL3, F1)
    assert ca.pattern == cb.pattern
    assert np.array_equal(xa.values, xb.values)
    assert xa.dim == feature_dim(d, F1)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_equal_pattern_implies_equal_dim(seed):
    # changing only literal values keeps the pattern, so the width must match
    rng = np.random.default_rng(seed)
    d = random_dag(rng)
    e = d
    for j in d.nodes_of(NodeType.LITERAL):
        if rng.random() < 0.5:
            kind = d.attrs[j]["kind"]
            e = with_literal(e, j, {"number": "12", "date": "2000-01-01", "string": "q"}[kind])
    assert pattern_hash(d, H_LEVEL3) == pattern_hash(e, H_LEVEL3)
    assert featurize(d, H_LEVEL3, F1)[1].dim == featurize(e, H_LEVEL3, F1)[1].dim
