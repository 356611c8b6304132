"""Parse one query, look at its pattern hashes and features, then learn it online.

    python demos/walkthrough.py
"""
import numpy as np

from patterncard.baseline import HeuristicEstimator, analyze
from patterncard.featurize import featurize
from patterncard.hierarchy import EstimatorStore, StoreConfig, default_levels
from patterncard.oracle import true_cardinality
from patterncard.querygraph import enumerate_subqueries, parse_sql
from patterncard.workload import make_correlated_dataset

SQL = ("SELECT * FROM title t, movie_companies mc WHERE t.id = mc.movie_id "
       "AND t.production_year > {y} AND mc.company_type_id = 2")

data = make_correlated_dataset(sizes={"title": 20_000, "movie_companies": 30_000, "cast_info": 1000,
                                      "movie_info": 1000, "movie_keyword": 1000, "movie_info_idx": 1000})
schema = data.schema()
heuristic = HeuristicEstimator(analyze(data))

dag = parse_sql(SQL.format(y=1990), schema)
print(f"query DAG: {dag.n_nodes} nodes, {len(dag.edges)} edges, {dag.n_join} join(s)")
for sub in enumerate_subqueries(dag):
    print(f"  subquery over {len(sub.aliases())} alias(es): truth {true_cardinality(sub, data)}")

store = EstimatorStore(StoreConfig(levels=default_levels()), schema)
for lv in store.levels.values():
    canon, vec = featurize(dag, lv.pattern_feats, lv.learn_feats, schema)
    print(f"level {lv.level_id}: pattern {canon.hex[:16]}...  features {np.round(vec.values, 2).tolist()}")

# literal variants of one template all land in the same level-3 bucket
rng = np.random.default_rng(0)
print("\nyear   truth  estimate  provenance")
for i in range(30):
    y = int(rng.integers(1935, 2020))
    q = parse_sql(SQL.format(y=y), schema)
    res = store.estimate(q, heuristic)
    truth = true_cardinality(q, data)
    store.observe(q, truth, signature=res.signature, heuristic_estimate=heuristic(q))
    if i % 3 == 0:
        print(f"{y}  {truth:6d}  {res.cardinality:8d}  {res.provenance}")
print("buckets per level:", store.n_buckets())
