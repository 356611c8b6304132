"""Synthetic correlated star-schema data and templated query workloads."""
from __future__ import annotations

import datetime as _dt
import json
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .oracle import Dataset, Table, as_column

DEFAULT_SIZES = {
    "title": 30_000,
    "movie_companies": 60_000,
    "cast_info": 100_000,
    "movie_info": 100_000,
    "movie_keyword": 100_000,
    "movie_info_idx": 40_000,
}

N_KINDS = 7
YEAR_LO, YEAR_HI = 1930, 2019
COUNTRIES = ("us", "gb", "fr", "de", "jp", "in", "it", "es")


def zipf_probs(k: int, s: float) -> np.ndarray:
    """Bounded zipf over 1..k; ``s = 0`` is uniform."""
    w = np.arange(1, k + 1, dtype=np.float64) ** -s
    return w / w.sum()


def _mix(rng, strength: float, dependent: np.ndarray, independent: np.ndarray) -> np.ndarray:
    keep = rng.random(len(dependent)) < strength
    return np.where(keep, dependent, independent)


def make_correlated_dataset(sizes: dict[str, int] | None = None, strength: float = 0.9,
                            skew: float = 1.2, seed: int = 0) -> Dataset:
    """A movie-database-like star: ``title`` plus five tables keyed by ``movie_id``.

    ``strength`` in [0, 1] is the probability that a correlated attribute
    follows its parent attribute instead of an independent draw (1 gives
    functional dependencies, 0 gives independence, including uniform
    fan-out).  ``skew`` is the zipf exponent of the skewed value columns.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError("strength must lie in [0, 1]")
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    rng = np.random.default_rng(seed)
    tables: dict[str, Table] = {}

    n = sizes["title"]
    year = rng.integers(YEAR_LO, YEAR_HI + 1, size=n)
    era = (year - YEAR_LO) * N_KINDS // (YEAR_HI - YEAR_LO + 1)
    kind = _mix(rng, strength, era + 1, rng.integers(1, N_KINDS + 1, size=n))
    day_of_year = rng.integers(0, 365, size=n)
    base = np.array([np.datetime64(f"{y}-01-01") for y in range(YEAR_LO, YEAR_HI + 2)])
    indep_year = rng.integers(YEAR_LO, YEAR_HI + 1, size=n)
    rel_year = _mix(rng, strength, year, indep_year)
    release = base[rel_year - YEAR_LO] + day_of_year.astype("timedelta64[D]")
    country = np.asarray(COUNTRIES)[_mix(rng, strength, (kind - 1) % len(COUNTRIES),
                                         rng.integers(0, len(COUNTRIES), size=n))]
    tables["title"] = Table("title", {
        "id": as_column(np.arange(n), "int"),
        "kind_id": as_column(kind, "int"),
        "production_year": as_column(year, "int"),
        "release_date": as_column(release, "date"),
        "country_code": as_column(country, "string"),
    }, {"id": "int", "kind_id": "int", "production_year": "int", "release_date": "date",
        "country_code": "string"})

    # fan-out grows with recency and depends on kind; flattened towards uniform as strength drops
    recency = (year - YEAR_LO) / (YEAR_HI - YEAR_LO)

    def parents(m: int, tilt: np.ndarray) -> np.ndarray:
        w = np.exp(strength * tilt)
        return np.sort(rng.choice(n, size=m, p=w / w.sum()))

    def child(name, m, tilt, cols):
        mid = parents(m, tilt)
        data = {"id": np.arange(m), "movie_id": mid}
        types = {"id": "int", "movie_id": "int"}
        for cname, fn in cols.items():
            data[cname] = fn(mid, m)
            types[cname] = "int"
        tables[name] = Table(name, {c: as_column(v, types[c]) for c, v in data.items()}, types)

    def skewed(k):
        p = zipf_probs(k, skew)
        return lambda mid, m: rng.choice(np.arange(1, k + 1), size=m, p=p)

    def follows(parent_attr, k, shift=0, first=1):
        def fn(mid, m):
            dep = (parent_attr[mid] + shift) % k + first
            return _mix(rng, strength, dep, rng.integers(first, first + k, size=m))
        return fn

    child("movie_companies", sizes["movie_companies"], 3.0 * recency + (kind == 1),
          {"company_type_id": follows(kind, 2),
           "company_id": skewed(2000)})
    child("cast_info", sizes["cast_info"], 4.0 * recency - 1.5 * (kind > 4),
          {"role_id": follows(kind, 11, shift=2),
           "person_id": skewed(20000)})
    child("movie_info", sizes["movie_info"], 2.0 * recency + 1.5 * (kind == 2),
          {"info_type_id": follows(era, 16, shift=1)})
    child("movie_keyword", sizes["movie_keyword"], 3.5 * recency,
          {"keyword_id": skewed(5000)})
    child("movie_info_idx", sizes["movie_info_idx"], 2.5 * (kind <= 2),
          {"info_type_id": follows(kind, 5, first=99)})
    return Dataset(tables)


# -- workloads -------------------------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\{(\w+)\}")


@dataclass
class WorkloadSpec:
    """Templates with ``{name}`` placeholders plus one sampler per placeholder.

    Sampler forms (all produce SQL literal text):
      ``{"type": "uniform", "low": a, "high": b, "integer": true}``
      ``{"type": "choice", "values": [...]}``
      ``{"type": "in_list", "values": [...], "size": k}``
      ``{"type": "date", "low": "YYYY-MM-DD", "high": "YYYY-MM-DD"}``
    String values are quoted automatically.
    """

    templates: list[str]
    samplers: list[dict[str, dict[str, Any]]]
    queries_per_template: int = 125
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if len(self.samplers) != len(self.templates):
            raise ValueError("need one sampler map per template")
        for t, s in zip(self.templates, self.samplers):
            missing = set(_PLACEHOLDER.findall(t)) - set(s)
            if missing:
                raise ValueError(f"template lacks samplers for {sorted(missing)}: {t}")

    def to_dict(self) -> dict:
        return {"templates": [{"sql": t, "params": s} for t, s in zip(self.templates, self.samplers)],
                "queries_per_template": self.queries_per_template, "seed": self.seed,
                "shuffle": self.shuffle}

    @classmethod
    def from_dict(cls, d) -> "WorkloadSpec":
        return cls([t["sql"] for t in d["templates"]], [t.get("params", {}) for t in d["templates"]],
                   int(d.get("queries_per_template", 125)), int(d.get("seed", 0)),
                   bool(d.get("shuffle", True)))

    @classmethod
    def load(cls, path) -> "WorkloadSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _sql_literal(v) -> str:
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v))


def _sample(rng: np.random.Generator, s: dict) -> str:
    kind = s["type"]
    if kind == "uniform":
        if s.get("integer", False):
            return str(int(rng.integers(int(s["low"]), int(s["high"]) + 1)))
        return repr(round(float(rng.uniform(s["low"], s["high"])), 6))
    if kind == "choice":
        vals = s["values"]
        return _sql_literal(vals[int(rng.integers(len(vals)))])
    if kind == "in_list":
        vals = s["values"]
        k = int(s["size"])
        pick = rng.choice(len(vals), size=k, replace=False)
        return ", ".join(_sql_literal(vals[i]) for i in sorted(pick))
    if kind == "date":
        lo = _dt.date.fromisoformat(s["low"]).toordinal()
        hi = _dt.date.fromisoformat(s["high"]).toordinal()
        return "'" + _dt.date.fromordinal(int(rng.integers(lo, hi + 1))).isoformat() + "'"
    raise ValueError(f"unknown sampler type {kind!r}")


def generate_workload(spec: WorkloadSpec) -> list[str]:
    """Instantiate every template ``queries_per_template`` times; deterministic under the seed."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for template, samplers in zip(spec.templates, spec.samplers):
        names = sorted(set(_PLACEHOLDER.findall(template)))
        for _ in range(spec.queries_per_template):
            vals = {n: _sample(rng, samplers[n]) for n in names}
            out.append(_PLACEHOLDER.sub(lambda m: vals[m.group(1)], template))
    if spec.shuffle:
        order = rng.permutation(len(out))
        out = [out[i] for i in order]
    return out


def write_sql(queries: list[str], path) -> None:
    with open(path, "w") as fh:
        for q in queries:
            fh.write(q.rstrip(";") + ";\n")


# -- the built-in star-join template family -------------------------------------------------

_CHILDREN = {
    "mc": ("movie_companies", [("company_type_id", "eq", [1, 2])]),
    "ci": ("cast_info", [("role_id", "eq", list(range(1, 12)))]),
    "mi": ("movie_info", [("info_type_id", "eq", list(range(1, 17)))]),
    "mk": ("movie_keyword", [("keyword_id", "lt", (1, 200))]),
    "mi_idx": ("movie_info_idx", [("info_type_id", "eq", list(range(99, 104)))]),
}

_TITLE_FILTERS = [
    ("t.production_year > {y}", {"y": {"type": "uniform", "low": YEAR_LO, "high": YEAR_HI, "integer": True}}),
    ("t.production_year < {y}", {"y": {"type": "uniform", "low": YEAR_LO, "high": YEAR_HI, "integer": True}}),
    ("t.production_year BETWEEN {y} AND {y2}",
     {"y": {"type": "uniform", "low": YEAR_LO, "high": 1975, "integer": True},
      "y2": {"type": "uniform", "low": 1975, "high": YEAR_HI, "integer": True}}),
    ("t.kind_id = {k}", {"k": {"type": "choice", "values": list(range(1, N_KINDS + 1))}}),
    ("t.kind_id IN ({ks})", {"ks": {"type": "in_list", "values": list(range(1, N_KINDS + 1)), "size": 2}}),
    ("t.release_date > {d}", {"d": {"type": "date", "low": f"{YEAR_LO}-01-01", "high": f"{YEAR_HI}-12-31"}}),
    ("t.country_code = {cc}", {"cc": {"type": "choice", "values": list(COUNTRIES)}}),
]


def builtin_workload_spec(n_templates: int = 40, queries_per_template: int = 125,
                          seed: int = 0) -> WorkloadSpec:
    """Star joins of ``title`` with 1 to 4 of its child tables.

    Each template draws a join set, one or two title filters and a filter
    on some of the joined tables; join counts follow roughly the 1-4 mix
    of the classic light join benchmark.
    """
    rng = np.random.default_rng(seed + 7919)
    children = list(_CHILDREN)
    templates, samplers, seen = [], [], set()
    join_mix = [1] * 10 + [2] * 14 + [3] * 11 + [4] * 5
    attempts = 0
    while len(templates) < n_templates:
        attempts += 1
        if attempts > 100 * n_templates:
            raise RuntimeError("could not draw enough distinct templates")
        nj = join_mix[len(templates) % len(join_mix)]
        chosen = sorted(rng.choice(len(children), size=nj, replace=False))
        aliases = [children[i] for i in chosen]
        n_tf = 1 + int(rng.random() < 0.5)
        tfs = sorted(rng.choice(len(_TITLE_FILTERS), size=n_tf, replace=False))
        filtered = [a for a in aliases if rng.random() < 0.6]
        key = (tuple(aliases), tuple(tfs), tuple(filtered))
        if key in seen:
            continue
        seen.add(key)
        from_clause = ", ".join(["title t"] + [f"{_CHILDREN[a][0]} {a}" for a in aliases])
        preds = [f"t.id = {a}.movie_id" for a in aliases]
        params: dict[str, dict] = {}
        for i in tfs:
            text, smp = _TITLE_FILTERS[i]
            for name, s in smp.items():
                new = f"{name}_{i}"
                text = text.replace("{" + name + "}", "{" + new + "}")
                params[new] = s
            preds.append(text)
        for a in filtered:
            col, op, vals = _CHILDREN[a][1][0]
            p = f"{a}_{col}"
            if op == "eq":
                preds.append(f"{a}.{col} = {{{p}}}")
                params[p] = {"type": "choice", "values": vals}
            else:
                preds.append(f"{a}.{col} < {{{p}}}")
                params[p] = {"type": "uniform", "low": vals[0], "high": vals[1], "integer": True}
        templates.append(f"SELECT COUNT(*) FROM {from_clause} WHERE " + " AND ".join(preds))
        samplers.append(params)
    return WorkloadSpec(templates, samplers, queries_per_template, seed)
