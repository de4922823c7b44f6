import numpy as np
import pytest

from dyadnet.graph import ACTIVITY_COLUMNS, UNKNOWN, VERTEX_SCHEMA, DirectedGraph, VertexTable


def intern_column(values):
    labels = [UNKNOWN]
    lookup = {UNKNOWN: 0}
    codes = np.empty(len(values), dtype=np.int32)
    for k, v in enumerate(values):
        if v not in lookup:
            lookup[v] = len(labels)
            labels.append(v)
        codes[k] = lookup[v]
    return codes, labels


def build_vertices(lat, lon, country=None, region=None, city=None, ethnicity=None,
                   language=None, platform=None, age=None, height=None, weight=None,
                   activity=None, ids=None):
    """Small programmatic VertexTable with sensible defaults."""
    n = len(lat)

    def _fill(values, default):
        return list(values) if values is not None else [default] * n

    country = _fill(country, "TH")
    region = _fill(region, "TH_r0")
    city = _fill(city, "TH_r0_c0")
    ethnicity = _fill(ethnicity, "asian")
    language = _fill(language, "lang_TH")

    numeric = {
        "platform": np.asarray(_fill(platform, 0.0), dtype=np.float64),
        "age": np.asarray(_fill(age, 30.0), dtype=np.float64),
        "height_cm": np.asarray(_fill(height, 170.0), dtype=np.float64),
        "weight_kg": np.asarray(_fill(weight, 70.0), dtype=np.float64),
    }
    for col in ACTIVITY_COLUMNS:
        if activity and col in activity:
            numeric[col] = np.asarray(activity[col], dtype=np.float64)
        else:
            numeric[col] = np.zeros(n)

    cat_codes, cat_labels = {}, {}
    for name, vals in (("country", country), ("region", region), ("city", city),
                       ("ethnicity", ethnicity), ("language", language)):
        codes, labels = intern_column(vals)
        cat_codes[name] = codes
        cat_labels[name] = labels

    return VertexTable(
        ids=np.asarray(ids if ids is not None else np.arange(n), dtype=np.int64),
        lat=np.asarray(lat, dtype=np.float64),
        lon=np.asarray(lon, dtype=np.float64),
        cat_codes=cat_codes,
        cat_labels=cat_labels,
        numeric=numeric,
    )


def build_graph(vertices, edges):
    edges = list(edges)
    src = np.asarray([a for a, _ in edges], dtype=np.int64)
    dst = np.asarray([b for _, b in edges], dtype=np.int64)
    return DirectedGraph(vertices, src, dst)


DEFAULT_ROW = {
    "id": 0, "lat": 0.0, "lon": 0.0, "country": "TH", "region": "TH_r0",
    "city": "TH_r0_c0", "platform": 0, "age": 30, "height_cm": 170,
    "weight_kg": 70, "ethnicity": "asian", "language": "lang_TH",
}


def write_vertex_csv(path, rows, delimiter=","):
    """Write a vertex file from partial row dicts (defaults fill the rest)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(VERTEX_SCHEMA) + "\n")
        for row in rows:
            full = dict(DEFAULT_ROW)
            for col in ACTIVITY_COLUMNS:
                full[col] = 0
            full.update(row)
            fh.write(delimiter.join(str(full[c]) for c in VERTEX_SCHEMA) + "\n")


def write_edge_csv(path, pairs, delimiter=","):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"src{delimiter}dst\n")
        for a, b in pairs:
            fh.write(f"{a}{delimiter}{b}\n")


@pytest.fixture
def rng():
    return np.random.default_rng(4)
