"""Sparse directed follow graph and its vertex attribute table.

Vertices come from a delimited text file with a fixed header; external ids
are remapped to a dense 0..n-1 index so dyad enumeration can use plain
index arithmetic. Adjacency is stored both as sorted successor lists (CSR)
and as a packed bitset, one row per vertex, for O(1) membership probes
during dyad and tetrad enumeration.

Both structures are immutable after construction and safe for concurrent
readers.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import DomainError, IntegrityError, ParseError

UNKNOWN = "UNKNOWN"

CATEGORICAL_COLUMNS = ("country", "region", "city", "ethnicity", "language")

ACTIVITY_COLUMNS = (
    "feed_posts_made_v4",
    "feed_posts_made_v5",
    "feed_posts_made_v6",
    "feed_posts_liked_commented_v4",
    "feed_posts_liked_commented_v5",
    "feed_posts_liked_commented_v6",
    "stories_read_from_feed_v4",
    "stories_read_from_feed_v5",
    "stories_read_from_feed_v6",
    "chat_messages_sent_v4",
    "chat_messages_sent_v5",
    "chat_messages_sent_v6",
    "total_followees_v4",
    "total_followees_v5",
    "total_followees_v6",
    "total_followers",
    "total_followees",
)

NUMERIC_COLUMNS = ("platform", "age", "height_cm", "weight_kg") + ACTIVITY_COLUMNS

VERTEX_SCHEMA = (
    ("id", "lat", "lon", "country", "region", "city", "platform", "age", "height_cm", "weight_kg", "ethnicity", "language")
    + ACTIVITY_COLUMNS
)

EDGE_SCHEMA = ("src", "dst")


class VertexTable:
    """Columnar store of vertex attributes, indexed 0..n-1.

    Categorical columns are interned: each column keeps a label list whose
    slot 0 is always UNKNOWN, and an int32 code array. Numeric columns are
    float64 arrays.
    """

    def __init__(self, ids, lat, lon, cat_codes, cat_labels, numeric):
        self.ids = np.asarray(ids, dtype=np.int64)
        if len(np.unique(self.ids)) != self.ids.size:
            raise IntegrityError("duplicate vertex ids")
        self.lat = np.asarray(lat, dtype=np.float64)
        self.lon = np.asarray(lon, dtype=np.float64)
        if np.any(np.abs(self.lat) > 90.0):
            raise DomainError("latitude outside [-90, 90]")
        if np.any(self.lon <= -180.0) or np.any(self.lon > 180.0):
            raise DomainError("longitude outside (-180, 180]")
        self._cat_codes = {k: np.asarray(v, dtype=np.int32) for k, v in cat_codes.items()}
        self._cat_labels = {k: list(v) for k, v in cat_labels.items()}
        for col, labels in self._cat_labels.items():
            if labels[0] != UNKNOWN:
                raise IntegrityError(f"label slot 0 of {col} must be {UNKNOWN}")
        self._numeric = {k: np.asarray(v, dtype=np.float64) for k, v in numeric.items()}
        for col in ACTIVITY_COLUMNS:
            if col in self._numeric and np.any(self._numeric[col] < 0):
                raise DomainError(f"negative value in activity column {col}")
        self.id_to_index = {int(v): i for i, v in enumerate(self.ids)}

    @property
    def n(self):
        return self.ids.size

    def __len__(self):
        return self.n

    def codes(self, col):
        return self._cat_codes[col]

    def labels(self, col):
        return self._cat_labels[col]

    def label_code(self, col, label):
        """Code of ``label`` in column ``col``, or -1 when absent."""
        try:
            return self._cat_labels[col].index(label)
        except ValueError:
            return -1

    def decode(self, col, code):
        return self._cat_labels[col][int(code)]

    def numeric(self, col):
        return self._numeric[col]

    @property
    def numeric_columns(self):
        return tuple(self._numeric.keys())

    def take(self, idx):
        """New table holding rows ``idx`` (repeats allowed, ids renumbered)."""
        idx = np.asarray(idx, dtype=np.int64)
        return VertexTable(
            ids=np.arange(idx.size, dtype=np.int64),
            lat=self.lat[idx],
            lon=self.lon[idx],
            cat_codes={k: v[idx] for k, v in self._cat_codes.items()},
            cat_labels=self._cat_labels,
            numeric={k: v[idx] for k, v in self._numeric.items()},
        )


class DirectedGraph:
    """Immutable sparse directed graph over a VertexTable.

    Edge (i, j) means vertex i follows vertex j. Self-loops are rejected
    here (loaders drop them earlier, with a counter) and parallel edges are
    collapsed.
    """

    def __init__(self, vertices: VertexTable, src, dst, self_loops_dropped=0):
        self.vertices = vertices
        n = vertices.n
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if src.size and (src.min() < 0 or src.max() >= n or dst.min() < 0 or dst.max() >= n):
            raise IntegrityError("edge endpoint outside vertex table")
        if np.any(src == dst):
            raise IntegrityError("self-loop in edge set")
        code = src * n + dst
        code = np.unique(code)
        self.src = (code // n).astype(np.int64)
        self.dst = (code % n).astype(np.int64)
        self.self_loops_dropped = int(self_loops_dropped)

        counts = np.bincount(self.src, minlength=n)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=self.indptr[1:])

        nbytes = max(1, (n + 7) // 8)
        bits = np.zeros((n, nbytes), dtype=np.uint8)
        if self.src.size:
            np.bitwise_or.at(bits, (self.src, self.dst >> 3), (1 << (self.dst & 7)).astype(np.uint8))
        self._bits = bits

    @property
    def n(self):
        return self.vertices.n

    @property
    def m(self):
        return self.src.size

    def out_neighbors(self, i):
        return self.dst[self.indptr[i]:self.indptr[i + 1]]

    def has_edge(self, i, j):
        """Vectorized membership probe; accepts scalars or index arrays."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        hit = (self._bits[i, j >> 3] >> (j & 7).astype(np.uint8)) & 1
        if hit.ndim == 0:
            return bool(hit)
        return hit.astype(bool)

    def adjacency_row(self, i):
        """Dense boolean successor row for vertex i."""
        return np.unpackbits(self._bits[i], count=self.n, bitorder="little").astype(bool)

    def dense_adjacency(self):
        """Full boolean adjacency matrix. Only sensible for small graphs."""
        return np.unpackbits(self._bits, axis=1, count=self.n, bitorder="little").astype(bool)

    def in_degrees(self):
        return np.bincount(self.dst, minlength=self.n)

    def out_degrees(self):
        return np.bincount(self.src, minlength=self.n)

    def density(self):
        n = self.n
        if n < 2:
            raise DomainError("density needs at least 2 vertices")
        return self.m / (n * (n - 1))

    def mutual_view(self):
        """Subgraph keeping (i, j) only when (j, i) is also present."""
        keep = self.has_edge(self.dst, self.src) if self.m else np.zeros(0, dtype=bool)
        return DirectedGraph(self.vertices, self.src[keep], self.dst[keep])


def mutual_view(g: DirectedGraph) -> DirectedGraph:
    return g.mutual_view()


def density(g: DirectedGraph) -> float:
    return g.density()


def in_degrees(g: DirectedGraph):
    return g.in_degrees()


def _parse_float(text, col, line):
    text = text.strip()
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse {col}={text!r} as a number", line=line) from None


def load_vertices(path, schema=VERTEX_SCHEMA, delimiter=",", missing_numeric="reject"):
    """Read a vertex attribute file into a VertexTable.

    The header must match ``schema`` exactly. Missing categoricals become
    UNKNOWN; missing numerics are rejected (default) or imputed with the
    column mean when ``missing_numeric="impute_mean"``.
    """
    if missing_numeric not in ("reject", "impute_mean"):
        raise DomainError(f"missing_numeric must be reject or impute_mean, got {missing_numeric!r}")
    schema = tuple(schema)
    cat_cols = [c for c in schema if c in CATEGORICAL_COLUMNS]
    num_cols = [c for c in schema if c in NUMERIC_COLUMNS]

    ids, lat, lon = [], [], []
    cat_raw = {c: [] for c in cat_cols}
    num_raw = {c: [] for c in num_cols}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != schema:
            raise ParseError(f"header does not match schema {list(schema)}", line=1)
        col_pos = {c: k for k, c in enumerate(schema)}
        for line, row in enumerate(reader, start=2):
            if len(row) != len(schema):
                raise ParseError(f"expected {len(schema)} fields, got {len(row)}", line=line)
            try:
                ids.append(int(row[col_pos["id"]]))
            except ValueError:
                raise ParseError(f"cannot parse id={row[col_pos['id']]!r}", line=line) from None
            for col, acc in (("lat", lat), ("lon", lon)):
                v = _parse_float(row[col_pos[col]], col, line)
                if v is None:
                    raise ParseError(f"missing {col}", line=line)
                acc.append(v)
            for col in cat_cols:
                text = row[col_pos[col]].strip()
                cat_raw[col].append(text if text else UNKNOWN)
            for col in num_cols:
                v = _parse_float(row[col_pos[col]], col, line)
                if v is None and missing_numeric == "reject":
                    raise ParseError(f"missing numeric {col}", line=line)
                num_raw[col].append(np.nan if v is None else v)

    if len(ids) != len(set(ids)):
        seen, dup = set(), None
        for v in ids:
            if v in seen:
                dup = v
                break
            seen.add(v)
        raise IntegrityError(f"duplicate vertex id {dup}")

    cat_codes, cat_labels = {}, {}
    for col in cat_cols:
        labels = [UNKNOWN]
        lookup = {UNKNOWN: 0}
        codes = np.empty(len(ids), dtype=np.int32)
        for k, text in enumerate(cat_raw[col]):
            if text not in lookup:
                lookup[text] = len(labels)
                labels.append(text)
            codes[k] = lookup[text]
        cat_codes[col] = codes
        cat_labels[col] = labels

    numeric = {}
    for col in num_cols:
        arr = np.asarray(num_raw[col], dtype=np.float64)
        nan = np.isnan(arr)
        if nan.any():
            if nan.all():
                raise ParseError(f"column {col} has no observed values to impute from")
            arr[nan] = arr[~nan].mean()
        numeric[col] = arr

    return VertexTable(ids, lat, lon, cat_codes, cat_labels, numeric)


def load_edges(path, vertices: VertexTable, delimiter=",") -> DirectedGraph:
    """Read a src,dst edge file against an existing vertex table.

    Unknown endpoints raise IntegrityError; self-loops are dropped and
    counted; duplicates are collapsed.
    """
    src, dst = [], []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EDGE_SCHEMA:
            raise ParseError("edge header must be src,dst", line=1)
        for line, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=line)
            try:
                a, b = int(row[0]), int(row[1])
            except ValueError:
                raise ParseError(f"cannot parse edge {row!r}", line=line) from None
            ia = vertices.id_to_index.get(a)
            ib = vertices.id_to_index.get(b)
            if ia is None or ib is None:
                missing = a if ia is None else b
                raise IntegrityError(f"edge endpoint id {missing} not in vertex table (line {line})")
            if ia == ib:
                dropped += 1
                continue
            src.append(ia)
            dst.append(ib)
    return DirectedGraph(vertices, np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64), self_loops_dropped=dropped)
