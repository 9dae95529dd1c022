"""Graph storage, hop adjacency, normalization, homophily, SBM generation and IO."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

MAX_HOPS = 3
SPLITS = ("train", "val", "test")


class GraphFormatError(ValueError):
    """Malformed or inconsistent graph data."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph with a class-level split.

    ``edges`` is an (m, 2) integer array of deduplicated pairs with u < v.
    """

    X: np.ndarray
    edges: np.ndarray
    y: np.ndarray
    class_split: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "edges", edges)
        split = {k: tuple(sorted(int(c) for c in self.class_split.get(k, ()))) for k in SPLITS}
        object.__setattr__(self, "class_split", split)
        validate(self)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def adjacency(self) -> sp.csr_matrix:
        return edges_to_adjacency(self.edges, self.n)

    def split_of(self, cls: int) -> str:
        for name in SPLITS:
            if cls in self.class_split[name]:
                return name
        raise KeyError(cls)

    def nodes_in_split(self, split: str) -> np.ndarray:
        return np.flatnonzero(np.isin(self.y, self.class_split[split]))

    def nodes_of_class(self, cls: int) -> np.ndarray:
        return np.flatnonzero(self.y == cls)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            np.array_equal(self.X, other.X)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.y, other.y)
            and self.class_split == other.class_split
        )


def validate(g: Graph) -> None:
    if g.X.ndim != 2 or g.X.shape[0] != len(g.y):
        raise GraphFormatError(f"feature rows {g.X.shape} do not match {len(g.y)} labels")
    e = g.edges
    if len(e):
        if e.min() < 0 or e.max() >= g.n:
            raise GraphFormatError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphFormatError("self-loop in edge list")
        if np.any(e[:, 0] > e[:, 1]):
            raise GraphFormatError("edge pairs must satisfy u < v")
        if len(np.unique(e, axis=0)) != len(e):
            raise GraphFormatError("duplicate edge in edge list")
    seen: dict[int, str] = {}
    for name in SPLITS:
        for c in g.class_split[name]:
            if c in seen:
                raise GraphFormatError(f"class {c} in both {seen[c]} and {name}")
            seen[c] = name
    for c in np.unique(g.y):
        if int(c) not in seen:
            raise GraphFormatError(f"class {int(c)} not in any split")


def edges_to_adjacency(edges: np.ndarray, n: int) -> sp.csr_matrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    A.data[:] = 1.0
    A.sort_indices()
    return A


def _binary(M: sp.spmatrix) -> sp.csr_matrix:
    M = sp.csr_matrix(M)
    M.eliminate_zeros()
    M.data = np.ones_like(M.data)
    M.sort_indices()
    return M


def hop_adjacency(A: sp.spmatrix, i: int) -> sp.csr_matrix:
    """Binary matrix of node pairs at shortest-path distance exactly ``i``."""
    if not 1 <= i <= MAX_HOPS:
        raise ValueError(f"hop index {i} outside 1..{MAX_HOPS}")
    A = _binary(A)
    n = A.shape[0]
    reach = _binary(sp.identity(n, format="csr"))
    prev = reach
    for _ in range(i):
        prev = reach
        reach = _binary(reach + reach @ A)
    hop = _binary(reach - prev)
    return hop


def sym_normalize(B: sp.spmatrix) -> sp.csr_matrix:
    """D^{-1/2} B D^{-1/2}; isolated nodes keep all-zero rows."""
    B = sp.csr_matrix(B, dtype=np.float64)
    deg = np.asarray(B.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    D = sp.diags(inv)
    out = sp.csr_matrix(D @ B @ D)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def hop_operators(A: sp.spmatrix, hops: int) -> list[sp.csr_matrix]:
    """Normalized i-hop operators for i = 1..hops."""
    return [sym_normalize(hop_adjacency(A, i)) for i in range(1, hops + 1)]


def self_loop_normalize(A: sp.spmatrix) -> sp.csr_matrix:
    """Renormalized adjacency with self-loops used by simplified graph convolution."""
    n = A.shape[0]
    return sym_normalize(_binary(A) + sp.identity(n, format="csr"))


def node_homophily(g: Graph) -> float:
    A = g.adjacency().tocoo()
    n = g.n
    deg = np.bincount(A.row, minlength=n)
    same = np.bincount(A.row, weights=(g.y[A.row] == g.y[A.col]).astype(float), minlength=n)
    ratio = np.zeros(n)
    nz = deg > 0
    ratio[nz] = same[nz] / deg[nz]
    return float(ratio.mean()) if n else 0.0


def default_split(n_classes: int) -> tuple[int, int, int]:
    n_train = int(round(0.6 * n_classes))
    n_val = int(round(0.2 * n_classes))
    return n_train, n_val, n_classes - n_train - n_val


def generate_sbm(
    n_classes: int,
    nodes_per_class: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    feature_noise: float,
    seed: int,
    split: tuple[int, int, int] | None = None,
) -> Graph:
    """Stochastic block model with orthogonal class-mean features.

    Classes are assigned to splits in id order: the first ``split[0]`` ids are
    train classes, then val, then test.
    """
    if not (0 <= p_in <= 1 and 0 <= p_out <= 1):
        raise ValueError("p_in and p_out must lie in [0, 1]")
    if nodes_per_class < 1:
        raise ValueError("nodes_per_class must be >= 1")
    if feature_dim < n_classes:
        raise ValueError(
            f"feature_dim={feature_dim} < n_classes={n_classes}: orthogonal means impossible"
        )
    split = default_split(n_classes) if split is None else tuple(split)
    if sum(split) != n_classes or min(split) < 0:
        raise ValueError(f"split {split} does not partition {n_classes} classes")

    rng = np.random.default_rng(seed)
    n = n_classes * nodes_per_class
    y = np.repeat(np.arange(n_classes), nodes_per_class)

    chunks = []
    block = 512
    for start in range(0, n, block):
        stop = min(n, start + block)
        u = np.arange(start, stop)[:, None]
        v = np.arange(n)[None, :]
        probs = np.where(y[u] == y[v], p_in, p_out)
        draws = rng.random((stop - start, n))
        hit = (draws < probs) & (v > u)
        r, c = np.nonzero(hit)
        chunks.append(np.stack([r + start, c], axis=1))
    edges = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)

    X = np.zeros((n, feature_dim))
    X[np.arange(n), y] = 1.0
    X += feature_noise * rng.standard_normal((n, feature_dim))

    ids = list(range(n_classes))
    a, b = split[0], split[0] + split[1]
    class_split = {"train": ids[:a], "val": ids[a:b], "test": ids[b:]}
    return Graph(X=X, edges=edges, y=y, class_split=class_split)


# --------------------------------------------------------------------- IO


def save_graph(g: Graph, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "edges.csv"), "w", newline="") as fh:
        for u, v in g.edges:
            fh.write(f"{int(u)},{int(v)}\n")
    with open(os.path.join(directory, "features.csv"), "w", newline="") as fh:
        for row in g.X:
            fh.write(",".join(format(float(x), ".17g") for x in row) + "\n")
    with open(os.path.join(directory, "labels.csv"), "w", newline="") as fh:
        for c in g.y:
            fh.write(f"{int(c)}\n")
    with open(os.path.join(directory, "splits.json"), "w") as fh:
        json.dump({k: list(g.class_split[k]) for k in SPLITS}, fh, sort_keys=True)
        fh.write("\n")


def _path(directory: str, name: str) -> str:
    path = os.path.join(directory, name)
    if not os.path.isfile(path):
        raise GraphFormatError(f"missing file {path}")
    return path


def load_graph(directory: str) -> Graph:
    path = _path(directory, "labels.csv")
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: bad label {line!r}") from None
    n = len(labels)

    path = _path(directory, "features.csv")
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec:
                continue
            try:
                rows.append([float(x) for x in rec])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-numeric feature") from None
            if len(rows[-1]) != len(rows[0]):
                raise GraphFormatError(f"{path}:{lineno}: ragged feature row")
    if len(rows) != n:
        raise GraphFormatError(
            f"{path}: {len(rows)} feature rows but {n} labels in labels.csv"
        )

    path = _path(directory, "edges.csv")
    edges = []
    seen = set()
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec:
                continue
            try:
                u, v = (int(x) for x in rec)
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: expected 'u,v'") from None
            if u == v:
                raise GraphFormatError(f"{path}: self-loop at line {lineno}")
            if u > v:
                raise GraphFormatError(f"{path}:{lineno}: edge requires u<v, got {u},{v}")
            if not (0 <= u and v < n):
                raise GraphFormatError(f"{path}:{lineno}: node id out of range 0..{n - 1}")
            if (u, v) in seen:
                raise GraphFormatError(f"{path}: duplicate edge {u},{v} at line {lineno}")
            seen.add((u, v))
            edges.append((u, v))

    path = _path(directory, "splits.json")
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - set(SPLITS)
    if unknown or not set(SPLITS) <= set(raw):
        raise GraphFormatError(f"{path}: expected keys {SPLITS}, got {sorted(raw)}")
    listed = {int(c) for k in SPLITS for c in raw[k]}
    for lineno, c in enumerate(labels, 1):
        if c not in listed:
            raise GraphFormatError(
                f"{directory}/labels.csv:{lineno}: class {c} not in any split"
            )

    X = np.array(rows, dtype=np.float64).reshape(n, -1 if rows else 0)
    return Graph(X=X, edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
                 y=np.array(labels), class_split=raw)
