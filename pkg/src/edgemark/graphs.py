"""Graph data: representation, node-induced splits, generators, file I/O.

A Graph stores undirected edges as both directed pairs so that message
passing and per-edge computations iterate one flat list. The canonical
unordered-edge order (lexicographic by (min, max) endpoint) indexes every
per-edge quantity in the package. Graphs are immutable after construction
and safe to share across threads.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError, UsageError


@dataclass(frozen=True)
class AggArrays:
    """Precomputed per-graph arrays consumed by the aggregation kernels."""

    src: np.ndarray        # directed edge sources
    dst: np.ndarray        # directed edge targets
    inv_deg: np.ndarray    # 1/deg, 0 for isolated nodes
    conv_edge_w: np.ndarray  # 1/sqrt((deg(u)+1)(deg(v)+1)) per directed edge
    conv_self_w: np.ndarray  # 1/(deg(v)+1) per node


class Graph:
    """Node features, symmetric directed edge pairs, optional labels."""

    def __init__(self, x: np.ndarray, edges: np.ndarray, y=None, name: str = ""):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        if self.x.ndim != 2:
            raise UsageError("features must be a 2-d matrix")
        self.edges = np.ascontiguousarray(edges, dtype=np.int64).reshape(-1, 2)
        self.y = None if y is None else np.ascontiguousarray(y, dtype=np.int64)
        self.name = name
        self._validate()
        self._canonical = None
        self._agg = None

    def _validate(self):
        n = self.num_nodes
        e = self.edges
        if e.size:
            if e.min() < 0 or e.max() >= n:
                raise UsageError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise UsageError("self-loops are not allowed")
            key = e[:, 0] * n + e[:, 1]
            if np.unique(key).size != key.size:
                raise UsageError("duplicate edge pairs")
            rev = np.sort(e[:, 1] * n + e[:, 0])
            if not np.array_equal(np.sort(key), rev):
                raise UsageError("edge list is not symmetric")
        if self.y is not None:
            if self.y.shape != (n,):
                raise UsageError(f"labels shape {self.y.shape} for {n} nodes")
            if self.y.size and self.y.min() < 0:
                raise UsageError("negative label")

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    @property
    def num_classes(self) -> int:
        if self.y is None:
            raise UsageError(f"graph {self.name!r} has no labels")
        return int(self.y.max()) + 1 if self.y.size else 0

    def canonical_edges(self) -> np.ndarray:
        """Unordered edges as (m, 2) with u < v, sorted lexicographically."""
        if self._canonical is None:
            e = self.edges
            pairs = e[e[:, 0] < e[:, 1]]
            order = np.lexsort((pairs[:, 1], pairs[:, 0]))
            self._canonical = np.ascontiguousarray(pairs[order])
        return self._canonical

    def num_edges(self) -> int:
        return self.canonical_edges().shape[0]

    def agg(self) -> AggArrays:
        if self._agg is None:
            src = np.ascontiguousarray(self.edges[:, 0])
            dst = np.ascontiguousarray(self.edges[:, 1])
            deg = np.bincount(dst, minlength=self.num_nodes).astype(np.float64)
            with np.errstate(divide="ignore"):
                inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
            dhat = deg + 1.0
            edge_w = 1.0 / np.sqrt(dhat[src] * dhat[dst])
            self_w = 1.0 / dhat
            self._agg = AggArrays(src, dst, inv, np.ascontiguousarray(edge_w),
                                  np.ascontiguousarray(self_w))
        return self._agg

    def with_features(self, x: np.ndarray, name=None) -> "Graph":
        return Graph(x, self.edges, self.y, self.name if name is None else name)

    def without_labels(self) -> "Graph":
        return Graph(self.x, self.edges, None, self.name)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        same_y = (self.y is None) == (other.y is None) and (
            self.y is None or np.array_equal(self.y, other.y))
        return (self.name == other.name and np.array_equal(self.x, other.x)
                and np.array_equal(self.canonical_edges(), other.canonical_edges())
                and same_y)


def _mirror(pairs: np.ndarray) -> np.ndarray:
    if pairs.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return np.concatenate([pairs, pairs[:, ::-1]], axis=0)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.20
    test: float = 0.10
    seed: int = 0

    def __post_init__(self):
        for name in ("train", "val", "test"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"split fraction {name} must be positive")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")


def induced_split(g: Graph, spec: SplitSpec = SplitSpec()):
    """Partition nodes by seeded shuffle into node-induced train/val/test graphs.

    Each part keeps exactly the edges with both endpoints inside it; edges
    crossing a partition boundary are discarded. Node indices are remapped
    to be contiguous in original-index order.
    """
    if g.y is None:
        raise UsageError("induced_split needs a labeled graph")
    n = g.num_nodes
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    n_train = int(n * spec.train)
    n_val = int(n * spec.val)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) == 0:
        raise ConfigError(f"split of {n} nodes leaves an empty part")
    groups = (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
              np.sort(perm[n_train + n_val:]))
    out = []
    for part, suffix in zip(groups, ("train", "val", "test")):
        remap = np.full(n, -1, dtype=np.int64)
        remap[part] = np.arange(part.size)
        can = g.canonical_edges()
        keep = (remap[can[:, 0]] >= 0) & (remap[can[:, 1]] >= 0)
        pairs = remap[can[keep]]
        out.append(Graph(g.x[part], _mirror(pairs), g.y[part],
                         f"{g.name}/{suffix}" if g.name else suffix))
    return tuple(out)


# ---------------------------------------------------------------------------
# generators


def _sample_pairs(n: int, prob_of_row, rng) -> np.ndarray:
    """Bernoulli-sample the upper triangle row by row; returns (m, 2) u < v."""
    us, vs = [], []
    for u in range(n - 1):
        p = prob_of_row(u)
        draws = rng.random(n - 1 - u)
        hit = np.nonzero(draws < p)[0]
        if hit.size:
            us.append(np.full(hit.size, u, dtype=np.int64))
            vs.append(hit.astype(np.int64) + u + 1)
    if not us:
        return np.zeros((0, 2), dtype=np.int64)
    return np.stack([np.concatenate(us), np.concatenate(vs)], axis=1)


def generate_sbm(num_nodes: int, num_classes: int, intra_p: float, inter_p: float,
                 feature_dim: int, feature_shift: float, seed: int) -> Graph:
    """Stochastic block model with class-dependent Gaussian features.

    Same-class pairs connect with intra_p, cross-class pairs with inter_p.
    Features are standard normal shifted by feature_shift along a per-class
    axis direction.
    """
    if not (0 <= inter_p < intra_p <= 1):
        raise ConfigError(f"need 0 <= inter_p < intra_p <= 1, got {inter_p}, {intra_p}")
    if num_classes < 1 or num_nodes < num_classes:
        raise ConfigError("bad num_nodes/num_classes")
    rng = np.random.default_rng(seed)
    y = np.arange(num_nodes, dtype=np.int64) % num_classes
    pairs = _sample_pairs(num_nodes,
                          lambda u: np.where(y[u + 1:] == y[u], intra_p, inter_p),
                          rng)
    x = rng.standard_normal((num_nodes, feature_dim))
    x[np.arange(num_nodes), y % feature_dim] += feature_shift
    return Graph(x, _mirror(pairs), y, f"sbm-n{num_nodes}-c{num_classes}-s{seed}")


def generate_er(num_nodes: int, edge_p: float, feature_dim: int, seed: int) -> Graph:
    """Erdos-Renyi topology with standard normal features, no labels."""
    if not (0 < edge_p < 1):
        raise ConfigError(f"edge_p must be in (0, 1), got {edge_p}")
    rng = np.random.default_rng(seed)
    pairs = _sample_pairs(num_nodes, lambda u: edge_p, rng)
    x = rng.standard_normal((num_nodes, feature_dim))
    return Graph(x, _mirror(pairs), None, f"er-n{num_nodes}-p{edge_p}-s{seed}")


def generate_ba(num_nodes: int, attach_m: int, feature_dim: int, seed: int) -> Graph:
    """Preferential-attachment topology with standard normal features.

    The first attach_m + 1 nodes form a complete seed clique; every later
    node attaches to attach_m distinct existing nodes with probability
    proportional to degree.
    """
    if attach_m < 1:
        raise ConfigError("attach_m must be >= 1")
    if num_nodes <= attach_m:
        raise ConfigError("num_nodes must exceed attach_m")
    rng = np.random.default_rng(seed)
    m0 = attach_m + 1
    pairs = [(u, v) for u in range(m0) for v in range(u + 1, m0)]
    endpoint_pool = [node for pair in pairs for node in pair]
    for v in range(m0, num_nodes):
        targets = set()
        while len(targets) < attach_m:
            targets.add(endpoint_pool[rng.integers(len(endpoint_pool))])
        for u in sorted(targets):
            pairs.append((u, v))
            endpoint_pool.extend((u, v))
    x = rng.standard_normal((num_nodes, feature_dim))
    return Graph(x, _mirror(np.array(pairs, dtype=np.int64)), None,
                 f"ba-n{num_nodes}-m{attach_m}-s{seed}")


# ---------------------------------------------------------------------------
# file I/O


def graph_to_dict(g: Graph, include_labels: bool = True) -> dict:
    d = {
        "name": g.name,
        "num_nodes": g.num_nodes,
        "feature_dim": g.feature_dim,
        "features": g.x.ravel().tolist(),
        "edges": g.canonical_edges().tolist(),
    }
    if include_labels and g.y is not None:
        d["labels"] = g.y.tolist()
    return d


def graph_from_dict(d: dict, where: str = "payload") -> Graph:
    def need(field, kind):
        if field not in d:
            raise ParseError(f"{where}: missing field '{field}'")
        v = d[field]
        if not isinstance(v, kind):
            raise ParseError(f"{where}: field '{field}' has wrong type")
        return v

    name = need("name", str) if "name" in d else ""
    n = need("num_nodes", int)
    dim = need("feature_dim", int)
    feats = need("features", list)
    if n < 0 or dim < 0:
        raise ParseError(f"{where}: negative 'num_nodes' or 'feature_dim'")
    if len(feats) != n * dim:
        raise ParseError(f"{where}: field 'features' has {len(feats)} values, expected {n * dim}")
    x = np.asarray(feats, dtype=np.float64).reshape(n, dim)
    if not np.all(np.isfinite(x)):
        raise ParseError(f"{where}: field 'features' contains non-finite values")
    edges = need("edges", list)
    pairs = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if edges else np.zeros((0, 2), np.int64)
    if pairs.size:
        if pairs.min() < 0 or pairs.max() >= n:
            raise ParseError(f"{where}: field 'edges' has endpoint out of range")
        if np.any(pairs[:, 0] >= pairs[:, 1]):
            raise ParseError(f"{where}: field 'edges' must store u < v pairs")
    y = None
    if d.get("labels") is not None:
        labels = need("labels", list)
        if len(labels) != n:
            raise ParseError(f"{where}: field 'labels' has {len(labels)} values, expected {n}")
        y = np.asarray(labels, dtype=np.int64)
        if y.size and y.min() < 0:
            raise ParseError(f"{where}: field 'labels' contains a negative class")
    try:
        return Graph(x, _mirror(pairs), y, name)
    except UsageError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def save_graph(g: Graph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(g), fh)


def load_graph(path) -> Graph:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ParseError(f"{path}: top level must be an object")
    return graph_from_dict(d, where=str(path))


def convert_csv(nodes_path, edges_path, name: str = "") -> Graph:
    """Ingest `node_id,feat_0..feat_{d-1}[,label]` plus `src,dst` CSV files."""
    with open(nodes_path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "node_id":
            raise ParseError(f"{nodes_path}: first column must be 'node_id'")
        has_label = header[-1] == "label"
        feat_cols = header[1:-1] if has_label else header[1:]
        if any(not c.startswith("feat_") for c in feat_cols):
            raise ParseError(f"{nodes_path}: feature columns must be named feat_*")
        rows = list(reader)
    if not rows:
        raise ParseError(f"{nodes_path}: no data rows")
    ids = [int(r[0]) for r in rows]
    order = np.argsort(ids, kind="stable")
    remap = {ids[i]: rank for rank, i in enumerate(order)}
    if len(remap) != len(ids):
        raise ParseError(f"{nodes_path}: duplicate node_id")
    d = len(feat_cols)
    x = np.zeros((len(rows), d))
    y = np.zeros(len(rows), dtype=np.int64) if has_label else None
    for i in order:
        r = rows[i]
        x[remap[ids[i]]] = [float(v) for v in r[1:1 + d]]
        if has_label:
            y[remap[ids[i]]] = int(r[1 + d])
    with open(edges_path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["src", "dst"]:
            raise ParseError(f"{edges_path}: header must be 'src,dst'")
        seen = set()
        for r in reader:
            u, v = remap.get(int(r[0])), remap.get(int(r[1]))
            if u is None or v is None:
                raise ParseError(f"{edges_path}: edge references unknown node_id {r}")
            if u == v:
                continue
            seen.add((min(u, v), max(u, v)))
    pairs = np.array(sorted(seen), dtype=np.int64) if seen else np.zeros((0, 2), np.int64)
    return Graph(x, _mirror(pairs), y, name)
