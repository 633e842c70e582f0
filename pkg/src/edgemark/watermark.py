"""Watermark payloads, edge-key selection, and the distribution registry.

A payload is a vector of fair coin-flip bits. A key is an ordered list of
unordered-edge indices into the trigger graph whose carrier-value signs
will hold those bits. Keys and base carrier values are computed once per
trigger graph and shared by every distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .carrier import edge_gap_values
from .errors import CapacityError, ConfigError, ParseError, UsageError
from .graphs import Graph


@dataclass(frozen=True)
class WatermarkString:
    bits: np.ndarray               # uint8 vector of 0/1
    meta: str | None = None        # free-form payload note (recipient, date, ...)

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8).ravel())
        if self.bits.size == 0:
            raise ConfigError("watermark must have at least one bit")
        if np.any(self.bits > 1):
            raise ConfigError("watermark bits must be 0 or 1")

    @property
    def n_bits(self) -> int:
        return int(self.bits.size)


def random_watermark(n_bits: int, seed: int, meta: str | None = None) -> WatermarkString:
    """n_bits independent fair bits from the seeded generator."""
    if n_bits < 1:
        raise ConfigError("n_bits must be >= 1")
    rng = np.random.default_rng(seed)
    return WatermarkString(rng.integers(0, 2, size=n_bits, dtype=np.uint8), meta)


@dataclass(frozen=True)
class WatermarkKey:
    edge_indices: np.ndarray       # ordered, distinct indices into canonical edges
    trigger_graph_name: str = ""

    def __post_init__(self):
        idx = np.asarray(self.edge_indices, dtype=np.int64).ravel()
        object.__setattr__(self, "edge_indices", idx)
        if idx.size == 0:
            raise ConfigError("key must select at least one edge")
        if np.unique(idx).size != idx.size:
            raise ConfigError("key edge indices must be distinct")
        if idx.min() < 0:
            raise ConfigError("key edge indices must be non-negative")

    @property
    def n_bits(self) -> int:
        return int(self.edge_indices.size)


@dataclass
class RegistryEntry:
    dist_id: str
    bits: np.ndarray
    timestamp: str
    meta: str | None = None
    bernoulli: bool = True  # False when bits were imported, not coin-flipped here


@dataclass
class WatermarkRegistry:
    entries: list[RegistryEntry] = field(default_factory=list)

    def add(self, dist_id: str, wm: WatermarkString, bernoulli: bool = True,
            timestamp: str | None = None) -> RegistryEntry:
        if any(e.dist_id == dist_id for e in self.entries):
            raise UsageError(f"distribution id {dist_id!r} already registered")
        ts = timestamp or datetime.now(timezone.utc).isoformat()
        entry = RegistryEntry(dist_id, np.asarray(wm.bits, dtype=np.uint8),
                              ts, wm.meta, bernoulli)
        self.entries.append(entry)
        return entry

    def get(self, dist_id: str) -> RegistryEntry:
        for e in self.entries:
            if e.dist_id == dist_id:
                return e
        raise UsageError(f"unknown distribution id {dist_id!r}")

    def all_bernoulli(self) -> bool:
        return all(e.bernoulli for e in self.entries)

    def __len__(self):
        return len(self.entries)


# ---------------------------------------------------------------------------
# key selection


def _smallest_by_magnitude(candidates: np.ndarray, magnitudes: np.ndarray,
                           n_bits: int, what: str) -> np.ndarray:
    if candidates.size < n_bits:
        raise CapacityError(
            f"only {candidates.size} {what} edges available for {n_bits} bits")
    # stable sort keeps canonical index order among ties
    order = np.argsort(magnitudes[candidates], kind="stable")
    return candidates[order[:n_bits]]


def select_key_cross_label(g_train: Graph, model, n_bits: int) -> WatermarkKey:
    """Key for the training-graph-as-trigger deployment.

    Candidates are edges joining differently labeled nodes (a rare local
    structure); of those, the n_bits with carrier values nearest zero are
    chosen.
    """
    if g_train.y is None:
        raise UsageError("cross-label selection needs a labeled graph")
    edges = g_train.canonical_edges()
    candidates = np.nonzero(g_train.y[edges[:, 0]] != g_train.y[edges[:, 1]])[0]
    if candidates.size < n_bits:
        raise CapacityError(
            f"only {candidates.size} cross-label edges available for {n_bits} bits")
    mags = np.abs(edge_gap_values(model, g_train))
    chosen = _smallest_by_magnitude(candidates, mags, n_bits, "cross-label")
    return WatermarkKey(chosen, g_train.name)


def random_walk_embeddings(g: Graph, seed: int, dim: int = 16, walk_len: int = 8,
                           walks_per_node: int = 20) -> np.ndarray:
    """Structural node embeddings from truncated random-walk visit histograms.

    Each node's visit histogram over walks_per_node walks of walk_len steps
    is normalized and projected through a seeded Gaussian matrix. Fewer
    than ~20 walks per node leaves too much multinomial noise for the
    downstream density clustering to be stable.
    """
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    agg = g.agg()
    order = np.argsort(agg.src, kind="stable")
    src_sorted, dst_sorted = agg.src[order], agg.dst[order]
    starts = np.searchsorted(src_sorted, np.arange(n))
    ends = np.searchsorted(src_sorted, np.arange(n) + 1)
    hist = np.zeros((n, n))
    for v in range(n):
        for _ in range(walks_per_node):
            cur = v
            for _ in range(walk_len):
                lo, hi = starts[cur], ends[cur]
                if lo == hi:
                    break
                cur = int(dst_sorted[lo + rng.integers(hi - lo)])
                hist[v, cur] += 1.0
    totals = hist.sum(axis=1, keepdims=True)
    hist = np.divide(hist, totals, out=np.zeros_like(hist), where=totals > 0)
    proj = rng.standard_normal((n, dim))
    return hist @ proj


def density_clusters(points: np.ndarray, radius_scale: float = 0.5,
                     min_pts: int = 4) -> np.ndarray:
    """Density clustering; nodes outside every dense region become singletons.

    The neighborhood radius is radius_scale times the median pairwise
    distance. A point is core when at least min_pts points (itself
    included) fall inside its radius.
    """
    n = points.shape[0]
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    tri = dist[np.triu_indices(n, k=1)]
    radius = radius_scale * (np.median(tri) if tri.size else 0.0)
    within = dist <= radius
    core = within.sum(axis=1) >= min_pts
    labels = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for start in range(n):
        if labels[start] != -1 or not core[start]:
            continue
        labels[start] = next_label
        queue = [start]
        while queue:
            node = queue.pop()
            for nbr in np.nonzero(within[node])[0]:
                if labels[nbr] == -1:
                    labels[nbr] = next_label
                    if core[nbr]:
                        queue.append(int(nbr))
        next_label += 1
    for i in range(n):
        if labels[i] == -1:
            labels[i] = next_label
            next_label += 1
    return labels


def select_key_structural(trigger: Graph, model, n_bits: int,
                          rarity_fraction: float = 0.5, seed: int = 0) -> WatermarkKey:
    """Key selection for label-free trigger graphs.

    Nodes are clustered on random-walk embeddings; edges bridging distinct
    pseudo-clusters are the rare candidates. The candidate pool is capped
    at the rarity_fraction most structurally dissimilar edges;
    rarity_fraction = 1.0 degenerates to every edge being a candidate.
    Among candidates the n_bits with carrier values nearest zero win.
    """
    if not (0 < rarity_fraction <= 1.0):
        raise ConfigError("rarity_fraction must be in (0, 1]")
    edges = trigger.canonical_edges()
    m = edges.shape[0]
    emb = random_walk_embeddings(trigger, seed)
    labels = density_clusters(emb)
    cross = labels[edges[:, 0]] != labels[edges[:, 1]]
    if rarity_fraction >= 1.0:
        candidates = np.arange(m)
    else:
        sep = np.linalg.norm(emb[edges[:, 0]] - emb[edges[:, 1]], axis=1)
        # rank: cross-cluster edges first, then by endpoint dissimilarity
        order = np.lexsort((-sep, ~cross))
        cap = int(np.ceil(rarity_fraction * m))
        capped = order[:cap]
        candidates = np.sort(capped[cross[capped]])
    mags = np.abs(edge_gap_values(model, trigger))
    chosen = _smallest_by_magnitude(candidates, mags, n_bits, "cross-cluster")
    return WatermarkKey(chosen, trigger.name)


# ---------------------------------------------------------------------------
# file formats


def save_key(key: WatermarkKey, path) -> None:
    with open(path, "w") as fh:
        json.dump({"trigger_graph_name": key.trigger_graph_name,
                   "n_bits": key.n_bits,
                   "edge_indices": key.edge_indices.tolist()}, fh)


def load_key(path) -> WatermarkKey:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    for f in ("trigger_graph_name", "n_bits", "edge_indices"):
        if f not in d:
            raise ParseError(f"{path}: missing field '{f}'")
    idx = d["edge_indices"]
    if not isinstance(idx, list) or len(idx) != d["n_bits"]:
        raise ParseError(f"{path}: field 'edge_indices' does not match 'n_bits'")
    return WatermarkKey(np.asarray(idx, dtype=np.int64), d["trigger_graph_name"])


def save_registry(reg: WatermarkRegistry, path) -> None:
    doc = [{"id": e.dist_id, "bits": "".join(str(int(b)) for b in e.bits),
            "timestamp": e.timestamp, "meta": e.meta, "bernoulli": e.bernoulli}
           for e in reg.entries]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_registry(path) -> WatermarkRegistry:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{path}: top level must be a list")
    reg = WatermarkRegistry()
    for i, e in enumerate(doc):
        for f in ("id", "bits", "timestamp"):
            if f not in e:
                raise ParseError(f"{path}: entry {i} missing field '{f}'")
        if not set(e["bits"]) <= {"0", "1"}:
            raise ParseError(f"{path}: entry {i} field 'bits' must be a 0/1 string")
        bits = np.frombuffer(e["bits"].encode(), dtype=np.uint8) - ord("0")
        reg.add(e["id"], WatermarkString(bits, e.get("meta")),
                bernoulli=bool(e.get("bernoulli", True)), timestamp=e["timestamp"])
    return reg
