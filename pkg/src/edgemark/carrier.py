"""Per-edge watermark carrier values.

For every unordered edge (u, v) the carrier value is the cosine similarity
of the two endpoints' standardized log-probabilities minus the cosine
similarity of their raw features. The sign of a carrier value encodes one
payload bit (negative -> 0, zero or positive -> 1). All functions accept
Tensors or plain arrays; gradients flow through any Tensor inputs.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericError
from .graphs import Graph

PROB_FLOOR = 1e-12  # probabilities are clamped here before the log


def standardize_predictions(probs) -> Tensor:
    """Row-wise (log p - mean) / std with the unbiased (n-1) deviation.

    Equivalent to standardizing the logits directly, so the result is
    insensitive to whether a black-box endpoint returns probabilities or
    shifted logits.
    """
    probs = probs if isinstance(probs, Tensor) else ad.constant(probs)
    n, c = probs.data.shape
    if c < 2:
        raise DimensionError("standardization needs at least 2 classes")
    logp = ad.log(ad.clamp_min(probs, PROB_FLOOR))
    centered = ad.sub(logp, ad.row_mean(logp))
    var = ad.scale(ad.row_sum(ad.mul(centered, centered)), 1.0 / (c - 1))
    std = ad.sqrt(var)
    zero = np.nonzero(std.data.ravel() == 0.0)[0]
    if zero.size:
        raise NumericError(f"constant prediction row for node {int(zero[0])}")
    return ad.div(centered, std)


def standardize_logits(z) -> np.ndarray:
    """Plain-array standardization of logits; the equivalence reference path."""
    z = np.asarray(z, dtype=np.float64)
    mu = z.mean(axis=1, keepdims=True)
    sd = z.std(axis=1, ddof=1, keepdims=True)
    return (z - mu) / sd


def _row_cosine(a, b, who: str) -> Tensor:
    dot = ad.row_sum(ad.mul(a, b))
    na = ad.sqrt(ad.row_sum(ad.mul(a, a)))
    nb = ad.sqrt(ad.row_sum(ad.mul(b, b)))
    for t, side in ((na, 0), (nb, 1)):
        zero = np.nonzero(t.data.ravel() == 0.0)[0]
        if zero.size:
            raise NumericError(f"zero-norm {who} row at edge {int(zero[0])}, endpoint {side}")
    return ad.div(dot, ad.mul(na, nb))


def feature_cosines(features, g: Graph) -> Tensor:
    """cos(X_u, X_v) per canonical edge."""
    features = features if isinstance(features, Tensor) else ad.constant(features)
    edges = g.canonical_edges()
    return _row_cosine(ad.gather_rows(features, edges[:, 0]),
                       ad.gather_rows(features, edges[:, 1]), "feature")


def prediction_cosines(probs, g: Graph) -> Tensor:
    """cos(Ytilde_u, Ytilde_v) per canonical edge."""
    t = standardize_predictions(probs)
    edges = g.canonical_edges()
    return _row_cosine(ad.gather_rows(t, edges[:, 0]),
                       ad.gather_rows(t, edges[:, 1]), "prediction")


def edge_gap(probs, g: Graph, features=None) -> Tensor:
    """Carrier values: prediction cosine minus feature cosine, per edge.

    Values lie in [-2, 2]. Shape is (num_edges, 1) in canonical edge order.
    """
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    if data.shape[0] != g.num_nodes:
        raise DimensionError(f"{data.shape[0]} prediction rows for {g.num_nodes} nodes")
    feats = g.x if features is None else features
    return ad.sub(prediction_cosines(probs, g), feature_cosines(feats, g))


def edge_gap_values(model, g: Graph) -> np.ndarray:
    """Inference-only carrier values for a model on a graph, flat (m,)."""
    from .models import forward
    _, probs = forward(model, g)
    return edge_gap(probs, g).data.ravel()


def extract_bits(values: np.ndarray, key_indices: np.ndarray) -> np.ndarray:
    """Binarize carrier values at the key positions: 0 if negative else 1."""
    values = np.asarray(values).ravel()
    key_indices = np.asarray(key_indices, dtype=np.int64)
    if key_indices.size and (key_indices.min() < 0 or key_indices.max() >= values.size):
        raise DimensionError("key index out of range")
    return (values[key_indices] >= 0.0).astype(np.uint8)
