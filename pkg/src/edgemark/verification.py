"""Ownership verification: single-query extraction, matching, collision math.

Verification queries the suspect prediction endpoint once with the trigger
graph, recovers the bit string from the carrier-value signs at the key
edges, and matches it against every registered payload. The decision
statistic is Hamming similarity; its chance distribution for unrelated
models is Binomial(n, 1/2)/n, approximated by N(1/2, 1/(4n)).
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from fractions import Fraction
from typing import Protocol

import numpy as np

from .carrier import edge_gap, extract_bits
from .errors import ConfigError, DimensionError, ProtocolError, UsageError
from .graphs import Graph
from .models import GnnModel, forward
from .watermark import WatermarkKey, WatermarkRegistry

DEFAULT_TAU = 0.75


def hamming_similarity(a, b) -> float:
    """Fraction of positions where two bit vectors agree."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"bit vectors of length {a.size} and {b.size}")
    if a.size == 0:
        raise DimensionError("empty bit vectors")
    return float(np.mean(a == b))


class PredictionProvider(Protocol):
    """Anything that answers a graph with one probability row per node."""

    def predict(self, g: Graph) -> np.ndarray: ...


class InProcessProvider:
    def __init__(self, model: GnnModel, name: str = "local"):
        self.model = model
        self.name = name
        self.queries = 0

    def predict(self, g: Graph) -> np.ndarray:
        self.queries += 1
        _, probs = forward(self.model, g)
        return probs


@dataclass
class VerificationResult:
    is_copy: bool
    matched_id: str | None         # present iff is_copy
    matched_hms: float             # best similarity over the registry
    extracted_bits: np.ndarray
    tau: float
    hms_table: dict                # dist_id -> similarity, for reporting


def _check_probs(probs: np.ndarray, n_nodes: int) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != n_nodes:
        raise ProtocolError(f"expected {n_nodes} probability rows, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise ProtocolError("probability rows contain invalid values")
    if np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-6:
        raise ProtocolError("probability rows do not sum to 1")
    return probs


def verify(provider: PredictionProvider, trigger: Graph, key: WatermarkKey,
           registry: WatermarkRegistry, tau: float = DEFAULT_TAU) -> VerificationResult:
    """Single-query ownership check against every registered payload.

    The registered string of the best match is reported, never the
    extracted one; the extracted bits are carried for diagnostics only.
    """
    if len(registry) == 0:
        raise UsageError("registry is empty")
    probs = _check_probs(provider.predict(trigger), trigger.num_nodes)
    values = edge_gap(probs, trigger).data.ravel()
    extracted = extract_bits(values, key.edge_indices)
    table, best_id, best = {}, None, -1.0
    for entry in registry.entries:
        sim = hamming_similarity(extracted, entry.bits)
        table[entry.dist_id] = sim
        if sim > best:
            best, best_id = sim, entry.dist_id
    is_copy = best >= tau
    return VerificationResult(is_copy, best_id if is_copy else None, best,
                              extracted, tau, table)


def population_metrics(decisions) -> tuple[float, float]:
    """(overall accuracy, false positive rate) over (predicted, truth) pairs.

    truth is True for watermarked models; predicted is the verify decision.
    """
    decisions = list(decisions)
    if not decisions:
        raise UsageError("empty population")
    correct = sum(1 for pred, truth in decisions if pred == truth)
    independents = [pred for pred, truth in decisions if not truth]
    ova = correct / len(decisions)
    fpr = (sum(independents) / len(independents)) if independents else 0.0
    return ova, fpr


# ---------------------------------------------------------------------------
# collision probability <-> decision threshold


def _check_nbits(n_bits: int):
    if n_bits < 1:
        raise ConfigError("n_bits must be >= 1")


def collision_threshold(n_bits: int, alpha: float) -> float:
    """Smallest tau with chance-match probability <= alpha.

    Under HMS ~ N(1/2, 1/(4n)): tau = 1/2 + probit(1 - alpha) / (2 sqrt(n)).
    """
    _check_nbits(n_bits)
    if not (0 < alpha < 1):
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    # probit(1 - alpha) = -probit(alpha); evaluating at alpha keeps tiny
    # tail probabilities exact instead of rounding 1 - alpha to 1.
    z = -statistics.NormalDist().inv_cdf(alpha)
    return 0.5 + z * math.sqrt(1.0 / (4.0 * n_bits))


def collision_alpha(n_bits: int, tau: float) -> float:
    """Chance probability that an unrelated model reaches similarity tau."""
    _check_nbits(n_bits)
    z = (tau - 0.5) * 2.0 * math.sqrt(n_bits)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def collision_alpha_exact(n_bits: int, tau: float) -> float:
    """Exact Binomial(n, 1/2) tail P(matches >= ceil(tau * n)).

    Independent check on the normal approximation; exact integer
    arithmetic until the final division.
    """
    _check_nbits(n_bits)
    k_min = math.ceil(tau * n_bits - 1e-12)
    k_min = max(0, min(k_min, n_bits + 1))
    total = sum(math.comb(n_bits, k) for k in range(k_min, n_bits + 1))
    return float(Fraction(total, 2 ** n_bits))


CORRELATION_CAVEAT = (
    "registry contains imported (non coin-flip) payloads; chance-match "
    "probabilities assume independent fair bits, so a higher decision "
    "threshold is required and no alpha is certified here")


def verification_report(result: VerificationResult, registry: WatermarkRegistry,
                        n_bits: int) -> str:
    """Plain-text report: extracted bits, per-entry similarity, decision."""
    lines = ["verification report",
             f"extracted: {''.join(str(int(b)) for b in result.extracted_bits)}",
             "similarity by distribution:"]
    for dist_id, sim in sorted(result.hms_table.items(), key=lambda kv: -kv[1]):
        lines.append(f"  {dist_id}: {sim:.4f}")
    lines.append(f"decision: {'COPY' if result.is_copy else 'not a copy'} "
                 f"(best {result.matched_hms:.4f} vs tau {result.tau})")
    if result.is_copy:
        lines.append(f"matched distribution: {result.matched_id}")
    if registry.all_bernoulli():
        lines.append(f"chance-match alpha at tau: {collision_alpha(n_bits, result.tau):.3e}")
    else:
        lines.append(f"warning: {CORRELATION_CAVEAT}")
    return "\n".join(lines)
