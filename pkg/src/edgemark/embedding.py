"""Watermark embedding: fine-tune a model until the payload bits extract.

Three deployment paths share one loop shape. With a training graph the
trigger is either that graph itself (setting 1) or a synthesized graph
(setting 2); without any training graph (setting 3) a pseudo graph with
fixed preferential-attachment topology stands in for it and its features
are adversarially pushed away from teacher/student agreement between model
updates. Embedding never mutates the input model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .carrier import edge_gap, extract_bits, feature_cosines
from .errors import DimensionError, NumericError, UsageError
from .graphs import Graph, generate_ba
from .models import GnnModel, forward, forward_tensors, wrap_params
from .optim import Adam
from .watermark import WatermarkKey, WatermarkString


@dataclass(frozen=True)
class EmbedConfig:
    learning_rate: float = 5e-5
    weight_decay: float = 1e-4
    max_epochs: int = 2000
    gamma: float = 10.0            # sharpness of the sign-alignment sigmoid
    stop_on_exact_extraction: bool = True
    soft_targets: bool = False     # data-free path: distill soft teacher rows
    feature_lr: float = 1e-3       # data-free path: pseudo-feature ascent step
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.gamma <= 0:
            raise UsageError("learning_rate and gamma must be positive")


@dataclass(frozen=True)
class TriggerSynthConfig:
    lam: float = 1e-4              # weight of the cosine-saturation penalty
    feature_lr: float = 1e-2
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise UsageError("lam must be >= 0")


@dataclass(frozen=True)
class PseudoGraphConfig:
    num_nodes: int = 400
    attach_m: int = 3
    seed: int = 0


@dataclass
class EmbedResult:
    model: GnnModel
    success: bool
    epochs_used: int
    pre_hms: float                 # payload agreement before any update
    hms: float                     # payload agreement of the returned model
    ce_curve: list = field(default_factory=list)
    bce_curve: list = field(default_factory=list)


def bit_alignment_loss(values: Tensor, key: WatermarkKey, wm: WatermarkString,
                       gamma: float) -> Tensor:
    """Mean binary cross entropy of sigmoid(gamma * carrier) against the bits.

    Written in softplus form, softplus(x) - w * x with x = gamma * value,
    which is exact and stable for any magnitude.
    """
    if key.n_bits != wm.n_bits:
        raise DimensionError(f"key has {key.n_bits} edges for {wm.n_bits} bits")
    picked = ad.gather_rows(values, key.edge_indices)
    x = ad.scale(picked, gamma)
    target = wm.bits.astype(np.float64).reshape(-1, 1)
    return ad.mean_all(ad.sub(ad.softplus(x), ad.mul(ad.constant(target), x)))


def _agreement(bits_a: np.ndarray, bits_b: np.ndarray) -> float:
    return float(np.mean(bits_a == bits_b))


def _extract_now(model: GnnModel, trigger: Graph, key: WatermarkKey) -> np.ndarray:
    _, probs = forward(model, trigger)
    vals = edge_gap(probs, trigger).data.ravel()
    return extract_bits(vals, key.edge_indices)


def _check_lengths(key: WatermarkKey, wm: WatermarkString):
    if key.n_bits != wm.n_bits:
        raise DimensionError(f"key has {key.n_bits} edges for {wm.n_bits} bits")


def _embed_with_graph(m_o: GnnModel, g_train: Graph, trigger: Graph,
                      key: WatermarkKey, wm: WatermarkString,
                      cfg: EmbedConfig) -> EmbedResult:
    if g_train.y is None:
        raise UsageError("embedding with a training graph needs labels")
    _check_lengths(key, wm)
    model = m_o.copy()
    opt = Adam(model.param_arrays(), cfg.learning_rate, cfg.weight_decay)
    pre_hms = None
    best_hms = -1.0
    ce_curve, bce_curve = [], []
    for epoch in range(cfg.max_epochs + 1):
        bits = _extract_now(model, trigger, key)
        hms = _agreement(bits, wm.bits)
        if pre_hms is None:
            pre_hms = hms
        best_hms = max(best_hms, hms)
        if hms == 1.0 and cfg.stop_on_exact_extraction:
            return EmbedResult(model, True, epoch, pre_hms, hms, ce_curve, bce_curve)
        if epoch == cfg.max_epochs:
            break
        tape = Tape()
        params = wrap_params(model, tape)
        logits, _ = forward_tensors(model, g_train, tape, params)
        ce = ad.cross_entropy_logits(logits, g_train.y)
        _, probs_t = forward_tensors(model, trigger, tape, params)
        bce = bit_alignment_loss(edge_gap(probs_t, trigger), key, wm, cfg.gamma)
        loss = ad.add(ce, bce)
        if not np.isfinite(loss.data):
            raise NumericError(f"embedding loss diverged at epoch {epoch}")
        ce_curve.append(float(ce.data))
        bce_curve.append(float(bce.data))
        tape.backward(loss)
        opt.step([p.grad for p in params])
    bits = _extract_now(model, trigger, key)
    hms = _agreement(bits, wm.bits)
    success = hms == 1.0 or not cfg.stop_on_exact_extraction
    return EmbedResult(model, success, cfg.max_epochs, pre_hms, hms,
                       ce_curve, bce_curve)


def embed_setting1(m_o: GnnModel, g_train: Graph, trigger: Graph,
                   key: WatermarkKey, wm: WatermarkString,
                   cfg: EmbedConfig = EmbedConfig()) -> EmbedResult:
    """Embed using the training graph itself as the trigger graph."""
    return _embed_with_graph(m_o, g_train, trigger, key, wm, cfg)


def embed_setting2(m_o: GnnModel, g_train: Graph, trigger_synth: Graph,
                   key: WatermarkKey, wm: WatermarkString,
                   cfg: EmbedConfig = EmbedConfig()) -> EmbedResult:
    """Embed with a synthesized trigger graph; loop identical to setting 1."""
    return _embed_with_graph(m_o, g_train, trigger_synth, key, wm, cfg)


def synth_trigger(m_o: GnnModel, topology: Graph,
                  cfg: TriggerSynthConfig = TriggerSynthConfig()) -> Graph:
    """Optimize trigger-node features on a fixed topology.

    Minimizes the mean carrier magnitude (bits become cheap to flip) plus
    lam / (1 - |cos|) per edge, which repels feature cosines from the
    saturated ends of [-1, 1]. Topology is untouched; returns a new graph.
    """
    if topology.num_edges() == 0:
        raise UsageError("trigger topology has no edges")
    rng = np.random.default_rng(cfg.seed)
    feat = rng.standard_normal((topology.num_nodes, m_o.in_dim))
    shell = Graph(feat, topology.edges, None, f"{topology.name}/trigger")
    opt = Adam([feat], cfg.feature_lr)
    for _ in range(cfg.epochs):
        tape = Tape()
        ft = tape.parameter(feat)
        _, probs = forward_tensors(m_o, shell, tape, features=ft)
        gap = edge_gap(probs, shell, features=ft)
        fcos = feature_cosines(ft, shell)
        sat = ad.clamp_max(ad.absolute(fcos), 1.0 - 1e-6)
        penalty = ad.mean_all(ad.div(ad.constant(np.float64(1.0)),
                                     ad.sub(ad.constant(np.float64(1.0)), sat)))
        loss = ad.add(ad.mean_all(ad.absolute(gap)), ad.scale(penalty, cfg.lam))
        if not np.isfinite(loss.data):
            raise NumericError("trigger synthesis loss diverged")
        tape.backward(loss)
        opt.step([ft.grad])
    return Graph(feat, topology.edges, None, f"{topology.name}/trigger")


def embed_setting3(m_o: GnnModel, trigger: Graph, key: WatermarkKey,
                   wm: WatermarkString, cfg: EmbedConfig = EmbedConfig(),
                   pseudo_cfg: PseudoGraphConfig = PseudoGraphConfig()) -> EmbedResult:
    """Embed without any training graph.

    A pseudo graph with preferential-attachment topology and Gaussian
    features substitutes for training data. Each round takes one model
    step toward matching the original model's predictions on the pseudo
    graph (plus the bit-alignment term), then one gradient-ascent step on
    the pseudo features to maximize that disagreement again. Topology
    stays fixed throughout.
    """
    _check_lengths(key, wm)
    pseudo = generate_ba(pseudo_cfg.num_nodes, pseudo_cfg.attach_m,
                         m_o.in_dim, pseudo_cfg.seed)
    feat = pseudo.x.copy()
    model = m_o.copy()
    opt = Adam(model.param_arrays(), cfg.learning_rate, cfg.weight_decay)
    pre_hms = None
    best_hms = -1.0
    ce_curve, bce_curve = [], []

    def teacher_on(features: np.ndarray):
        logits, probs = forward(m_o, pseudo.with_features(features))
        return np.argmax(logits, axis=1), probs

    for epoch in range(cfg.max_epochs + 1):
        bits = _extract_now(model, trigger, key)
        hms = _agreement(bits, wm.bits)
        if pre_hms is None:
            pre_hms = hms
        best_hms = max(best_hms, hms)
        if hms == 1.0 and cfg.stop_on_exact_extraction:
            return EmbedResult(model, True, epoch, pre_hms, hms, ce_curve, bce_curve)
        if epoch == cfg.max_epochs:
            break
        shell = pseudo.with_features(feat)
        hard, soft = teacher_on(feat)
        # model step
        tape = Tape()
        params = wrap_params(model, tape)
        logits, _ = forward_tensors(model, shell, tape, params)
        ce = (ad.soft_cross_entropy(logits, soft) if cfg.soft_targets
              else ad.cross_entropy_logits(logits, hard))
        _, probs_t = forward_tensors(model, trigger, tape, params)
        bce = bit_alignment_loss(edge_gap(probs_t, trigger), key, wm, cfg.gamma)
        loss = ad.add(ce, bce)
        if not np.isfinite(loss.data):
            raise NumericError(f"embedding loss diverged at epoch {epoch}")
        ce_curve.append(float(ce.data))
        bce_curve.append(float(bce.data))
        tape.backward(loss)
        opt.step([p.grad for p in params])
        # feature step: one plain ascent step on the agreement term
        tape2 = Tape()
        ft = tape2.parameter(feat)
        logits2, _ = forward_tensors(model, shell, tape2, features=ft)
        ce2 = (ad.soft_cross_entropy(logits2, soft) if cfg.soft_targets
               else ad.cross_entropy_logits(logits2, hard))
        tape2.backward(ce2)
        if ft.grad is not None:
            feat += cfg.feature_lr * ft.grad
    bits = _extract_now(model, trigger, key)
    hms = _agreement(bits, wm.bits)
    success = hms == 1.0 or not cfg.stop_on_exact_extraction
    return EmbedResult(model, success, cfg.max_epochs, pre_hms, hms,
                       ce_curve, bce_curve)


def argmax_agreement(model_a: GnnModel, model_b: GnnModel, g: Graph) -> float:
    """Fraction of nodes on which two models pick the same class."""
    la, _ = forward(model_a, g)
    lb, _ = forward(model_b, g)
    return float(np.mean(np.argmax(la, axis=1) == np.argmax(lb, axis=1)))


def prediction_flips(model_a: GnnModel, model_b: GnnModel, g: Graph):
    """Flip fraction plus per-class net prediction gain between two models.

    Returns (flip_fraction, net_gain) where net_gain[c] is the signed
    fraction of nodes that model_b assigns to class c beyond model_a.
    """
    la, _ = forward(model_a, g)
    lb, _ = forward(model_b, g)
    pa, pb = np.argmax(la, axis=1), np.argmax(lb, axis=1)
    flips = float(np.mean(pa != pb))
    c = max(la.shape[1], lb.shape[1])
    gain = (np.bincount(pb, minlength=c) - np.bincount(pa, minlength=c)) / g.num_nodes
    return flips, gain
