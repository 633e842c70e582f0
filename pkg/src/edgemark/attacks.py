"""Adversary simulations: pruning, fine-tuning, overwriting, extraction.

Every attack is a pure transformation: the input model is left untouched
and a post-processed copy is returned. The sweep runner drives grids of
(model, attack, parameter) cells and emits one CSV row per cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .carrier import edge_gap, extract_bits
from .embedding import (EmbedConfig, EmbedResult, PseudoGraphConfig,
                        TriggerSynthConfig, bit_alignment_loss, embed_setting3,
                        synth_trigger)
from .errors import ConfigError, UsageError
from .graphs import Graph, _mirror
from .models import GnnModel, forward, forward_tensors, test_accuracy, wrap_params
from .optim import Adam
from .verification import InProcessProvider, PredictionProvider, verify
from .watermark import (WatermarkKey, WatermarkRegistry, random_watermark,
                        select_key_structural)


def prune_l1(model: GnnModel, ratio: float) -> GnnModel:
    """Structured L1 pruning: zero the weakest hidden units per layer.

    A unit is one output column of the layer's weight matrices together
    with its bias entry; units are ranked by summed L1 norm and the
    smallest floor(ratio * units) are zeroed. Ties keep the lower index.
    The final layer holds the class logits, not hidden units, so it is
    never pruned.
    """
    if not (0 <= ratio < 1):
        raise ConfigError(f"ratio must be in [0, 1), got {ratio}")
    pruned = model.copy()
    for spec, p in zip(pruned.layers[:-1], pruned.params[:-1]):
        norms = np.zeros(spec.out_dim)
        for arr in p.values():
            norms += np.abs(arr).sum(axis=0)
        k = int(ratio * spec.out_dim)
        if k == 0:
            continue
        victims = np.argsort(norms, kind="stable")[:k]
        for arr in p.values():
            arr[:, victims] = 0.0
    return pruned


def finetune_attack(m_w: GnnModel, g_val: Graph, epochs: int,
                    lr: float = 5e-5, weight_decay: float = 1e-4) -> GnnModel:
    """Cross-entropy-only fine-tuning on a small labeled graph."""
    if g_val.y is None:
        raise UsageError("fine-tuning needs a labeled graph")
    model = m_w.copy()
    opt = Adam(model.param_arrays(), lr, weight_decay)
    for _ in range(epochs):
        tape = Tape()
        params = wrap_params(model, tape)
        logits, _ = forward_tensors(model, g_val, tape, params)
        loss = ad.cross_entropy_logits(logits, g_val.y)
        tape.backward(loss)
        opt.step([p.grad for p in params])
    return model


@dataclass
class AttackReport:
    kind: str
    params: dict = field(default_factory=dict)
    tac_before: float | None = None
    tac_after: float | None = None
    hms_before: float | None = None
    hms_after: float | None = None
    verified_after: bool | None = None


def overwrite_attack(m_w: GnnModel, adversary_topology: Graph, n_bits: int,
                     seed: int, owner_trigger: Graph, owner_key: WatermarkKey,
                     owner_bits: np.ndarray, g_test: Graph | None = None,
                     synth_cfg: TriggerSynthConfig | None = None,
                     embed_cfg: EmbedConfig | None = None,
                     pseudo_cfg: PseudoGraphConfig | None = None):
    """Adversary embeds its own payload through the data-free path.

    The adversary knows the algorithm but has no training graph: it
    synthesizes a trigger on its own topology, picks its own key and
    payload, and runs the data-free embedding on the stolen model. Returns
    (attacked model, report on the owner's payload, adversary EmbedResult).
    """
    synth_cfg = synth_cfg or TriggerSynthConfig(seed=seed)
    embed_cfg = embed_cfg or EmbedConfig(seed=seed)
    pseudo_cfg = pseudo_cfg or PseudoGraphConfig(seed=seed + 1)

    def owner_hms(model):
        _, probs = forward(model, owner_trigger)
        vals = edge_gap(probs, owner_trigger).data.ravel()
        return float(np.mean(extract_bits(vals, owner_key.edge_indices) == owner_bits))

    adv_trigger = synth_trigger(m_w, adversary_topology, synth_cfg)
    adv_key = select_key_structural(adv_trigger, m_w, n_bits, seed=seed)
    adv_wm = random_watermark(n_bits, seed)
    result = embed_setting3(m_w, adv_trigger, adv_key, adv_wm, embed_cfg, pseudo_cfg)
    report = AttackReport(
        kind="overwrite", params={"n_bits": n_bits, "seed": seed},
        tac_before=None if g_test is None else test_accuracy(m_w, g_test),
        tac_after=None if g_test is None else test_accuracy(result.model, g_test),
        hms_before=owner_hms(m_w), hms_after=owner_hms(result.model))
    return result.model, report, result


def public_query_graph(g_train: Graph, fraction: float = 0.8, seed: int = 0) -> Graph:
    """Node-induced subgraph over a node fraction, labels stripped."""
    if not (0 < fraction <= 1):
        raise ConfigError("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    n = g_train.num_nodes
    part = np.sort(rng.permutation(n)[:max(1, int(fraction * n))])
    remap = np.full(n, -1, dtype=np.int64)
    remap[part] = np.arange(part.size)
    can = g_train.canonical_edges()
    keep = (remap[can[:, 0]] >= 0) & (remap[can[:, 1]] >= 0)
    return Graph(g_train.x[part], _mirror(remap[can[keep]]), None,
                 f"{g_train.name}/public")


def extract_surrogate(provider: PredictionProvider, g_public: Graph,
                      arch, epochs: int = 1500, lr: float = 1e-4,
                      seed: int = 0) -> GnnModel:
    """Train a surrogate from one black-box query on the public nodes.

    The provider is queried exactly once; the surrogate minimizes forward
    KL from the returned probability rows to its own predictions.
    """
    teacher = np.asarray(provider.predict(g_public), dtype=np.float64)
    if teacher.shape[0] != g_public.num_nodes:
        raise UsageError("provider returned wrong number of rows")
    surrogate = GnnModel.init(list(arch), seed)
    opt = Adam(surrogate.param_arrays(), lr)
    # the teacher entropy term of KL is constant; train on cross entropy
    for _ in range(epochs):
        tape = Tape()
        params = wrap_params(surrogate, tape)
        logits, _ = forward_tensors(surrogate, g_public, tape, params)
        loss = ad.soft_cross_entropy(logits, teacher)
        tape.backward(loss)
        opt.step([p.grad for p in params])
    return surrogate


# ---------------------------------------------------------------------------
# sweep runner


SWEEP_COLUMNS = ["model_id", "setting", "attack", "param", "tac_before",
                 "tac_after", "hms_before", "hms_after", "ce_test", "bce_wm",
                 "verified"]


@dataclass
class SweepContext:
    trigger: Graph
    key: WatermarkKey
    registry: WatermarkRegistry
    g_test: Graph
    g_val: Graph | None = None
    tau: float = 0.75
    gamma: float = 10.0
    finetune_lr: float = 5e-5


@dataclass
class SweepCell:
    model_id: str
    setting: str                   # "1" | "2" | "3" | "independent"
    model: GnnModel
    bits: np.ndarray | None        # registered payload; None for independents
    attack: str                    # "none" | "prune" | "finetune"
    param: float = 0.0


def _cell_metrics(ctx: SweepContext, cell: SweepCell) -> dict:
    if cell.attack == "prune":
        attacked = prune_l1(cell.model, cell.param)
    elif cell.attack == "finetune":
        if ctx.g_val is None:
            raise UsageError("finetune sweep needs a validation graph")
        attacked = finetune_attack(cell.model, ctx.g_val, int(cell.param),
                                   ctx.finetune_lr)
    elif cell.attack == "none":
        attacked = cell.model
    else:
        raise ConfigError(f"unknown sweep attack {cell.attack!r}")

    def hms_of(model):
        res = verify(InProcessProvider(model), ctx.trigger, ctx.key,
                     ctx.registry, ctx.tau)
        if cell.bits is None:
            return res.matched_hms, res
        _, probs = forward(model, ctx.trigger)
        vals = edge_gap(probs, ctx.trigger).data.ravel()
        own = float(np.mean(extract_bits(vals, ctx.key.edge_indices) == cell.bits))
        return own, res

    hms_before, _ = hms_of(cell.model)
    hms_after, res_after = hms_of(attacked)
    logits, _ = forward(attacked, ctx.g_test)
    ce_test = float(ad.cross_entropy_logits(ad.constant(logits), ctx.g_test.y).data)
    if cell.bits is not None:
        _, probs_t = forward(attacked, ctx.trigger)
        from .watermark import WatermarkString
        bce = float(bit_alignment_loss(edge_gap(probs_t, ctx.trigger), ctx.key,
                                       WatermarkString(cell.bits), ctx.gamma).data)
    else:
        bce = float("nan")
    return {
        "model_id": cell.model_id, "setting": cell.setting, "attack": cell.attack,
        "param": cell.param,
        "tac_before": test_accuracy(cell.model, ctx.g_test),
        "tac_after": test_accuracy(attacked, ctx.g_test),
        "hms_before": hms_before, "hms_after": hms_after,
        "ce_test": ce_test, "bce_wm": bce,
        "verified": res_after.is_copy,
    }


def sweep(ctx: SweepContext, cells: list[SweepCell], out_path=None) -> list[dict]:
    """Run every cell in order; failures become rows, never aborts.

    Rows follow SWEEP_COLUMNS; a failed cell records verified='error' with
    blank metrics.
    """
    rows = []
    for cell in cells:
        try:
            rows.append(_cell_metrics(ctx, cell))
        except Exception as exc:  # record and continue
            rows.append({"model_id": cell.model_id, "setting": cell.setting,
                         "attack": cell.attack, "param": cell.param,
                         "tac_before": "", "tac_after": "", "hms_before": "",
                         "hms_after": "", "ce_test": "", "bce_wm": "",
                         "verified": f"error: {exc}"})
    if out_path is not None:
        write_sweep_csv(rows, out_path)
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
