"""Acceptance suite: every shipping criterion at its stated tolerance.

Builds one deterministic desk-scale world (session fixture): an SBM graph,
an original model, ten independently trained models, and ten watermarked
models per deployment setting. Each criterion prints one PASS/FAIL line.
Run with `pytest tests/test_acceptance.py -v -s`. The full suite takes
roughly 20 minutes on one core.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pytest

from edgemark import autodiff as ad
from edgemark.autodiff import grad_check
from edgemark.attacks import (SweepCell, SweepContext, extract_surrogate,
                              finetune_attack, overwrite_attack,
                              public_query_graph, sweep)
from edgemark.carrier import (edge_gap, edge_gap_values, extract_bits,
                              feature_cosines, standardize_logits)
from edgemark.embedding import (EmbedConfig, EmbedResult, PseudoGraphConfig,
                                TriggerSynthConfig, bit_alignment_loss,
                                embed_setting1, embed_setting2, embed_setting3,
                                prediction_flips, synth_trigger)
from edgemark.graphs import (Graph, SplitSpec, _mirror, generate_er,
                             generate_sbm, induced_split)
from edgemark.models import (GnnModel, TrainConfig, default_arch, forward,
                             forward_tensors, test_cross_entropy,
                             train_primary, wrap_params)
from edgemark.models import test_accuracy as accuracy_of
from edgemark.service import ServerThread, HttpProvider
from edgemark.verification import (InProcessProvider, collision_alpha,
                                   collision_alpha_exact, collision_threshold,
                                   hamming_similarity, population_metrics,
                                   verify)
from edgemark.watermark import (WatermarkRegistry, WatermarkString,
                                random_watermark, select_key_cross_label,
                                select_key_structural)

TAU = 0.75
N_BITS = 64
ARCH = dict(hidden=96, depth=4)
BASE_TRAIN = TrainConfig(learning_rate=1e-3, weight_decay=1e-2, epochs=1000, seed=0)
EMBED_1 = EmbedConfig(learning_rate=1e-4, gamma=5.0, seed=0)
EMBED_23 = EmbedConfig(learning_rate=5e-5, gamma=10.0, seed=0)
PSEUDO = PseudoGraphConfig(num_nodes=400, attach_m=3, seed=64)
SURROGATE_ARCH = dict(hidden=48, depth=4)
SURROGATE_LR = 5e-4
SURROGATE_EPOCHS = 1500


def _say(num, name, ok, detail=""):
    print(f"ACCEPTANCE {num:>2} {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


@dataclass
class Population:
    trigger: Graph
    key: object
    registry: WatermarkRegistry
    results: list = field(default_factory=list)   # EmbedResult per distribution
    ids: list = field(default_factory=list)


@dataclass
class World:
    train: Graph
    val: Graph
    test: Graph
    m_o: GnnModel
    independents: list
    settings: dict            # "1" | "2" | "3" -> Population
    tac_original: float


def _build_population(setting, m_o, train, trigger, key, embed_cfg, seed0):
    reg = WatermarkRegistry()
    results, ids = [], []
    for i in range(10):
        dist_id = f"wm{setting}-{i:02d}"
        wm = random_watermark(N_BITS, seed=seed0 + i)
        reg.add(dist_id, wm)
        if setting == "3":
            res = embed_setting3(m_o, trigger, key, wm, embed_cfg, PSEUDO)
        elif setting == "2":
            res = embed_setting2(m_o, train, trigger, key, wm, embed_cfg)
        else:
            res = embed_setting1(m_o, train, trigger, key, wm, embed_cfg)
        results.append(res)
        ids.append(dist_id)
        print(f"  embedded {dist_id}: epochs {res.epochs_used} pre {res.pre_hms:.3f}",
              flush=True)
    return Population(trigger, key, reg, results, ids)


@pytest.fixture(scope="session")
def world():
    print("\nbuilding acceptance world (SBM 1500 nodes, 5 classes, 32 dims) ...",
          flush=True)
    g = generate_sbm(1500, 5, 0.02, 0.002, 32, 4.5, seed=0)
    train, val, test = induced_split(g, SplitSpec(seed=0))
    arch = default_arch(32, 5, **ARCH)
    m_o = train_primary(train, arch, TrainConfig(1e-3, 1e-2, 1000, seed=1))
    print(f"  original model: test accuracy {accuracy_of(m_o, test):.3f}", flush=True)
    independents = []
    for seed in range(2, 12):
        independents.append(train_primary(train, arch, TrainConfig(1e-3, 1e-2, 1000, seed)))
    print("  trained 10 independent models", flush=True)

    key1 = select_key_cross_label(train, m_o, N_BITS)
    pop1 = _build_population("1", m_o, train, train, key1, EMBED_1, 7000)

    topo2 = generate_er(400, 0.02, 32, seed=50)
    trig2 = synth_trigger(m_o, topo2, TriggerSynthConfig(seed=51))
    key2 = select_key_structural(trig2, m_o, N_BITS, seed=52)
    pop2 = _build_population("2", m_o, train, trig2, key2, EMBED_23, 8000)

    topo3 = generate_er(400, 0.02, 32, seed=60)
    trig3 = synth_trigger(m_o, topo3, TriggerSynthConfig(seed=61))
    key3 = select_key_structural(trig3, m_o, N_BITS, seed=62)
    pop3 = _build_population("3", m_o, train, trig3, key3, EMBED_23, 9000)

    return World(train, val, test, m_o, independents,
                 {"1": pop1, "2": pop2, "3": pop3}, accuracy_of(m_o, test))


def _own_hms(model, pop) -> list:
    """HMS of each registered string against its own model's extraction."""
    out = []
    for res, dist_id in zip(pop.results, pop.ids):
        vals = edge_gap_values(model if model else res.model, pop.trigger)
        bits = extract_bits(vals, pop.key.edge_indices)
        out.append(hamming_similarity(bits, pop.registry.get(dist_id).bits))
    return out


def _extracted_hms(model, pop, dist_id) -> float:
    vals = edge_gap_values(model, pop.trigger)
    bits = extract_bits(vals, pop.key.edge_indices)
    return hamming_similarity(bits, pop.registry.get(dist_id).bits)


# ---------------------------------------------------------------------------
# 1. effectiveness


def test_criterion_01_effectiveness(world):
    lines = []
    ok = True
    for setting, pop in world.settings.items():
        decisions = []
        for res, dist_id in zip(pop.results, pop.ids):
            r = verify(InProcessProvider(res.model), pop.trigger, pop.key,
                       pop.registry, TAU)
            decisions.append((r.is_copy, True))
            ok = ok and r.is_copy and r.matched_id == dist_id
        for ind in world.independents:
            r = verify(InProcessProvider(ind), pop.trigger, pop.key,
                       pop.registry, TAU)
            decisions.append((r.is_copy, False))
        ova, fpr = population_metrics(decisions)
        lines.append(f"S{setting} OVA={ova:.3f} FPR={fpr:.3f}")
        ok = ok and ova == 1.0 and fpr == 0.0
    _say(1, "effectiveness", ok, "; ".join(lines))


# ---------------------------------------------------------------------------
# 2. embedding success


def test_criterion_02_embedding_success(world):
    pres, fails = [], []
    for setting, pop in world.settings.items():
        for res, dist_id in zip(pop.results, pop.ids):
            pres.append(res.pre_hms)
            if not (res.success and res.hms == 1.0):
                fails.append(f"{dist_id} hms={res.hms}")
            if not (0.35 <= res.pre_hms <= 0.65):
                fails.append(f"{dist_id} pre={res.pre_hms}")
    detail = (f"30/30 exact, pre-embedding HMS in "
              f"[{min(pres):.3f}, {max(pres):.3f}]")
    _say(2, "embedding success", not fails, detail if not fails else str(fails))


# ---------------------------------------------------------------------------
# 3. fidelity


def test_criterion_03_fidelity(world):
    limits = {"1": 0.05, "2": 0.02, "3": 0.02}
    lines, ok = [], True
    for setting, pop in world.settings.items():
        drops = [world.tac_original - accuracy_of(res.model, world.test)
                 for res in pop.results]
        mean_drop = float(np.mean(drops))
        lines.append(f"S{setting} mean drop {100 * mean_drop:+.2f}pp")
        ok = ok and mean_drop <= limits[setting]
    _say(3, "fidelity", ok, "; ".join(lines))


# ---------------------------------------------------------------------------
# 4. backdoor-free property


def test_criterion_04_backdoor_free(world):
    lines, ok = [], True
    c = world.m_o.out_dim
    for setting, pop in world.settings.items():
        flips, gains = [], []
        for res in pop.results:
            f, gain = prediction_flips(world.m_o, res.model, world.test)
            flips.append(f)
            gains.append(gain)
        mean_flips = float(np.mean(flips))
        mean_gain = np.mean(gains, axis=0)  # signed per-class net shift
        worst_gain = float(mean_gain.max())
        lines.append(f"S{setting} flips {100 * mean_flips:.1f}% "
                     f"max net gain {100 * worst_gain:+.2f}pp")
        ok = ok and mean_flips <= 0.05 and worst_gain <= 0.01
    _say(4, "backdoor-free", ok, "; ".join(lines))


# ---------------------------------------------------------------------------
# 5. collision calculus


def test_criterion_05_collision_calculus():
    alpha = collision_alpha(200, 0.75)
    ok = 7.3e-13 <= alpha <= 8.1e-13
    detail = [f"alpha(200,0.75)={alpha:.3e}"]

    for a in (1e-12, 1e-10, 1e-7, 1e-4, 1e-2, 0.1, 0.4):
        tau = collision_threshold(200, a)
        back = collision_alpha(200, tau)
        ok = ok and abs(back - a) / a < 1e-6

    analytic = collision_alpha(200, 0.6)
    rng = np.random.default_rng(5)
    hits = 0
    for _ in range(20):
        a = rng.integers(0, 2, size=(50_000, 200), dtype=np.uint8)
        b = rng.integers(0, 2, size=(50_000, 200), dtype=np.uint8)
        hits += int(((a == b).mean(axis=1) >= 0.6).sum())
    empirical = hits / 1_000_000
    ok = ok and analytic / 2 <= empirical <= analytic * 2
    detail.append(f"MC tail {empirical:.2e} vs analytic {analytic:.2e}")

    exact = collision_alpha_exact(200, 0.6)
    ok = ok and exact / 2 <= analytic <= exact * 2
    detail.append(f"binomial {exact:.2e}")
    _say(5, "collision calculus", ok, "; ".join(detail))


# ---------------------------------------------------------------------------
# 6. transform equivalence


def test_criterion_06_transform_equivalence():
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(6, 20))
        d = int(rng.integers(3, 8))
        c = int(rng.integers(2, 7))
        pairs = set()
        while len(pairs) < n:
            u, v = rng.integers(0, n, size=2)
            if u != v:
                pairs.add((min(u, v), max(u, v)))
        g = Graph(rng.standard_normal((n, d)),
                  _mirror(np.array(sorted(pairs))), None, f"eq{i}")
        kind = "mean-aggregate" if i % 2 == 0 else "normalized-conv"
        model = GnnModel.init(default_arch(d, c, hidden=6, depth=3, kind=kind),
                              seed=i)
        logits, probs = forward(model, g)
        via_probs = edge_gap(probs, g).data.ravel()
        t = standardize_logits(logits)
        edges = g.canonical_edges()
        def cos(rows, e):
            a, b = rows[e[:, 0]], rows[e[:, 1]]
            num = (a * b).sum(axis=1)
            return num / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        via_logits = cos(t, edges) - cos(g.x, edges)
        worst = max(worst, float(np.max(np.abs(via_probs - via_logits))))
    _say(6, "transform equivalence", worst <= 1e-9, f"max |diff| {worst:.2e}")


# ---------------------------------------------------------------------------
# 7. gradient integrity


def _tiny_labeled(seed=7):
    rng = np.random.default_rng(seed)
    pairs = np.array([[0, 1], [1, 2], [2, 3], [3, 4], [4, 5], [0, 5],
                      [1, 4], [6, 7], [5, 6]], dtype=np.int64)
    return Graph(rng.standard_normal((8, 3)), _mirror(pairs),
                 np.array([0, 1, 2, 0, 1, 2, 0, 1]), "tiny")


def test_criterion_07_gradient_integrity():
    g = _tiny_labeled()
    arch = default_arch(3, 3, hidden=4, depth=2)
    model = GnnModel.init(arch, seed=70)
    from edgemark.watermark import WatermarkKey
    key = WatermarkKey(np.array([0, 2, 5]))
    wm = WatermarkString(np.array([1, 0, 1]))
    errs = {}

    def build_ce(params):
        logits, _ = forward_tensors(model, g, params[0].tape, params)
        return ad.cross_entropy_logits(logits, g.y)

    errs["primary-ce"] = grad_check(build_ce, model.param_arrays())

    def build_bce(params):
        _, probs = forward_tensors(model, g, params[0].tape, params)
        return bit_alignment_loss(edge_gap(probs, g), key, wm, 10.0)

    errs["watermark-bce"] = grad_check(build_bce, model.param_arrays())

    def build_synth(params):
        ft = params[0]
        _, probs = forward_tensors(model, g, ft.tape, features=ft)
        gap = edge_gap(probs, g, features=ft)
        fcos = feature_cosines(ft, g)
        sat = ad.clamp_max(ad.absolute(fcos), 1.0 - 1e-6)
        pen = ad.mean_all(ad.div(ad.constant(np.float64(1.0)),
                                 ad.sub(ad.constant(np.float64(1.0)), sat)))
        return ad.add(ad.mean_all(ad.absolute(gap)), ad.scale(pen, 1e-4))

    errs["trigger-synthesis"] = grad_check(build_synth, [g.x.copy()])

    teacher_logits, _ = forward(model, g)
    hard = np.argmax(teacher_logits, axis=1)
    student = GnnModel.init(arch, seed=71)

    def build_datafree(params):
        logits, probs = forward_tensors(student, g, params[0].tape, params)
        ce = ad.cross_entropy_logits(logits, hard)
        bce = bit_alignment_loss(edge_gap(probs, g), key, wm, 10.0)
        return ad.add(ce, bce)

    errs["data-free-combined"] = grad_check(build_datafree, student.param_arrays())

    worst = max(errs.values())
    _say(7, "gradient integrity", worst <= 1e-4,
         " ".join(f"{k}={v:.2e}" for k, v in errs.items()))


# ---------------------------------------------------------------------------
# 8. pruning robustness


def test_criterion_08_pruning(world):
    pop = world.settings["1"]
    ratios = (0.5, 0.6, 0.7, 0.8, 0.9)
    ctx = SweepContext(pop.trigger, pop.key, pop.registry, world.test,
                       world.val, TAU)
    cells = []
    for res, dist_id in zip(pop.results, pop.ids):
        bits = pop.registry.get(dist_id).bits
        for r in ratios:
            cells.append(SweepCell(dist_id, "1", res.model, bits, "prune", r))
    for j, ind in enumerate(world.independents):
        for r in ratios:
            cells.append(SweepCell(f"ind-{j:02d}", "independent", ind, None,
                                   "prune", r))
    rows = sweep(ctx, cells)
    wm_rows = [r for r in rows if r["setting"] == "1"]
    ind_rows = [r for r in rows if r["setting"] == "independent"]

    at_half = [r["hms_after"] for r in wm_rows if r["param"] == 0.5]
    survived = sum(1 for h in at_half if h >= TAU)
    fpr_zero = all(r["verified"] is False for r in ind_rows)
    mean_hms = [float(np.mean([r["hms_after"] for r in wm_rows if r["param"] == p]))
                for p in ratios]
    mean_tac = [float(np.mean([r["tac_after"] for r in wm_rows if r["param"] == p]))
                for p in ratios]
    monotone = all(b <= a + 0.02 for a, b in zip(mean_hms, mean_hms[1:]))
    monotone = monotone and all(b <= a + 0.02 for a, b in zip(mean_tac, mean_tac[1:]))
    ok = survived >= 9 and fpr_zero and monotone
    _say(8, "pruning robustness", ok,
         f"hms@0.5 >= {TAU} in {survived}/10; FPR 0 at all ratios: {fpr_zero}; "
         f"mean HMS {['%.2f' % h for h in mean_hms]}")


# ---------------------------------------------------------------------------
# 9. fine-tuning robustness


def test_criterion_09_finetuning(world):
    pop = world.settings["1"]
    survived = 0
    for res, dist_id in zip(pop.results, pop.ids):
        tuned = finetune_attack(res.model, world.val, epochs=200, lr=5e-5)
        if _extracted_hms(tuned, pop, dist_id) >= TAU:
            survived += 1
    false_positives = 0
    for ind in world.independents:
        tuned = finetune_attack(ind, world.val, epochs=200, lr=5e-5)
        r = verify(InProcessProvider(tuned), pop.trigger, pop.key,
                   pop.registry, TAU)
        false_positives += int(r.is_copy)
    ok = survived >= 9 and false_positives == 0
    _say(9, "fine-tuning robustness", ok,
         f"hms >= {TAU} in {survived}/10; fine-tuned independent FPs: "
         f"{false_positives}/10")


# ---------------------------------------------------------------------------
# 10. overwriting


def test_criterion_10_overwriting(world):
    topo_adv = generate_er(300, 0.025, 32, seed=80)
    lines, ok = [], True
    for setting, pop in world.settings.items():
        res, dist_id = pop.results[0], pop.ids[0]
        owner_bits = pop.registry.get(dist_id).bits
        attacked, report, adv = overwrite_attack(
            res.model, topo_adv, N_BITS, seed=81, owner_trigger=pop.trigger,
            owner_key=pop.key, owner_bits=owner_bits, g_test=world.test)
        r = verify(InProcessProvider(attacked), pop.trigger, pop.key,
                   pop.registry, TAU)
        lines.append(f"S{setting} owner {report.hms_before:.3f}->"
                     f"{report.hms_after:.3f} adv {adv.hms:.2f}")
        ok = (ok and report.hms_after >= 0.8 and r.is_copy
              and r.matched_id == dist_id and adv.success and adv.hms == 1.0)
    _say(10, "overwriting", ok, "; ".join(lines))


# ---------------------------------------------------------------------------
# 11. model extraction


def test_criterion_11_extraction(world):
    pub = public_query_graph(world.train, 0.8, seed=71)
    surr_arch = default_arch(32, 5, **SURROGATE_ARCH)

    pop1 = world.settings["1"]
    inherited = 0
    hms_list = []
    for i, (res, dist_id) in enumerate(zip(pop1.results, pop1.ids)):
        surr = extract_surrogate(InProcessProvider(res.model), pub, surr_arch,
                                 SURROGATE_EPOCHS, SURROGATE_LR, seed=7500 + i)
        hms = _extracted_hms(surr, pop1, dist_id)
        hms_list.append(hms)
        r = verify(InProcessProvider(surr), pop1.trigger, pop1.key,
                   pop1.registry, TAU)
        if r.is_copy and hms >= 0.70:
            inherited += 1

    pop2 = world.settings["2"]
    chance = []
    for i, (res, dist_id) in enumerate(zip(pop2.results, pop2.ids)):
        surr = extract_surrogate(InProcessProvider(res.model), pub, surr_arch,
                                 SURROGATE_EPOCHS, SURROGATE_LR, seed=8500 + i)
        chance.append(_extracted_hms(surr, pop2, dist_id))

    near_chance = all(0.35 <= h <= 0.65 for h in chance)
    ok = inherited >= 8 and near_chance
    _say(11, "model extraction", ok,
         f"setting-1 inherited {inherited}/10 (hms "
         f"{min(hms_list):.2f}..{max(hms_list):.2f}); setting-2 hms "
         f"{min(chance):.2f}..{max(chance):.2f}")


# ---------------------------------------------------------------------------
# 12. single query and wire equivalence


def test_criterion_12_single_query_wire(world):
    pop = world.settings["1"]
    big = WatermarkRegistry()
    target = pop.registry.get(pop.ids[0])
    big.add(pop.ids[0], WatermarkString(target.bits))
    for i in range(99):
        big.add(f"filler-{i:02d}", random_watermark(N_BITS, seed=5000 + i))
    model = pop.results[0].model
    provider = InProcessProvider(model)
    local = verify(provider, pop.trigger, pop.key, big, TAU)
    single = provider.queries == 1
    with ServerThread(model, model_name="suspect") as srv:
        http = HttpProvider(srv.url)
        remote = verify(http, pop.trigger, pop.key, big, TAU)
        one_post = http.queries == 1
    identical = (local.is_copy == remote.is_copy
                 and local.matched_id == remote.matched_id
                 and local.matched_hms == remote.matched_hms
                 and np.array_equal(local.extracted_bits, remote.extracted_bits)
                 and local.hms_table == remote.hms_table)
    ok = single and one_post and identical and local.is_copy
    _say(12, "single-query + wire equivalence", ok,
         f"queries local {provider.queries} remote {http.queries}; "
         f"bit-identical {identical}")


# ---------------------------------------------------------------------------
# 13. watermark-length trade-off


def test_criterion_13_length_tradeoff(world):
    ces = []
    for nw in (20, 64, 128):
        key = select_key_cross_label(world.train, world.m_o, nw)
        wm = random_watermark(nw, seed=1100 + nw)
        res = embed_setting1(world.m_o, world.train, world.train, key, wm, EMBED_1)
        assert res.success
        ces.append(test_cross_entropy(res.model, world.test))
    monotone = all(b >= a * 0.95 for a, b in zip(ces, ces[1:]))
    _say(13, "watermark-length trade-off", monotone,
         f"test CE {['%.3f' % c for c in ces]} for N_w (20, 64, 128)")
