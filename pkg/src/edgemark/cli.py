"""Command-line operator surface.

Every subcommand fronts one library operation and writes deterministic
artifacts. Exit codes: 0 success, 1 verification-negative (and refusals),
2 usage error, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

import numpy as np

from .attacks import (SweepCell, SweepContext, extract_surrogate,
                      finetune_attack, overwrite_attack, prune_l1,
                      public_query_graph, sweep)
from .config import RunConfig, load_run_config
from .embedding import (EmbedConfig, PseudoGraphConfig, TriggerSynthConfig,
                        embed_setting1, embed_setting2, embed_setting3,
                        synth_trigger)
from .errors import ConfigError, EdgemarkError, UsageError
from .graphs import (SplitSpec, convert_csv, generate_ba, generate_er,
                     generate_sbm, induced_split, load_graph, save_graph)
from .models import (TrainConfig, default_arch, load_model, save_model,
                     test_accuracy, train_primary)
from .service import HttpProvider, serve
from .verification import (InProcessProvider, collision_alpha,
                           collision_alpha_exact, collision_threshold,
                           CORRELATION_CAVEAT, verification_report, verify)
from .watermark import (load_key, load_registry, random_watermark, save_key,
                        save_registry, select_key_cross_label,
                        select_key_structural, WatermarkRegistry)


def _load_cfg(args) -> RunConfig:
    return load_run_config(args.config) if args.config else RunConfig()


def _pick(flag, fallback):
    return fallback if flag is None else flag


# ---------------------------------------------------------------------------
# handlers


def cmd_gen_data(args):
    cfg = _load_cfg(args).data
    if args.from_nodes_csv or args.from_edges_csv:
        if not (args.from_nodes_csv and args.from_edges_csv):
            raise UsageError("--from-nodes-csv and --from-edges-csv go together")
        g = convert_csv(args.from_nodes_csv, args.from_edges_csv,
                        name=args.name or "imported")
    else:
        kind = _pick(args.kind, cfg.kind)
        seed = _pick(args.seed, cfg.seed)
        n = _pick(args.nodes, cfg.num_nodes)
        d = _pick(args.feature_dim, cfg.feature_dim)
        if kind == "sbm":
            g = generate_sbm(n, _pick(args.classes, cfg.num_classes),
                             _pick(args.intra_p, cfg.intra_p),
                             _pick(args.inter_p, cfg.inter_p), d,
                             _pick(args.feature_shift, cfg.feature_shift), seed)
        elif kind == "er":
            g = generate_er(n, _pick(args.edge_p, cfg.edge_p), d, seed)
        elif kind == "ba":
            g = generate_ba(n, _pick(args.attach_m, cfg.attach_m), d, seed)
        else:
            raise UsageError(f"--kind must be sbm, er or ba, got {kind!r}")
    save_graph(g, args.out)
    print(f"wrote {args.out}: {g.num_nodes} nodes, {g.num_edges()} edges")
    if args.split:
        spec = _load_cfg(args).split
        if args.split_seed is not None:
            spec = replace(spec, seed=args.split_seed)
        parts = induced_split(g, spec)
        stem = args.out.rsplit(".json", 1)[0]
        for part, suffix in zip(parts, ("train", "val", "test")):
            save_graph(part, f"{stem}.{suffix}.json")
            print(f"wrote {stem}.{suffix}.json: {part.num_nodes} nodes")
    return 0


def cmd_train(args):
    cfg = _load_cfg(args)
    g = load_graph(args.graph)
    arch = default_arch(g.feature_dim, g.num_classes,
                        _pick(args.hidden, cfg.model.hidden),
                        _pick(args.depth, cfg.model.depth),
                        _pick(args.layer_kind, cfg.model.kind))
    tc = TrainConfig(_pick(args.lr, cfg.train.learning_rate),
                     _pick(args.weight_decay, cfg.train.weight_decay),
                     _pick(args.epochs, cfg.train.epochs),
                     _pick(args.seed, cfg.train.seed))
    model = train_primary(g, arch, tc)
    save_model(model, args.out)
    print(f"wrote {args.out}: train accuracy {test_accuracy(model, g):.4f}")
    return 0


def cmd_make_key(args):
    cfg = _load_cfg(args)
    model = load_model(args.model)
    trigger = load_graph(args.trigger)
    n_bits = _pick(args.n_bits, cfg.n_bits)
    if args.setting == 1:
        key = select_key_cross_label(trigger, model, n_bits)
    else:
        key = select_key_structural(trigger, model, n_bits,
                                    args.rarity_fraction, args.seed)
    save_key(key, args.out)
    print(f"wrote {args.out}: {key.n_bits} edges of {trigger.name}")
    return 0


def cmd_gen_wm(args):
    cfg = _load_cfg(args)
    n_bits = _pick(args.n_bits, cfg.n_bits)
    wm = random_watermark(n_bits, args.seed, args.meta)
    try:
        reg = load_registry(args.registry)
    except FileNotFoundError:
        reg = WatermarkRegistry()
    reg.add(args.id, wm)
    save_registry(reg, args.registry)
    print(f"registered {args.id}: {n_bits} bits (registry now {len(reg)} entries)")
    return 0


def cmd_synth_trigger(args):
    cfg = _load_cfg(args)
    model = load_model(args.model)
    topology = load_graph(args.topology)
    sc = TriggerSynthConfig(_pick(args.lam, cfg.synth.lam),
                            _pick(args.lr, cfg.synth.feature_lr),
                            _pick(args.epochs, cfg.synth.epochs),
                            _pick(args.seed, cfg.synth.seed))
    trigger = synth_trigger(model, topology, sc)
    save_graph(trigger, args.out)
    print(f"wrote {args.out}: {trigger.num_nodes} nodes, {trigger.num_edges()} edges")
    return 0


def cmd_embed(args):
    cfg = _load_cfg(args)
    model = load_model(args.model)
    key = load_key(args.key)
    reg = load_registry(args.registry)
    entry = reg.get(args.id)
    from .watermark import WatermarkString
    wm = WatermarkString(entry.bits, entry.meta)
    ec = EmbedConfig(_pick(args.lr, cfg.embed.learning_rate),
                     _pick(args.weight_decay, cfg.embed.weight_decay),
                     _pick(args.max_epochs, cfg.embed.max_epochs),
                     _pick(args.gamma, cfg.embed.gamma),
                     seed=args.seed if args.seed is not None else cfg.embed.seed)
    if args.setting in (1, 2):
        if not args.train_graph:
            raise UsageError(f"--setting {args.setting} needs --train-graph")
        g_train = load_graph(args.train_graph)
        trigger = load_graph(args.trigger) if args.trigger else g_train
        fn = embed_setting1 if args.setting == 1 else embed_setting2
        result = fn(model, g_train, trigger, key, wm, ec)
    else:
        if not args.trigger:
            raise UsageError("--setting 3 needs --trigger")
        trigger = load_graph(args.trigger)
        pc = PseudoGraphConfig(_pick(args.pseudo_nodes, cfg.pseudo.num_nodes),
                               _pick(args.pseudo_m, cfg.pseudo.attach_m),
                               _pick(args.pseudo_seed, cfg.pseudo.seed))
        result = embed_setting3(model, trigger, key, wm, ec, pc)
    save_model(result.model, args.out)
    tac_line = ""
    if args.test_graph:
        g_test = load_graph(args.test_graph)
        tac_line = (f", tac {test_accuracy(model, g_test):.4f}"
                    f" -> {test_accuracy(result.model, g_test):.4f}")
    print(f"embedded {args.id}: epochs {result.epochs_used}, "
          f"hms {result.pre_hms:.3f} -> {result.hms:.3f}{tac_line}")
    if args.report:
        with open(args.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "ce", "bce"])
            for i, (ce, bce) in enumerate(zip(result.ce_curve, result.bce_curve)):
                w.writerow([i, ce, bce])
        print(f"wrote {args.report}")
    if not result.success:
        print(f"embedding failed: best hms {result.hms:.3f} "
              f"after {result.epochs_used} epochs", file=sys.stderr)
        return 3
    return 0


def _provider_from_args(args):
    if args.provider == "url":
        if not args.url:
            raise UsageError("--provider url needs --url")
        return HttpProvider(args.url)
    if not args.model:
        raise UsageError("--provider file needs --model")
    return InProcessProvider(load_model(args.model), str(args.model))


def cmd_verify(args):
    cfg = _load_cfg(args)
    provider = _provider_from_args(args)
    trigger = load_graph(args.trigger)
    key = load_key(args.key)
    reg = load_registry(args.registry)
    tau = _pick(args.tau, cfg.tau)
    result = verify(provider, trigger, key, reg, tau)
    print(verification_report(result, reg, key.n_bits))
    return 0 if result.is_copy else 1


def cmd_collision(args):
    if args.registry:
        reg = load_registry(args.registry)
        if not reg.all_bernoulli():
            print(f"refused: {CORRELATION_CAVEAT}", file=sys.stderr)
            return 1
    if args.tau is not None:
        print(f"alpha (normal approximation): {collision_alpha(args.nw, args.tau):.6e}")
        print(f"alpha (exact binomial tail):  {collision_alpha_exact(args.nw, args.tau):.6e}")
    elif args.alpha is not None:
        print(f"tau_min: {collision_threshold(args.nw, args.alpha):.6f}")
    else:
        raise UsageError("collision needs --tau or --alpha")
    return 0


def cmd_attack(args):
    cfg = _load_cfg(args)
    if args.kind == "prune":
        model = load_model(args.model)
        attacked = prune_l1(model, args.ratio)
    elif args.kind == "finetune":
        model = load_model(args.model)
        g_val = load_graph(args.val_graph)
        attacked = finetune_attack(model, g_val, args.epochs, args.lr)
    elif args.kind == "overwrite":
        model = load_model(args.model)
        topology = load_graph(args.topology)
        trigger = load_graph(args.trigger)
        key = load_key(args.key)
        reg = load_registry(args.registry)
        owner_bits = reg.get(args.id).bits
        g_test = load_graph(args.test_graph) if args.test_graph else None
        n_bits = _pick(args.n_bits, cfg.n_bits)
        attacked, report, adv = overwrite_attack(
            model, topology, n_bits, args.seed, trigger, key, owner_bits, g_test)
        print(f"owner hms {report.hms_before:.3f} -> {report.hms_after:.3f}; "
              f"adversary hms {adv.hms:.3f}")
    elif args.kind == "extract":
        provider = _provider_from_args(args)
        g_train = load_graph(args.train_graph)
        g_public = public_query_graph(g_train, args.fraction, args.seed)
        arch = default_arch(g_public.feature_dim, args.classes,
                            cfg.model.hidden, cfg.model.depth, cfg.model.kind)
        attacked = extract_surrogate(provider, g_public, arch,
                                     args.epochs, args.lr, args.seed)
    else:
        raise UsageError(f"unknown attack kind {args.kind!r}")
    save_model(attacked, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args):
    cfg = _load_cfg(args)
    trigger = load_graph(args.trigger)
    key = load_key(args.key)
    reg = load_registry(args.registry)
    ctx = SweepContext(trigger, key, reg, load_graph(args.test_graph),
                       load_graph(args.val_graph) if args.val_graph else None,
                       _pick(args.tau, cfg.tau))
    settings = args.settings.split(",") if args.settings else []
    ids = args.ids.split(",") if args.ids else []
    cells = []
    params = [float(p) for p in args.params.split(",")] if args.params else [0.0]
    for i, path in enumerate(args.models):
        setting = settings[i] if i < len(settings) else "independent"
        dist_id = ids[i] if i < len(ids) and ids[i] else None
        bits = reg.get(dist_id).bits if dist_id else None
        model = load_model(path)
        for p in params:
            cells.append(SweepCell(str(path), setting, model, bits, args.attack, p))
    rows = sweep(ctx, cells, args.out)
    print(f"wrote {args.out}: {len(rows)} rows")
    return 0


def cmd_report(args):
    with open(args.sweep) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"{args.sweep} has no rows")
    cols = list(rows[0].keys())
    lines = ["| " + " | ".join(cols) + " |",
             "|" + "|".join(" --- " for _ in cols) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(str(row[c]) for c in cols) + " |")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_serve(args):
    serve(args.model, args.bind)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edgemark",
                                 description="edge-sign watermarking for GNNs")
    ap.add_argument("--config", help="run-config JSON; flags override it")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate or import a graph")
    p.add_argument("--kind", choices=["sbm", "er", "ba"])
    p.add_argument("--nodes", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--intra-p", type=float)
    p.add_argument("--inter-p", type=float)
    p.add_argument("--edge-p", type=float)
    p.add_argument("--attach-m", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--feature-shift", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--name")
    p.add_argument("--from-nodes-csv")
    p.add_argument("--from-edges-csv")
    p.add_argument("--split", action="store_true", help="also write 70/20/10 splits")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a labeled graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--hidden", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--layer-kind", choices=["mean-aggregate", "normalized-conv"])
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("make-key", help="select carrier edges in a trigger graph")
    p.add_argument("--setting", type=int, choices=[1, 2], default=1)
    p.add_argument("--model", required=True)
    p.add_argument("--trigger", required=True)
    p.add_argument("--n-bits", type=int)
    p.add_argument("--rarity-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_key)

    p = sub.add_parser("gen-wm", help="generate a payload and register it")
    p.add_argument("--n-bits", type=int)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--meta")
    p.add_argument("--registry", required=True)
    p.set_defaults(fn=cmd_gen_wm)

    p = sub.add_parser("synth-trigger", help="optimize trigger features on a topology")
    p.add_argument("--model", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--lam", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth_trigger)

    p = sub.add_parser("embed", help="embed a registered payload into a model")
    p.add_argument("--setting", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--train-graph")
    p.add_argument("--trigger")
    p.add_argument("--key", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--pseudo-nodes", type=int)
    p.add_argument("--pseudo-m", type=int)
    p.add_argument("--pseudo-seed", type=int)
    p.add_argument("--test-graph")
    p.add_argument("--report")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("verify", help="single-query ownership verification")
    p.add_argument("--provider", choices=["file", "url"], required=True)
    p.add_argument("--model")
    p.add_argument("--url")
    p.add_argument("--trigger", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--tau", type=float)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("collision", help="chance-match probability math")
    p.add_argument("--nw", type=int, required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--registry", help="refuse if payloads are not coin-flip bits")
    p.set_defaults(fn=cmd_collision)

    p = sub.add_parser("attack", help="post-process a model adversarially")
    p.add_argument("--kind", choices=["prune", "finetune", "overwrite", "extract"],
                   required=True)
    p.add_argument("--model")
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--val-graph")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--topology")
    p.add_argument("--trigger")
    p.add_argument("--key")
    p.add_argument("--registry")
    p.add_argument("--id")
    p.add_argument("--n-bits", type=int)
    p.add_argument("--test-graph")
    p.add_argument("--provider", choices=["file", "url"], default="file")
    p.add_argument("--url")
    p.add_argument("--train-graph")
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("sweep", help="attack grid over a model population")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--settings", help="comma list aligned with --models")
    p.add_argument("--ids", help="comma list of registry ids ('' for independents)")
    p.add_argument("--attack", choices=["none", "prune", "finetune"], required=True)
    p.add_argument("--params", help="comma list of attack parameters")
    p.add_argument("--trigger", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--test-graph", required=True)
    p.add_argument("--val-graph")
    p.add_argument("--tau", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="render a sweep CSV as a markdown table")
    p.add_argument("--sweep", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("serve", help="expose a checkpoint as a prediction API")
    p.add_argument("--model", required=True)
    p.add_argument("--bind", help="host:port (default env EDGEMARK_BIND)")
    p.set_defaults(fn=cmd_serve)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except EdgemarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
