"""Command-line interface.

Subcommands: closure, split, train, eval-hypernym, eval-hyperlex, inspect,
sweep.  Options may come from flags or from a flat ``key = value`` config
file (flags win).  Exit codes: 0 success, 1 usage, 2 data, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import itertools
import sys

import numpy as np

from . import dataio, evaluation, verify
from .densities import DivergenceKind
from .errors import (
    CheckpointError,
    CycleError,
    DataError,
    OracleError,
    ParseError,
    SamplingError,
    TrainingError,
)
from .hierarchy import NegSpec, build_graph, sample_s1, transitive_closure
from .training import LOSS_ENCAPSULATION, LOSS_RANK, TrainConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


_CONFIG_CASTS = {
    "margin": float,
    "init_var": float,
    "gamma": float,
    "dim": int,
    "divergence": DivergenceKind.parse,
    "neg": NegSpec.parse,
    "batch_size": int,
    "epochs": int,
    "learning_rate": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "seed": int,
    "loss": str,
    "renormalize_means": lambda s: s.strip().lower() in ("1", "true", "yes"),
}

_PATH_KEYS = ("edges", "val", "test", "graded", "synsets", "out", "metrics")


def _merged_settings(args) -> dict[str, object]:
    settings: dict[str, object] = {}
    if getattr(args, "config", None):
        for key, value in dataio.load_config(args.config).items():
            if key in _CONFIG_CASTS:
                settings[key] = _CONFIG_CASTS[key](value)
            elif key in _PATH_KEYS:
                settings[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
    for key in _CONFIG_CASTS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = _CONFIG_CASTS[key](flag) if isinstance(flag, str) else flag
    for key in _PATH_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _train_config(settings: dict[str, object]) -> TrainConfig:
    kwargs = {}
    rename = {"divergence": "kind"}
    for key, value in settings.items():
        if key in _PATH_KEYS:
            continue
        kwargs[rename.get(key, key)] = value
    cfg = TrainConfig(**kwargs)
    cfg.validate()
    return cfg


def _add_train_flags(p: _Parser):
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--margin", type=float)
    p.add_argument("--init-var", dest="init_var", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--divergence", help="kl | reversekl | elk | renyi:<alpha>")
    p.add_argument("--neg", help="negative sampling, e.g. s1:1,s2:1,s4:1")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--adam-beta1", dest="adam_beta1", type=float)
    p.add_argument("--adam-beta2", dest="adam_beta2", type=float)
    p.add_argument("--adam-eps", dest="adam_eps", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss", choices=[LOSS_ENCAPSULATION, LOSS_RANK])
    p.add_argument("--renormalize-means", dest="renormalize_means", action="store_const", const=True)


def _load_graph(path):
    return transitive_closure(build_graph(dataio.load_edges(path)))


def _labeled_set(path, name_to_row, what):
    pairs = dataio.resolve_pairs_to_ids(dataio.load_labeled_pairs(path), name_to_row, what)
    return evaluation.LabeledPairSet.from_pairs(pairs)


def cmd_closure(args) -> int:
    graph = _load_graph(args.edges)
    rows = (
        (graph.names[int(u)], graph.names[int(v)]) for u, v in graph.closure_pairs()
    )
    dataio.write_tsv(args.out, rows)
    print(f"nodes\t{graph.n}", file=sys.stderr)
    print(f"pairs\t{graph.closure_size}", file=sys.stderr)
    return 0


def cmd_split(args) -> int:
    import os

    pairs = dataio.load_edges(args.pairs)
    graph = _load_graph(args.pairs)
    rng = np.random.default_rng(args.seed)
    want = args.val_size + args.test_size
    if want > len(pairs):
        raise DataError(
            f"cannot hold out {want} pairs from {len(pairs)} available"
        )
    order = rng.permutation(len(pairs))
    val_idx = set(order[: args.val_size].tolist())
    test_idx = set(order[args.val_size : want].tolist())

    def negatives(selected):
        out = []
        for i in selected:
            child, parent = pairs[i]
            u, v = sample_s1(graph, (graph.node_id(child), graph.node_id(parent)), rng)
            out.append((graph.names[u], graph.names[v]))
        return out

    os.makedirs(args.out_dir, exist_ok=True)

    def labeled_rows(selected):
        rows = [(pairs[i][0], pairs[i][1], 1) for i in selected]
        rows += [(u, v, 0) for u, v in negatives(selected)]
        return rows

    train_rows = [pairs[i] for i in range(len(pairs)) if i not in val_idx and i not in test_idx]
    dataio.write_tsv(os.path.join(args.out_dir, "train_pairs.tsv"), train_rows)
    dataio.write_tsv(
        os.path.join(args.out_dir, "val_pairs.tsv"),
        labeled_rows(sorted(val_idx)),
    )
    dataio.write_tsv(
        os.path.join(args.out_dir, "test_pairs.tsv"),
        labeled_rows(sorted(test_idx)),
    )
    print(
        f"train\t{len(train_rows)}\nval\t{2 * args.val_size}\ntest\t{2 * args.test_size}",
        file=sys.stderr,
    )
    return 0


def cmd_train(args) -> int:
    settings = _merged_settings(args)
    cfg = _train_config(settings)
    edges_path = settings.get("edges")
    if not edges_path:
        raise ValueError("train requires --edges (or an 'edges' config entry)")
    graph = _load_graph(edges_path)

    val_set = None
    if settings.get("val"):
        name_to_row = {name: i for i, name in enumerate(graph.names)}
        val_set = _labeled_set(settings["val"], name_to_row, "validation pairs")

    records = []
    table = train(graph, cfg, callbacks=[records.append], val=val_set)

    out = settings.get("out", "model.ckpt")
    dataio.save_checkpoint(table, graph.names, cfg.kind, cfg.gamma, cfg.seed, out)
    if settings.get("metrics"):
        dataio.write_tsv(
            settings["metrics"],
            (
                (r.epoch, repr(r.loss), "" if r.val_accuracy is None else repr(r.val_accuracy))
                for r in records
            ),
            header=["epoch", "train_loss", "val_accuracy"],
        )
    last = records[-1] if records else None
    print(
        f"trained nodes={graph.n} pairs={graph.closure_size} epochs={cfg.epochs} "
        f"final_loss={last.loss if last else float('nan'):.6g} checkpoint={out}"
    )
    return 0


def _eval_config(ckpt, args) -> TrainConfig:
    kind = DivergenceKind.parse(args.divergence) if args.divergence else ckpt.kind
    return TrainConfig(kind=kind, gamma=ckpt.gamma)


def cmd_eval_hypernym(args) -> int:
    ckpt = dataio.load_checkpoint(args.checkpoint)
    cfg = _eval_config(ckpt, args)
    name_to_row = ckpt.name_to_row()
    val = _labeled_set(args.val, name_to_row, "validation pairs")
    test = _labeled_set(args.test, name_to_row, "test pairs")
    threshold = evaluation.tune_threshold(val, ckpt.table, cfg)
    accuracy = evaluation.binary_accuracy(test, threshold, ckpt.table, cfg)
    if args.scores_out:
        scores = evaluation._pair_divergences(test, ckpt.table, cfg.kind)
        rows = (
            (
                ckpt.names[int(u)],
                ckpt.names[int(v)],
                int(label),
                repr(float(s)),
                int(s < threshold),
            )
            for u, v, label, s in zip(test.u, test.v, test.labels, scores)
        )
        dataio.write_tsv(args.scores_out, rows, header=["u", "v", "label", "divergence", "predicted"])
    print(f"threshold={threshold!r} accuracy={accuracy:.4f} pairs={len(test)}")
    return 0


def _graded_pairs(graded_rows, synset_map, name_to_row):
    pairs = []
    for w1, w2, gold in graded_rows:
        su = tuple(
            name_to_row[s] for s in synset_map.get(w1, []) if s in name_to_row
        )
        sv = tuple(
            name_to_row[s] for s in synset_map.get(w2, []) if s in name_to_row
        )
        pairs.append(evaluation.GradedPair(w1, w2, gold, su, sv))
    return pairs


def cmd_eval_hyperlex(args) -> int:
    ckpt = dataio.load_checkpoint(args.checkpoint)
    cfg = _eval_config(ckpt, args)
    graded_rows = dataio.load_graded(args.graded)
    synset_map = dataio.load_synset_map(args.synsets)
    pairs = _graded_pairs(graded_rows, synset_map, ckpt.name_to_row())
    raw = [(p, evaluation.graded_score(p, ckpt.table, cfg)) for p in pairs]
    missing = sum(1 for _, s in raw if s is None)
    scored = evaluation.impute_missing(raw)
    rho = evaluation.spearman([s for _, s in scored], [p.gold for p, _ in scored])
    if args.scores_out:
        rows = (
            (p.word_u, p.word_v, repr(p.gold), repr(float(s)))
            for p, s in scored
        )
        dataio.write_tsv(args.scores_out, rows, header=["word_u", "word_v", "gold", "score"])
    print(f"spearman_rho={rho:.4f} pairs={len(scored)} missing={missing}")
    return 0


def cmd_inspect(args) -> int:
    status = 0
    if args.verify:
        results = verify.run_battery(args.seed if args.seed is not None else 0)
        width = max(len(r.name) for r in results)
        for r in results:
            mark = "PASS" if r.passed else "FAIL"
            line = f"{mark}  {r.name.ljust(width)}"
            if r.detail:
                line += f"  [{r.detail}]"
            print(line)
        if not all(r.passed for r in results):
            status = 3

    if args.checkpoint and args.nodes:
        ckpt = dataio.load_checkpoint(args.checkpoint)
        cfg = _eval_config(ckpt, args)
        name_to_row = ckpt.name_to_row()
        names = [n.strip() for n in args.nodes.split(",") if n.strip()]
        for name in names:
            if name not in name_to_row:
                raise DataError(f"unknown node {name!r} in checkpoint")
        ids = [name_to_row[n] for n in names]
        matrix = evaluation.divergence_matrix(ids, ckpt.table, cfg.kind)
        rows = [[""] + names] + [
            [names[i]] + [f"{matrix[i, j]:.4f}" for j in range(len(names))]
            for i in range(len(names))
        ]
        dataio.write_tsv(args.matrix_out, rows)
        from .hierarchy import NodeId

        report = evaluation.volume_report(
            [NodeId(i, n) for i, n in zip(ids, names)], ckpt.table
        )
        dataio.write_tsv(args.volumes_out, report, header=["name", "log_det_volume"])
    elif not args.verify:
        raise ValueError("inspect needs --checkpoint and --nodes, or --verify")
    return status


def cmd_sweep(args) -> int:
    settings = _merged_settings(args)
    base = _train_config(settings)
    edges_path = settings.get("edges")
    if not edges_path:
        raise ValueError("sweep requires --edges (or an 'edges' config entry)")
    graph = _load_graph(edges_path)
    name_to_row = {name: i for i, name in enumerate(graph.names)}

    val_set = _labeled_set(settings["val"], name_to_row, "validation pairs") if settings.get("val") else None
    test_set = _labeled_set(settings["test"], name_to_row, "test pairs") if settings.get("test") else None
    graded_rows = dataio.load_graded(settings["graded"]) if settings.get("graded") else None
    synset_map = dataio.load_synset_map(settings["synsets"]) if settings.get("synsets") else None

    def grid(text, cast):
        if text is None:
            return [None]
        values = [cast(t) for t in text.split(",") if t.strip()]
        if not values:
            raise ValueError(f"empty grid {text!r}")
        return values

    neg_specs = (
        [NegSpec.parse(t) for t in args.neg_specs.split(";") if t.strip()]
        if args.neg_specs
        else [None]
    )
    if not neg_specs:
        raise ValueError("empty --neg-specs grid")
    losses = (
        [t.strip() for t in args.losses.split(",") if t.strip()] if args.losses else [None]
    )

    cells = list(
        itertools.product(
            grid(args.margins, float),
            grid(args.init_vars, float),
            grid(args.gammas, float),
            grid(args.dims, int),
            grid(args.alphas, float),
            neg_specs,
            losses,
        )
    )
    header = [
        "margin", "init_var", "gamma", "dim", "divergence", "neg", "loss",
        "status", "val_accuracy", "test_accuracy", "spearman_rho",
    ]
    out_rows = []
    for margin, init_var, gamma, dim, alpha, neg, loss in cells:
        overrides = {}
        if margin is not None:
            overrides["margin"] = margin
        if init_var is not None:
            overrides["init_var"] = init_var
        if gamma is not None:
            overrides["gamma"] = gamma
        if dim is not None:
            overrides["dim"] = dim
        if alpha is not None:
            overrides["kind"] = DivergenceKind("renyi", alpha)
        if neg is not None:
            overrides["neg"] = neg
        if loss is not None:
            overrides["loss"] = loss
        cfg = base.with_overrides(**overrides)
        row = [
            f"{cfg.margin:g}", f"{cfg.init_var:g}", f"{cfg.gamma:g}",
            str(cfg.dim), str(cfg.kind), str(cfg.neg), cfg.loss,
        ]
        try:
            cfg.validate()
            table = train(graph, cfg, val=val_set)
            val_acc = test_acc = rho = ""
            if val_set is not None:
                threshold = evaluation.tune_threshold(val_set, table, cfg)
                val_acc = f"{evaluation.binary_accuracy(val_set, threshold, table, cfg):.4f}"
                if test_set is not None:
                    test_acc = f"{evaluation.binary_accuracy(test_set, threshold, table, cfg):.4f}"
            if graded_rows is not None and synset_map is not None:
                pairs = _graded_pairs(graded_rows, synset_map, name_to_row)
                scored = evaluation.impute_missing(
                    [(p, evaluation.graded_score(p, table, cfg)) for p in pairs]
                )
                rho = f"{evaluation.spearman([s for _, s in scored], [p.gold for p, _ in scored]):.4f}"
            row += ["ok", val_acc, test_acc, rho]
        except Exception as exc:  # cell failures are recorded, not fatal
            row += [f"error:{type(exc).__name__}:{exc}", "", "", ""]
        out_rows.append(row)
    dataio.write_tsv(args.out, out_rows, header=header)
    print(f"sweep cells={len(cells)} out={args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="gaussorder", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("closure", parents=[], help="edge list in, transitive closure out")
    p.add_argument("--edges", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_closure)

    p = sub.add_parser("split", help="hold out labeled validation/test pairs from a closure")
    p.add_argument("--pairs", required=True, help="closure pairs TSV")
    p.add_argument("--val-size", dest="val_size", type=int, default=4000)
    p.add_argument("--test-size", dest="test_size", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train embeddings and write a checkpoint")
    _add_train_flags(p)
    p.add_argument("--edges")
    p.add_argument("--val", help="labeled pairs for per-epoch model selection")
    p.add_argument("--out", help="checkpoint path (default model.ckpt)")
    p.add_argument("--metrics", help="per-epoch metrics TSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-hypernym", help="tune threshold on val, report test accuracy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--divergence", help="override the checkpoint's divergence")
    p.add_argument("--scores-out", dest="scores_out")
    p.set_defaults(func=cmd_eval_hypernym)

    p = sub.add_parser("eval-hyperlex", help="graded entailment scoring vs gold scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graded", required=True)
    p.add_argument("--synsets", required=True, help="word -> synset list TSV")
    p.add_argument("--divergence", help="override the checkpoint's divergence")
    p.add_argument("--scores-out", dest="scores_out")
    p.set_defaults(func=cmd_eval_hyperlex)

    p = sub.add_parser("inspect", help="pairwise divergence matrix and volume report")
    p.add_argument("--checkpoint")
    p.add_argument("--nodes", help="comma-separated node names")
    p.add_argument("--divergence", help="override the checkpoint's divergence")
    p.add_argument("--matrix-out", dest="matrix_out", default="-")
    p.add_argument("--volumes-out", dest="volumes_out", default="-")
    p.add_argument("--verify", action="store_true", help="run the oracle battery")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("sweep", help="cross-product hyperparameter sweep")
    _add_train_flags(p)
    p.add_argument("--edges")
    p.add_argument("--val")
    p.add_argument("--test")
    p.add_argument("--graded")
    p.add_argument("--synsets")
    p.add_argument("--margins")
    p.add_argument("--init-vars", dest="init_vars")
    p.add_argument("--gammas")
    p.add_argument("--dims")
    p.add_argument("--alphas", help="renyi alpha grid; overrides --divergence per cell")
    p.add_argument("--neg-specs", dest="neg_specs", help="semicolon-separated NegSpec grid")
    p.add_argument("--losses", help=f"comma-separated subset of {LOSS_ENCAPSULATION},{LOSS_RANK}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, DataError, CheckpointError, CycleError, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, OracleError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
