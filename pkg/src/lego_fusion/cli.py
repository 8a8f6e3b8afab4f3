"""``lego-fusion`` command-line tool.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric
failure (non-finite loss, failed oracle or gradient check). Diagnostics go to
stderr, results to files or stdout.
"""

import argparse
import sys

import numpy as np

from lego_fusion import config as cfgmod
from lego_fusion import data_io, evalkit, export, oracles, trainer
from lego_fusion.anomaly_model import load_checkpoint, save_checkpoint
from lego_fusion.errors import DataError, LegoError, NumericError
from lego_fusion.graph_build import KINDS, RelationshipGraph, build_graph
from lego_fusion.power_fusion import NORMALIZATIONS, FusionWeights, expand_powers, fuse

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _load_matrix(path):
    return data_io.load_features(path).features


def _write_matrix(matrix, path):
    data_io.save_features(np.asarray(matrix, dtype=np.float64), path)


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args):
    names = args.modalities or tuple(f"m{i}" for i in range(len(args.dims)))
    spec = data_io.SyntheticSpec(
        n_videos=args.n_videos,
        snippets_per_video=args.snippets_per_video,
        dims=tuple(args.dims),
        anomaly_rate=args.anomaly_rate,
        cluster_separation=args.separation,
        noise_sigma=args.noise_sigma,
        modality_correlation=args.correlation,
        seed=args.seed,
        modality_names=names,
        test_fraction=args.test_fraction,
    )
    ds = data_io.generate_synthetic(spec)
    path = data_io.write_dataset(ds, args.out)
    n_abn = sum(int(v.snippet_labels.sum()) for v in ds.videos)
    print(f"wrote {path}: {len(ds.videos)} videos, {ds.n_snippets} snippets, {n_abn} abnormal")


def cmd_build_graph(args):
    fs = data_io.load_features(args.features)
    g = build_graph(fs, kind=args.kind, gamma=args.gamma, normalize=not args.no_normalize)
    _write_matrix(g.scores, args.out)
    print(f"wrote {args.out}: {g.n}x{g.n} {g.kind} graph")


def cmd_fuse(args):
    ga = RelationshipGraph(_load_matrix(args.graph_a), kind="custom")
    gb = RelationshipGraph(_load_matrix(args.graph_b), kind="custom")
    if args.weights and (args.a or args.b):
        raise UsageError("fuse: give either --weights or --a/--b, not both")
    if args.a or args.b:
        if not (args.a and args.b):
            raise UsageError("fuse: --a and --b go together")
        weights = FusionWeights.outer(args.a, args.b)
    elif args.weights:
        weights = FusionWeights.full(_load_matrix(args.weights))
    else:
        A = np.zeros((args.P + 1, args.Q + 1))
        A[0, 0] = 1.0
        if args.P >= 1 and args.Q >= 1:
            A[1, 1] = 1.0
        weights = FusionWeights.full(A)
    P, Q = weights.shape[0] - 1, weights.shape[1] - 1
    sa = expand_powers(ga, P, args.normalization)
    sb = expand_powers(gb, Q, args.normalization)
    fused = fuse(sa, sb, weights)
    _write_matrix(fused.scores, args.out)
    print(f"wrote {args.out}: fused {fused.n}x{fused.n} graph, P={P} Q={Q} {weights.form}")


_TRAIN_FLAGS = [
    # (flag, field, type)
    ("--P", "P", int),
    ("--Q", "Q", int),
    ("--fusion-form", "fusion_form", str),
    ("--lambda", "lam", float),
    ("--alpha", "alpha", float),
    ("--k", "k", int),
    ("--learning-rate", "learning_rate", float),
    ("--epochs", "epochs", int),
    ("--batch-bags", "batch_bags", int),
    ("--optimizer", "optimizer", str),
    ("--modality-sampling", "modality_sampling", str),
    ("--fixed-pair", "fixed_pair", _names),
    ("--relationship", "relationship", str),
    ("--gamma", "gamma", float),
    ("--normalize-features", "normalize_features", _bool),
    ("--normalization", "normalization", str),
    ("--bag-size", "bag_size", int),
]


def cmd_train(args):
    file_values = cfgmod.read_config_file(args.config) if args.config else {}
    for name in ("data", "out"):
        if not getattr(args, name):
            raise UsageError(f"train: --{name} is required")
    flags = {field: getattr(args, field) for _, field, _ in _TRAIN_FLAGS}
    flags["seed"] = args.seed
    cfg = cfgmod.resolve_config(flags, file_values, args.preset)
    ds = data_io.load_dataset(args.data)
    train_set = ds.split("train")
    val_set = ds.split(args.validation_split) if args.validation_split else None
    if val_set is not None and not val_set.videos:
        val_set = None

    def progress(row):
        if not args.quiet:
            auc = row.get("val_auc")
            tail = f" val_auc={auc:.4f}" if auc is not None else ""
            print(f"epoch {row['epoch']:3d} loss={row['loss']:.6f}{tail}", file=sys.stderr)

    print(cfgmod.describe(cfg), file=sys.stderr)
    result = trainer.train(train_set, cfg, validation=val_set, progress=progress)
    save_checkpoint(result.model, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write(result.log_text())
    last = result.log[-1]
    msg = f"wrote {args.out}: {result.steps} steps, final loss {last['loss']:.6f}"
    if last.get("val_auc") is not None:
        msg += f", {args.validation_split} AUC {last['val_auc']:.4f}"
    print(msg)


def cmd_eval(args):
    model = load_checkpoint(args.model)
    ds = data_io.load_dataset(args.data)
    if args.split != "all":
        ds = ds.split(args.split)
    if not ds.videos:
        raise DataError(f"no videos in split {args.split!r}")
    report = evalkit.evaluate_model(model, ds, threshold=args.threshold)
    if args.report:
        evalkit.write_report_json(report, args.report)
    if args.csv:
        evalkit.write_report_csv(report, args.csv)
    if args.scores:
        scores = [s for b in report["bags"] for s in b["scores"]]
        labels = [y for b in report["bags"] for y in b["labels"]]
        evalkit.write_scores(scores, labels, args.scores)
    print(f"AUC {report['auc']:.6f} over {report['n_snippets']} snippets in {report['n_bags']} bags")


def cmd_oracle_check(args):
    worst = oracles.fusion_oracle_check(args.trials, args.seed, n=args.n, p=args.p, q=args.q)
    print(f"max deviation {worst:.3e} over {args.trials} trials")
    if not worst < args.tolerance:
        print(f"oracle check failed: {worst:.3e} >= {args.tolerance:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_grad_check(args):
    worst = 0.0
    excluded = 0
    for t in range(args.trials):
        rep = trainer.toy_gradient_check(
            args.seed + t,
            n=args.n,
            P=args.P,
            Q=args.Q,
            lam=args.lam,
            alpha=args.alpha,
            k=args.k,
            form=args.form,
            step=args.step,
            tolerance=args.tolerance,
        )
        worst = max(worst, rep.worst)
        excluded += sum(len(v) for v in rep.excluded.values())
    print(f"max relative error {worst:.3e} over {args.trials} toy problems ({excluded} entries excluded)")
    if not worst < args.tolerance:
        print(f"gradient check failed: {worst:.3e} >= {args.tolerance:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_export_graph(args):
    if bool(args.graph) == bool(args.features):
        raise UsageError("export-graph: give exactly one of --graph or --features")
    if args.graph:
        graph, kind = _load_matrix(args.graph), "custom"
    else:
        g = build_graph(data_io.load_features(args.features), kind=args.kind, gamma=args.gamma)
        graph, kind = g.scores, g.kind
    export.write_graph(graph, args.out, fmt=args.format, threshold=args.threshold, kind=kind)
    print(f"wrote {args.out}")


def cmd_presets(args):
    names = [args.name] if args.name else list(cfgmod.PRESETS)
    for name in names:
        cfg = cfgmod.load_presets(name)
        prefix = "" if args.name else f"{name}: "
        print(prefix + cfgmod.describe(cfg))


# -- parser -------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="lego-fusion", description="Graph power fusion for multi-modal anomaly detection.", allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def command(name, func, help_text, seed_default=0):
        p = sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        p.set_defaults(func=func)
        seed_help = "random seed (default 0)" if seed_default is not None else "random seed (overrides the config file; default 0)"
        p.add_argument("--seed", type=int, default=seed_default, help=seed_help)
        return p

    p = command("gen-data", cmd_gen_data, "Write a synthetic multi-modal anomaly dataset.")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-videos", type=int, default=40)
    p.add_argument("--snippets-per-video", type=int, default=96)
    p.add_argument("--dims", type=_ints, default=(64, 32), help="feature dims per modality, e.g. 64,32")
    p.add_argument("--modalities", type=_names, default=None, help="modality names, comma separated")
    p.add_argument("--anomaly-rate", type=float, default=0.1)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--correlation", type=float, default=0.5)
    p.add_argument("--test-fraction", type=float, default=0.25)

    p = command("build-graph", cmd_build_graph, "Build a relationship graph from a feature file.")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=KINDS, default="clamped-cosine")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--no-normalize", action="store_true", help="skip L2 row normalization")

    p = command("fuse", cmd_fuse, "Fuse two relationship graphs through their power stacks.")
    p.add_argument("--graph-a", required=True)
    p.add_argument("--graph-b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--P", type=int, default=2)
    p.add_argument("--Q", type=int, default=3)
    p.add_argument("--weights", help="(P+1)x(Q+1) weight matrix file")
    p.add_argument("--a", type=_floats, help="power selector for graph a, comma separated")
    p.add_argument("--b", type=_floats, help="power selector for graph b, comma separated")
    p.add_argument("--normalization", choices=NORMALIZATIONS, default="raw")

    p = command("train", cmd_train, "Train a model on a dataset manifest.", seed_default=None)
    # checked after the config file is read, so a bad config reports first
    p.add_argument("--data", help="dataset manifest (required)")
    p.add_argument("--out", help="checkpoint path (required)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", help="dataset preset tag")
    p.add_argument("--log", help="write per-epoch log (JSON lines)")
    p.add_argument("--validation-split", default="test", help="split used for per-epoch AUC ('' to skip)")
    p.add_argument("--quiet", action="store_true")
    for flag, field, typ in _TRAIN_FLAGS:
        p.add_argument(flag, dest=field, type=typ, default=None)

    p = command("eval", cmd_eval, "Evaluate a checkpoint on a dataset.")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", help="train, test or all")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--csv", help="CSV report path")
    p.add_argument("--scores", help="score dump path")

    p = command("oracle-check", cmd_oracle_check, "Compare fuse against the naive loop oracle.")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--n", type=int, default=None, help="fixed node count (default random 2..6)")
    p.add_argument("--p", type=int, default=None, help="fixed P (default random 0..4)")
    p.add_argument("--q", type=int, default=None, help="fixed Q (default random 0..4)")
    p.add_argument("--tolerance", type=float, default=1e-9)

    p = command("grad-check", cmd_grad_check, "Finite-difference check of training gradients on toy bags.")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--P", type=int, default=2)
    p.add_argument("--Q", type=int, default=2)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--form", choices=("full_matrix", "outer_product"), default="full_matrix")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = command("export-graph", cmd_export_graph, "Export a graph as JSON or DOT.")
    p.add_argument("--graph", help="graph matrix file")
    p.add_argument("--features", help="feature file (graph is built first)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "dot"), default=None, help="default: from the file suffix")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--kind", choices=KINDS, default="clamped-cosine")
    p.add_argument("--gamma", type=float, default=1.0)

    p = command("presets", cmd_presets, "Show dataset presets.")
    p.add_argument("name", nargs="?", help="preset tag (default: list all)")

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        code = args.func(args)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, LegoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
