"""Command line interface.

Exit codes: 0 on success, 1 when input data violates a contract, 2 for
usage errors (argparse's default).
"""

import argparse
import sys

import numpy as np

from . import evaluation as ev
from . import io as fio
from .core import DataError, validate_dataset
from .dictionary import build_kmeans, build_opf, build_random, quantize
from .supervised import classify_cpl, classify_knn, train_cpl, train_knn, tune_k, CplModel


def _load_labelled(manifest):
    dataset = fio.read_manifest(manifest)
    violations = validate_dataset(dataset, supervised=True)
    if violations:
        raise DataError("invalid dataset:\n" + "\n".join(str(v) for v in violations))
    return dataset


def _cmd_validate(args):
    dataset = fio.read_manifest(args.manifest)
    violations = validate_dataset(dataset, supervised=args.supervised)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        raise DataError(f"{len(violations)} violation(s) found")
    print(f"OK: {len(dataset)} images, dim={dataset.dim}, labels={dataset.label_set}")
    return 0


def _pool_descriptors(dataset):
    return np.vstack([r.descriptors for r in dataset.records])


def _cmd_build_dict(args):
    dataset = fio.read_manifest(args.manifest)
    violations = validate_dataset(dataset)
    if violations:
        raise DataError("invalid dataset:\n" + "\n".join(str(v) for v in violations))
    pool = _pool_descriptors(dataset)
    if args.builder == "random":
        if args.size is None:
            raise DataError("builder 'random' requires --size")
        dictionary = build_random(pool, args.size, seed=args.seed)
    elif args.builder == "kmeans":
        if args.size is None:
            raise DataError("builder 'kmeans' requires --size")
        dictionary = build_kmeans(pool, args.size, seed=args.seed)
    else:
        dictionary = build_opf(
            pool, args.kmax, target_size=args.size, stride=args.stride,
            n_jobs=ev.effective_workers(args.workers),
        )
    fio.write_dictionary(args.out, dictionary)
    print(f"wrote {dictionary.size} words (builder={dictionary.builder}) to {args.out}")
    return 0


def _cmd_quantize(args):
    dataset = fio.read_manifest(args.manifest)
    dictionary = fio.read_dictionary(args.dict)
    entries = []
    for rec in dataset.records:
        hist = quantize(rec.descriptors, dictionary, image_id=rec.image_id)
        entries.append((rec.image_id, rec.label, hist.counts))
    fio.write_histograms(args.out, entries)
    print(f"wrote {len(entries)} histograms of width {dictionary.size} to {args.out}")
    return 0


def _cmd_train(args):
    dataset = _load_labelled(args.manifest)
    dictionary = fio.read_dictionary(args.dict)
    X = ev.feature_matrix(dataset.records, dictionary, args.normalize)
    index = dataset.label_to_index()
    y = np.array([index[r.label] for r in dataset.records], dtype=np.int64)
    if args.classifier == "opf_cpl":
        model = train_cpl(X, y)
    else:
        k = args.knn_k
        if k is None:
            k = tune_k(X, y, range(1, args.knn_kmax + 1), seed=args.seed)
            print(f"tuned neighbourhood size: k={k}")
        model = train_knn(X, y, k)
    fio.write_model(args.out, model, dataset.label_set, normalization=args.normalize)
    print(f"wrote {args.classifier} model ({X.shape[0]} nodes) to {args.out}")
    return 0


def _cmd_classify(args):
    model, label_set, normalization = fio.read_model(args.model)
    dictionary = fio.read_dictionary(args.dict)
    dataset = fio.read_manifest(args.manifest)
    X = ev.feature_matrix(dataset.records, dictionary, normalization)
    if isinstance(model, CplModel):
        pred, score = classify_cpl(model, X)
    else:
        pred, score = classify_knn(model, X)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("image_id,predicted,score\n")
        for rec, p, s in zip(dataset.records, pred, score):
            fh.write(f"{rec.image_id},{label_set[p]},{s!r}\n")
    print(f"wrote {len(dataset)} predictions to {args.out}")

    labelled = [(r.label, label_set[p]) for r, p in zip(dataset.records, pred) if r.label is not None]
    if labelled and len(label_set) == 2:
        truth, guess = zip(*labelled)
        counts = ev.ConfusionCounts.from_predictions(truth, guess, label_set[0])
        m = ev.metrics(counts)
        print(f"accuracy on {len(labelled)} labelled images: {100 * m.accuracy:.2f}%")
    return 0


# Experiment options resolve in three layers: an explicit flag wins,
# then a config-file entry, then these defaults.
EXPERIMENT_DEFAULTS = {
    "builder": ("kmeans", str),
    "size": (100, int),
    "kmax": (100, int),
    "stride": (1, int),
    "classifier": ("opf_cpl", str),
    "knn_k": (None, int),
    "knn_kmax": (50, int),
    "runs": (20, int),
    "train_fraction": (0.7, float),
    "seed": (0, int),
    "normalize": ("none", str),
    "positive_label": (None, str),
    "workers": (1, int),
    "builders": (None, str),
    "sizes": (None, str),
    "classifiers": (None, str),
}


def _resolve_experiment_options(args):
    conf = fio.read_config(args.config) if args.config else {}
    for key in conf:
        if key not in EXPERIMENT_DEFAULTS:
            raise DataError(f"{args.config}: unknown config key {key!r}")
    for key, (default, cast) in EXPERIMENT_DEFAULTS.items():
        if getattr(args, key) is not None:
            continue
        if key in conf:
            try:
                setattr(args, key, cast(conf[key]))
            except ValueError:
                raise DataError(f"{args.config}: bad value for {key!r}: {conf[key]!r}")
        else:
            setattr(args, key, default)
    if args.builder not in ("random", "kmeans", "opf"):
        raise DataError(f"unknown builder {args.builder!r}")
    if args.classifier not in ("opf_cpl", "opf_knn", "external"):
        raise DataError(f"unknown classifier {args.classifier!r}")
    if args.normalize not in ("none", "l1", "l2"):
        raise DataError(f"unknown normalization {args.normalize!r}")
    return args


def _cmd_experiment(args):
    args = _resolve_experiment_options(args)
    dataset = _load_labelled(args.manifest)
    external = fio.read_predictions(args.external) if args.external else None
    cfg = ev.ExperimentConfig(
        builder=args.builder,
        size=args.size,
        k_max=args.kmax,
        stride=args.stride,
        classifier=args.classifier,
        knn_k=args.knn_k,
        knn_k_max=args.knn_kmax,
        runs=args.runs,
        train_fraction=args.train_fraction,
        seed=args.seed,
        normalization=args.normalize,
        positive_label=args.positive_label,
        n_jobs=args.workers,
    )

    sweep = args.builders or args.sizes or args.classifiers
    if sweep:
        builders = args.builders.split(",") if args.builders else [cfg.builder]
        sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [cfg.size]
        classifiers = args.classifiers.split(",") if args.classifiers else [cfg.classifier]
        report = ev.run_sweep(dataset, builders, sizes, classifiers, cfg, external_predictions=external)
    else:
        report = ev.run_experiment(dataset, cfg, external_predictions=external)

    payload = report.to_dict()
    if args.out:
        fio.write_report(args.out, payload)
        print(f"wrote report to {args.out}")
    if args.table:
        with open(args.table, "w", encoding="utf-8") as fh:
            fh.write(fio.render_table(payload))
        print(f"wrote table to {args.table}")
    if payload["kind"] == "experiment":
        agg = payload["aggregate"]
        acc = agg["mean_accuracy"]
        print(
            f"completed {agg['completed_runs']}/{cfg.runs} runs, "
            f"mean accuracy {('%.2f%%' % (100 * acc)) if acc is not None else 'n/a'}"
        )
    else:
        print(fio.render_table(payload), end="")
    return 0


def _cmd_stats_wilcoxon(args):
    def load(path):
        try:
            values = np.loadtxt(path, comments="#", ndmin=1, dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}: malformed number file ({exc})")
        return values

    a = load(args.file_a)
    b = load(args.file_b)
    res = ev.wilcoxon_signed_rank(a, b, alpha=args.alpha)
    if res.p_value is None:
        print(f"n=0 (all differences zero): no decision at alpha={args.alpha}")
        return 0
    verdict = "reject" if res.reject else "keep"
    print(
        f"W={res.statistic:g} n={res.n} method={res.method} p={res.p_value:.6g} "
        f"-> {verdict} the no-difference hypothesis at alpha={args.alpha}"
    )
    return 0


def _cmd_poi_ratio(args):
    points = fio.read_coords(args.coords)
    masks = [fio.read_pgm(m) for m in args.mask]
    ratio = ev.poi_region_ratio(points, masks)
    print(f"{100 * ratio:.2f}")
    return 0


def _cmd_gen_synth(args):
    dataset = ev.gen_synthetic(
        images_per_class=args.images_per_class,
        pois_per_image=args.pois,
        dim=args.dim,
        class_separation=args.separation,
        seed=args.seed,
        n_classes=args.classes,
    )
    manifest = fio.write_dataset(dataset, args.out, binary=args.binary)
    print(manifest)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="opfbovw",
        description="Optimum-path forest clustering, classification and bag-of-visual-words experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest and its files against the input contracts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--supervised", action="store_true", help="also require a label on every image")

    p = sub.add_parser("build-dict", help="learn a visual dictionary from all descriptors in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--builder", required=True, choices=["random", "kmeans", "opf"])
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=None, help="word count (target size for builder 'opf')")
    p.add_argument("--kmax", type=int, default=100, help="largest neighbourhood size swept by builder 'opf'")
    p.add_argument("--stride", type=int, default=1, help="step between swept neighbourhood sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("quantize", help="write word-count histograms for every image in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a classifier on histogram features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--classifier", required=True, choices=["opf_cpl", "opf_knn"])
    p.add_argument("--out", required=True)
    p.add_argument("--knn-k", type=int, default=None, help="fixed neighbourhood size (opf_knn)")
    p.add_argument("--knn-kmax", type=int, default=50, help="largest neighbourhood size tried when tuning")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", choices=["none", "l1", "l2"], default="none")

    p = sub.add_parser("classify", help="label a manifest's images with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="repeated-split evaluation of one or more configurations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="key=value file supplying defaults for omitted flags")
    p.add_argument("--builder", choices=["random", "kmeans", "opf"])
    p.add_argument("--size", type=int)
    p.add_argument("--kmax", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--classifier", choices=["opf_cpl", "opf_knn", "external"])
    p.add_argument("--knn-k", type=int)
    p.add_argument("--knn-kmax", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", choices=["none", "l1", "l2"])
    p.add_argument("--positive-label")
    p.add_argument("--workers", type=int)
    p.add_argument("--external", default=None, help="CSV of external predictions (run,image_id,predicted)")
    p.add_argument("--builders", help="comma list; triggers a sweep")
    p.add_argument("--sizes", help="comma list; triggers a sweep")
    p.add_argument("--classifiers", help="comma list; triggers a sweep")
    p.add_argument("--out", default=None, help="write the report as JSON")
    p.add_argument("--table", default=None, help="write the report as an aligned text table")

    p = sub.add_parser("stats-wilcoxon", help="paired signed-rank test between two per-run score files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("poi-ratio", help="percentage of points inside the intersection of mask regions")
    p.add_argument("--coords", required=True)
    p.add_argument("--mask", action="append", required=True, help="PGM mask; repeat to intersect several")

    p = sub.add_parser("gen-synth", help="generate a synthetic labelled descriptor dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--images-per-class", type=int, default=20)
    p.add_argument("--pois", type=int, default=50)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--binary", action="store_true", help="write binary descriptor files")

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "validate": _cmd_validate,
        "build-dict": _cmd_build_dict,
        "quantize": _cmd_quantize,
        "train": _cmd_train,
        "classify": _cmd_classify,
        "experiment": _cmd_experiment,
        "stats-wilcoxon": _cmd_stats_wilcoxon,
        "poi-ratio": _cmd_poi_ratio,
        "gen-synth": _cmd_gen_synth,
    }
    try:
        return handlers[args.command](args)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
