"""Experiment harness: splits, metrics, significance tests, reports.

The harness repeats a fixed pipeline over seeded stratified splits:
pool the training descriptors, build a dictionary, quantise both
splits, train a classifier, and score the held-out images.  Runs are
seeded as base seed plus run index, so any run can be reproduced in
isolation and a sweep over builders and classifiers sees identical
splits and dictionaries wherever the configuration overlaps, which is
what makes paired significance testing meaningful.
"""

import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata
from scipy.special import ndtr

from .core import DataError
from .dictionary import build_kmeans, build_opf, build_random, quantize
from .supervised import classify_cpl, classify_knn, train_cpl, train_knn, tune_k

__all__ = [
    "ConfusionCounts",
    "Metrics",
    "metrics",
    "WilcoxonResult",
    "wilcoxon_signed_rank",
    "stratified_split",
    "ExperimentConfig",
    "RunResult",
    "ExperimentReport",
    "SweepReport",
    "run_experiment",
    "run_sweep",
    "feature_matrix",
    "poi_region_ratio",
    "gen_synthetic",
    "effective_workers",
]

BUILDERS = ("random", "kmeans", "opf")
CLASSIFIERS = ("opf_cpl", "opf_knn", "external")


def effective_workers(requested=1):
    """Resolve a worker count, honouring the OPFBOVW_THREADS cap."""
    if requested in (None, 0):
        requested = 1
    if requested < 0:
        requested = os.cpu_count() or 1
    cap = os.environ.get("OPFBOVW_THREADS")
    if cap:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            warnings.warn(f"ignoring non-integer OPFBOVW_THREADS={cap!r}", stacklevel=2)
    return requested


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts for one evaluation."""

    tp: int
    tn: int
    fp: int
    fn: int

    @classmethod
    def from_predictions(cls, y_true, y_pred, positive):
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        if y_true.shape != y_pred.shape:
            raise DataError(f"prediction shape {y_pred.shape} does not match truth shape {y_true.shape}")
        if y_true.size == 0:
            raise DataError("cannot score an empty prediction set")
        t = y_true == positive
        p = y_pred == positive
        return cls(
            tp=int(np.sum(t & p)),
            tn=int(np.sum(~t & ~p)),
            fp=int(np.sum(~t & p)),
            fn=int(np.sum(t & ~p)),
        )


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    sensitivity: float | None
    specificity: float | None


def metrics(counts):
    """Class-balanced accuracy plus sensitivity and specificity.

    Accuracy is one minus the mean of the per-class error rates, so a
    skewed test set cannot be gamed by always predicting the majority
    class.  Sensitivity or specificity is None when its class is absent
    from the test set; the accuracy then averages over the classes that
    are present.
    """
    npos = counts.tp + counts.fn
    nneg = counts.tn + counts.fp
    if npos + nneg == 0:
        raise DataError("empty confusion counts")
    errors = []
    sens = spec = None
    if npos:
        sens = counts.tp / npos
        errors.append(counts.fn / npos)
    if nneg:
        spec = counts.tn / nneg
        errors.append(counts.fp / nneg)
    return Metrics(accuracy=1.0 - sum(errors) / len(errors), sensitivity=sens, specificity=spec)


@dataclass(frozen=True)
class WilcoxonResult:
    """Signed-rank test outcome; reject is None when no decision is possible."""

    statistic: float
    p_value: float | None
    n: int
    method: str
    alpha: float
    reject: bool | None


def _exact_signed_rank_p(ranks, statistic):
    # Ranks are halves of integers; doubling makes exact integer sums.
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    dp = np.zeros(total + 1, dtype=np.int64)
    dp[0] = 1
    for r in doubled:
        nxt = dp.copy()
        nxt[r:] += dp[: total + 1 - r]
        dp = nxt
    w2 = int(np.rint(2.0 * statistic))
    idx = np.arange(total + 1)
    extreme = (idx <= w2) | (total - idx <= w2)
    return float(dp[extreme].sum() / 2.0 ** len(ranks))


def wilcoxon_signed_rank(x, y, alpha=0.05, method="auto", exact_limit=12):
    """Two-sided Wilcoxon signed-rank test for paired samples.

    Zero differences are dropped; tied magnitudes share mid-ranks.  The
    statistic is the smaller of the positive and negative rank sums.
    Up to ``exact_limit`` effective pairs the p-value is exact (every
    sign assignment enumerated through a rank-sum distribution);
    beyond that a normal approximation with tie and continuity
    corrections is used.  ``method`` can force ``"exact"`` or
    ``"normal"``.  With every difference zero there is no evidence
    either way and the result carries no decision.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"paired samples must be 1-d and equal length, got {x.shape} and {y.shape}")
    if x.size < 5:
        raise DataError(f"need at least 5 paired samples, got {x.size}")
    d = x - y
    d = d[d != 0]
    n = int(d.size)
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=None, n=0, method="all-zero", alpha=alpha, reject=None)

    ranks = rankdata(np.abs(d))
    w_pos = float(ranks[d > 0].sum())
    w_neg = float(ranks[d < 0].sum())
    statistic = min(w_pos, w_neg)

    if method == "auto":
        method = "exact" if n <= exact_limit else "normal"
    if method == "exact":
        p = _exact_signed_rank_p(ranks, statistic)
    elif method == "normal":
        # Moments of the rank sum under the null: the tie correction
        # enters the variance, and a kurtosis term sharpens the tail so
        # the approximation stays within 0.01 of the exact value even
        # at the crossover size of 12 effective pairs.
        mu = float(ranks.sum()) / 2.0
        var = float(np.sum(ranks ** 2)) / 4.0
        if var <= 0:
            raise DataError("zero variance in signed-rank approximation")
        kurt = -float(np.sum(ranks ** 4)) / 8.0 / var ** 2
        z = (statistic - mu + 0.5) / np.sqrt(var)
        phi = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
        tail = float(ndtr(z)) - phi * (kurt / 24.0) * (z ** 3 - 3.0 * z)
        p = min(1.0, max(0.0, 2.0 * tail))
    else:
        raise DataError(f"unknown method {method!r}")
    return WilcoxonResult(
        statistic=statistic,
        p_value=p,
        n=n,
        method=method,
        alpha=alpha,
        reject=bool(p < alpha),
    )


def _records_by_class(records, label_set):
    if any(r.label is None for r in records):
        raise DataError("stratified split requires every record to carry a label")
    order = {lab: i for i, lab in enumerate(label_set)}
    classes = sorted({r.label for r in records}, key=lambda lab: order.get(lab, len(order)))
    return [(lab, [r for r in records if r.label == lab]) for lab in classes]


def stratified_split(dataset, train_fraction, seed, group_key=None):
    """Split records into train and test lists, per-class proportions kept.

    Each class contributes floor(fraction * count) records to training,
    clamped so both sides keep at least one record, which requires at
    least two records per class.  With ``group_key`` the unit of
    assignment is the group (e.g. a patient): records sharing a key
    never straddle the split, and groups are stratified by their
    majority label.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train fraction must lie strictly between 0 and 1, got {train_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []

    if group_key is None:
        units = [(r.label, [r]) for r in dataset.records]
    else:
        grouped = {}
        for r in dataset.records:
            grouped.setdefault(group_key(r), []).append(r)
        units = []
        for key in sorted(grouped):
            members = grouped[key]
            labs = sorted({m.label for m in members}, key=lambda lab: sum(m.label == lab for m in members), reverse=True)
            units.append((labs[0], members))

    classes = {}
    for lab, members in units:
        if lab is None:
            raise DataError("stratified split requires every record to carry a label")
        classes.setdefault(lab, []).append(members)

    order = {lab: i for i, lab in enumerate(dataset.label_set)}
    for lab in sorted(classes, key=lambda v: order.get(v, len(order))):
        unit_list = classes[lab]
        if len(unit_list) < 2:
            raise DataError(f"class {lab!r} has {len(unit_list)} unit(s); need at least 2 to split")
        perm = rng.permutation(len(unit_list))
        n_train = int(np.floor(train_fraction * len(unit_list)))
        n_train = min(max(n_train, 1), len(unit_list) - 1)
        for pos, idx in enumerate(perm):
            (train if pos < n_train else test).extend(unit_list[idx])
    return train, test


@dataclass
class ExperimentConfig:
    """Everything one experiment needs besides the dataset itself."""

    builder: str = "kmeans"
    size: int | None = 100
    k_max: int = 100
    stride: int = 1
    classifier: str = "opf_cpl"
    knn_k: int | None = None
    knn_k_max: int = 50
    runs: int = 20
    train_fraction: float = 0.7
    seed: int = 0
    normalization: str = "none"
    positive_label: str | None = None
    n_jobs: int = 1

    def validate(self):
        if self.builder not in BUILDERS:
            raise DataError(f"unknown builder {self.builder!r}; expected one of {BUILDERS}")
        if self.classifier not in CLASSIFIERS:
            raise DataError(f"unknown classifier {self.classifier!r}; expected one of {CLASSIFIERS}")
        if self.builder in ("random", "kmeans") and (self.size is None or self.size < 1):
            raise DataError(f"builder {self.builder!r} needs a positive size, got {self.size}")
        if self.runs < 1:
            raise DataError(f"runs must be positive, got {self.runs}")
        if self.normalization not in ("none", "l1", "l2"):
            raise DataError(f"unknown normalization {self.normalization!r}")
        return self

    def to_dict(self):
        return {
            "builder": self.builder,
            "size": self.size,
            "k_max": self.k_max,
            "stride": self.stride,
            "classifier": self.classifier,
            "knn_k": self.knn_k,
            "knn_k_max": self.knn_k_max,
            "runs": self.runs,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "normalization": self.normalization,
            "positive_label": self.positive_label,
        }


@dataclass
class RunResult:
    run_index: int
    seed: int
    dict_size: int | None = None
    knn_k: int | None = None
    counts: ConfusionCounts | None = None
    accuracy: float | None = None
    sensitivity: float | None = None
    specificity: float | None = None
    error: str | None = None

    def to_dict(self):
        out = {"run": self.run_index, "seed": self.seed}
        if self.error is not None:
            out["error"] = self.error
            return out
        out.update(
            dict_size=self.dict_size,
            knn_k=self.knn_k,
            tp=self.counts.tp,
            tn=self.counts.tn,
            fp=self.counts.fp,
            fn=self.counts.fn,
            accuracy=self.accuracy,
            sensitivity=self.sensitivity,
            specificity=self.specificity,
        )
        return out


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


@dataclass
class ExperimentReport:
    config: dict
    runs: list

    def completed(self):
        return [r for r in self.runs if r.error is None]

    def to_dict(self):
        done = self.completed()
        accs = [r.accuracy for r in done]
        return {
            "kind": "experiment",
            "config": self.config,
            "runs": [r.to_dict() for r in self.runs],
            "aggregate": {
                "completed_runs": len(done),
                "failed_runs": len(self.runs) - len(done),
                "mean_accuracy": _mean_or_none(accs),
                "std_accuracy": float(np.std(accs)) if accs else None,
                "mean_sensitivity": _mean_or_none([r.sensitivity for r in done]),
                "mean_specificity": _mean_or_none([r.specificity for r in done]),
            },
        }


def feature_matrix(records, dictionary, normalization):
    rows = []
    for rec in records:
        hist = quantize(rec.descriptors, dictionary, image_id=rec.image_id)
        if hist.total != rec.descriptors.shape[0]:
            raise DataError(f"quantisation lost descriptors for image {rec.image_id!r}")
        v = hist.counts.astype(np.float64)
        if normalization == "l1":
            v = v / v.sum()
        elif normalization == "l2":
            v = v / np.sqrt(np.sum(v * v))
        rows.append(v)
    return np.vstack(rows)


def _build_dictionary(pool, cfg, run_seed):
    if cfg.builder == "random":
        return build_random(pool, cfg.size, seed=run_seed)
    if cfg.builder == "kmeans":
        return build_kmeans(pool, cfg.size, seed=run_seed)
    return build_opf(pool, cfg.k_max, target_size=cfg.size, stride=cfg.stride)


def _positive_label(dataset, cfg):
    if cfg.positive_label is not None:
        if cfg.positive_label not in dataset.label_set:
            raise DataError(f"positive label {cfg.positive_label!r} not in label set {dataset.label_set}")
        return cfg.positive_label
    return dataset.label_set[0]


def _classify_split(cfg, dataset, train, test, dictionary, run_index, run_seed, external):
    lab_index = dataset.label_to_index()
    y_train = np.array([lab_index[r.label] for r in train], dtype=np.int64)
    y_test = [r.label for r in test]
    chosen_k = None

    if cfg.classifier == "external":
        if external is None:
            raise DataError("external classifier selected but no predictions were provided")
        preds = []
        for rec in test:
            key = (run_index, rec.image_id)
            if key not in external:
                raise DataError(f"missing external prediction for run {run_index}, image {rec.image_id!r}")
            preds.append(external[key])
        return preds, y_test, chosen_k

    X_train = feature_matrix(train, dictionary, cfg.normalization)
    X_test = feature_matrix(test, dictionary, cfg.normalization)
    if cfg.classifier == "opf_cpl":
        model = train_cpl(X_train, y_train)
        pred, _ = classify_cpl(model, X_test)
    else:
        chosen_k = cfg.knn_k
        if chosen_k is None:
            chosen_k = tune_k(X_train, y_train, range(1, cfg.knn_k_max + 1), seed=run_seed)
        model = train_knn(X_train, y_train, chosen_k)
        pred, _ = classify_knn(model, X_test)
    preds = [dataset.label_set[i] for i in pred]
    return preds, y_test, chosen_k


def _single_run(dataset, cfg, run_index, external=None):
    run_seed = cfg.seed + run_index
    try:
        train, test = stratified_split(dataset, cfg.train_fraction, run_seed)
        pool = np.vstack([r.descriptors for r in train])
        dictionary = None
        if cfg.classifier != "external":
            dictionary = _build_dictionary(pool, cfg, run_seed)
        preds, y_test, chosen_k = _classify_split(
            cfg, dataset, train, test, dictionary, run_index, run_seed, external
        )
        counts = ConfusionCounts.from_predictions(y_test, preds, _positive_label(dataset, cfg))
        m = metrics(counts)
        return RunResult(
            run_index=run_index,
            seed=run_seed,
            dict_size=dictionary.size if dictionary is not None else None,
            knn_k=chosen_k,
            counts=counts,
            accuracy=m.accuracy,
            sensitivity=m.sensitivity,
            specificity=m.specificity,
        )
    except DataError as exc:
        return RunResult(run_index=run_index, seed=run_seed, error=str(exc))


def run_experiment(dataset, cfg, external_predictions=None):
    """Run one configuration over seeded repeated splits.

    A failed run is recorded with its error message instead of aborting
    the experiment; aggregates cover the completed runs only.
    """
    cfg.validate()
    if not dataset.label_set:
        raise DataError("dataset has no label set")
    if len(dataset.label_set) != 2:
        raise DataError(f"evaluation expects exactly 2 classes, got {len(dataset.label_set)}")
    _positive_label(dataset, cfg)
    jobs = effective_workers(cfg.n_jobs)
    if jobs > 1 and cfg.runs > 1:
        results = Parallel(n_jobs=jobs)(
            delayed(_single_run)(dataset, cfg, r, external_predictions) for r in range(cfg.runs)
        )
    else:
        results = [_single_run(dataset, cfg, r, external_predictions) for r in range(cfg.runs)]
    return ExperimentReport(config=cfg.to_dict(), runs=list(results))


@dataclass
class SweepReport:
    config: dict
    builders: list
    sizes: list
    classifiers: list
    cells: dict
    comparisons: list

    def to_dict(self):
        cell_rows = []
        for (builder, size, classifier), runs in sorted(
            self.cells.items(),
            key=lambda item: (
                self.builders.index(item[0][0]),
                self.sizes.index(item[0][1]),
                self.classifiers.index(item[0][2]),
            ),
        ):
            done = [r for r in runs if r.error is None]
            accs = [r.accuracy for r in done]
            cell_rows.append(
                {
                    "builder": builder,
                    "size": size,
                    "classifier": classifier,
                    "completed_runs": len(done),
                    "failed_runs": len(runs) - len(done),
                    "mean_accuracy": _mean_or_none(accs),
                    "std_accuracy": float(np.std(accs)) if accs else None,
                    "mean_sensitivity": _mean_or_none([r.sensitivity for r in done]),
                    "mean_specificity": _mean_or_none([r.specificity for r in done]),
                    "mean_dict_size": _mean_or_none([r.dict_size for r in done]),
                    "run_accuracies": accs,
                }
            )
        return {
            "kind": "sweep",
            "config": self.config,
            "builders": self.builders,
            "sizes": self.sizes,
            "classifiers": self.classifiers,
            "cells": cell_rows,
            "comparisons": self.comparisons,
        }


def _sweep_cell_runs(dataset, base, builder, size, classifiers, external):
    """All classifiers on one (builder, size) cell, sharing dictionaries."""
    out = {c: [] for c in classifiers}
    for r in range(base.runs):
        run_seed = base.seed + r
        cfg = replace(base, builder=builder, size=size)
        try:
            train, test = stratified_split(dataset, cfg.train_fraction, run_seed)
            pool = np.vstack([rec.descriptors for rec in train])
            needs_dict = any(c != "external" for c in classifiers)
            dictionary = _build_dictionary(pool, cfg, run_seed) if needs_dict else None
        except DataError as exc:
            for c in classifiers:
                out[c].append(RunResult(run_index=r, seed=run_seed, error=str(exc)))
            continue
        for c in classifiers:
            cfg_c = replace(cfg, classifier=c)
            try:
                preds, y_test, chosen_k = _classify_split(
                    cfg_c, dataset, train, test, dictionary, r, run_seed, external
                )
                counts = ConfusionCounts.from_predictions(y_test, preds, _positive_label(dataset, cfg_c))
                m = metrics(counts)
                out[c].append(
                    RunResult(
                        run_index=r,
                        seed=run_seed,
                        dict_size=dictionary.size if dictionary is not None else None,
                        knn_k=chosen_k,
                        counts=counts,
                        accuracy=m.accuracy,
                        sensitivity=m.sensitivity,
                        specificity=m.specificity,
                    )
                )
            except DataError as exc:
                out[c].append(RunResult(run_index=r, seed=run_seed, error=str(exc)))
    return out


def run_sweep(dataset, builders, sizes, classifiers, base_cfg, external_predictions=None):
    """Cross builders x sizes x classifiers over shared seeded runs.

    Within a cell every classifier sees the same splits and the same
    dictionary, so per-run accuracies are paired; each classifier pair
    in a cell gets a signed-rank comparison when at least 5 paired runs
    completed on both sides.
    """
    base_cfg.validate()
    builders = list(builders)
    sizes = list(sizes)
    classifiers = list(classifiers)
    for b in builders:
        if b not in BUILDERS:
            raise DataError(f"unknown builder {b!r}")
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise DataError(f"unknown classifier {c!r}")

    cell_keys = [(b, s) for b in builders for s in sizes]
    jobs = effective_workers(base_cfg.n_jobs)
    if jobs > 1 and len(cell_keys) > 1:
        cell_results = Parallel(n_jobs=jobs)(
            delayed(_sweep_cell_runs)(dataset, base_cfg, b, s, classifiers, external_predictions)
            for b, s in cell_keys
        )
    else:
        cell_results = [
            _sweep_cell_runs(dataset, base_cfg, b, s, classifiers, external_predictions)
            for b, s in cell_keys
        ]

    cells = {}
    for (b, s), per_classifier in zip(cell_keys, cell_results):
        for c in classifiers:
            cells[(b, s, c)] = per_classifier[c]

    comparisons = []
    for b, s in cell_keys:
        for i, ca in enumerate(classifiers):
            for cb in classifiers[i + 1 :]:
                ra = {r.run_index: r.accuracy for r in cells[(b, s, ca)] if r.error is None}
                rb = {r.run_index: r.accuracy for r in cells[(b, s, cb)] if r.error is None}
                shared = sorted(set(ra) & set(rb))
                entry = {"builder": b, "size": s, "classifier_a": ca, "classifier_b": cb, "paired_runs": len(shared)}
                if len(shared) >= 5:
                    res = wilcoxon_signed_rank(
                        np.array([ra[r] for r in shared]),
                        np.array([rb[r] for r in shared]),
                    )
                    entry.update(
                        statistic=res.statistic,
                        p_value=res.p_value,
                        n=res.n,
                        method=res.method,
                        reject=res.reject,
                    )
                else:
                    entry.update(statistic=None, p_value=None, n=0, method="skipped", reject=None)
                comparisons.append(entry)

    return SweepReport(
        config=base_cfg.to_dict(),
        builders=builders,
        sizes=sizes,
        classifiers=classifiers,
        cells=cells,
        comparisons=comparisons,
    )


def poi_region_ratio(points, masks):
    """Fraction of points that fall inside the intersection of masks.

    Points are (x, y) pixel coordinates, floored to the containing
    pixel.  Every point must lie inside the image bounds, and at least
    one point and one mask are required.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
        raise DataError(f"points must form a non-empty (n, 2) array, got shape {pts.shape}")
    try:
        mask_list = list(masks)
    except TypeError:
        mask_list = [masks]
    if not mask_list:
        raise DataError("at least one mask is required")
    region = mask_list[0]
    for m in mask_list[1:]:
        region = region.intersect(m)
    inside = sum(1 for x, y in pts if region.contains(x, y))
    return inside / pts.shape[0]


def gen_synthetic(
    images_per_class,
    pois_per_image,
    dim,
    class_separation,
    seed,
    n_classes=2,
    components_per_class=3,
    intra_spread=1.0,
):
    """Generate a labelled synthetic descriptor dataset.

    Every class draws descriptors from a mixture of Gaussian
    components.  The component centres are shared across classes and
    then shifted along a class-specific direction scaled by
    ``class_separation``; at separation zero the class distributions
    coincide and no classifier can beat chance on average.
    """
    from .core import Dataset, ImageRecord

    if images_per_class < 1 or pois_per_image < 1 or dim < 1 or n_classes < 2:
        raise DataError("images_per_class, pois_per_image and dim must be positive; need >= 2 classes")
    if class_separation < 0:
        raise DataError(f"class separation must be non-negative, got {class_separation}")
    rng = np.random.default_rng(seed)
    shared = rng.normal(0.0, 2.0, size=(components_per_class, dim))
    directions = rng.normal(size=(n_classes, dim))
    directions /= np.sqrt(np.sum(directions ** 2, axis=1, keepdims=True))

    labels = [f"class{c}" for c in range(n_classes)]
    records = []
    for c in range(n_classes):
        centres = shared + class_separation * directions[c]
        for i in range(images_per_class):
            comp = rng.integers(components_per_class, size=pois_per_image)
            desc = centres[comp] + rng.normal(0.0, intra_spread, size=(pois_per_image, dim))
            records.append(ImageRecord(image_id=f"{labels[c]}_img{i:03d}", label=labels[c], descriptors=desc))
    return Dataset(records=records, dim=dim, label_set=labels)
