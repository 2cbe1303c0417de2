"""Optimum-path forest clustering, classification, and bag-of-visual-words tools."""

from .core import DataError, Dataset, ImageRecord, RegionMask, distance, validate_dataset
from .knn_graph import KnnGraph, build_knn_graph, compute_densities
from .clustering import Forest, ClusterRun, best_k, cluster, min_density_gap, normalized_cut
from .supervised import (
    CplModel,
    KnnModel,
    classify_cpl,
    classify_knn,
    mst_prototypes,
    train_cpl,
    train_knn,
    tune_k,
)
from .dictionary import Dictionary, Histogram, build_kmeans, build_opf, build_random, quantize
from .evaluation import (
    ConfusionCounts,
    ExperimentConfig,
    gen_synthetic,
    metrics,
    poi_region_ratio,
    run_experiment,
    run_sweep,
    stratified_split,
    wilcoxon_signed_rank,
)

__version__ = "0.1.0"
