"""Sparse, interpretable feed-forward networks for tabular data.

Connectivity masks built from feature groupings, biased random walks on a
cosine feature graph, or k-means feature clustering constrain small masked
networks whose tabular attention weights double as feature importance.
Includes ground-truth synthetic benchmarks, survival regression with the
Breslow partial likelihood, transfer learning utilities and an experiment
CLI.
"""

__version__ = "0.1.0"

from .data import Dataset, ScalerParams, SyntheticSpec, load_csv, \
    make_classification, split, standardize
from .maskgen import FeatureGraph, MaskMatrix, WalkSet, \
    build_feature_graph, cosine_similarity_features, dense_mask, \
    groups_to_mask, kmeans_mask, node2vec_walks, random_walk_mask, \
    walks_to_mask
from .network import LayerSpec, NetworkSpec, ParameterSet, backward, \
    forward, init_params, load_model, save_model, standard_spec
from .training import TrainConfig, TrainHistory, accuracy, adam_step, \
    binary_cross_entropy, categorical_cross_entropy, concordance_index, \
    cox_breslow_loss, evaluate, predict, train
from .interpret import AblationCurve, ImportanceReport, SeparationStat, \
    feature_importance, lerf, morf, noise_stability_sweep, select_features, \
    selection_sweep, separation_stat, walk_ablation
from .transfer import FrozenTrunk, TransferModel, align_features, \
    extract_features, fine_tune, linear_probe
