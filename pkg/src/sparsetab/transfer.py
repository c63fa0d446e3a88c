"""Layer freezing, feature extraction and fine-tuning with a fresh head.

A frozen trunk is a trained model cut at a layer boundary; its parameters
are never touched again (the freeze law is hash-checkable). Because the
trunk is frozen and inference is deterministic, fine-tuning a head is
exactly training a small network on the extracted features.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset, split
from .network import (
    NetworkSpec,
    ParameterSet,
    attention_forward,
    dense_layer,
    forward,
    sparse_forward,
)
from .numerics import activation
from .training import TrainConfig, evaluate, train


@dataclass(frozen=True)
class FrozenTrunk:
    """Source model truncated at layer index `cut` (layers[:cut] kept)."""

    spec: NetworkSpec
    params: ParameterSet
    cut: int

    def __post_init__(self):
        if not 0 <= self.cut <= len(self.spec.layers):
            raise ValueError("cut must be a valid layer boundary")

    @classmethod
    def from_model(cls, spec: NetworkSpec, params: ParameterSet,
                   drop_last: int = 2) -> "FrozenTrunk":
        """Drop the trailing layers (default: the output layer and the
        dropout in front of it), keeping the representation layer."""
        return cls(spec=spec, params=params,
                   cut=len(spec.layers) - drop_last)

    @property
    def output_dim(self) -> int:
        return self.spec.layer_dims()[self.cut]

    def digest(self) -> str:
        return self.params.digest()


def extract_features(trunk: FrozenTrunk, x) -> np.ndarray:
    """Infer-mode activations at the cut point. Deterministic, so repeated
    extraction is bitwise identical and commutes with row slicing."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != trunk.spec.input_dim:
        raise ValueError(
            f"input has {x.shape[1] if x.ndim == 2 else '?'} features, trunk "
            f"expects {trunk.spec.input_dim}"
        )
    h = x
    for l, p in zip(trunk.spec.layers[: trunk.cut],
                    trunk.params.layers[: trunk.cut]):
        if l.kind == "attention":
            _, h = attention_forward(h, p["w"], l.score)
        elif l.kind == "sparse":
            h = sparse_forward(h, p["w"], l.mask, p["b"], l.activation)
        elif l.kind == "dense":
            h = activation(h @ p["w"] + p["b"], l.activation)
        # dropout is identity at inference
    return h


@dataclass(frozen=True)
class TransferModel:
    """Frozen trunk plus a trained head."""

    trunk: FrozenTrunk
    head_spec: NetworkSpec
    head_params: ParameterSet

    def predict(self, x) -> np.ndarray:
        feats = extract_features(self.trunk, x)
        out, _ = forward(self.head_spec, self.head_params, feats, mode="infer")
        return out

    def evaluate(self, d: Dataset) -> float:
        feats = extract_features(self.trunk, d.x)
        fd = Dataset(x=feats,
                     feature_names=tuple(f"h{i}" for i in range(feats.shape[1])),
                     y=d.y, time=d.time, event=d.event)
        return evaluate(self.head_spec, self.head_params, fd)


def _feature_dataset(trunk: FrozenTrunk, d: Dataset) -> Dataset:
    feats = extract_features(trunk, d.x)
    return Dataset(
        x=feats,
        feature_names=tuple(f"h{i}" for i in range(feats.shape[1])),
        y=d.y, time=d.time, event=d.event,
    )


def fine_tune(trunk: FrozenTrunk, dataset: Dataset, config: TrainConfig,
              head: str = "sigmoid", n_outputs: int = 1,
              hidden_units: int = 32):
    """Attach two fully connected layers to the frozen trunk and train only
    them. The trunk (attention included) stays frozen."""
    head_spec = NetworkSpec(
        input_dim=trunk.output_dim,
        layers=(dense_layer(hidden_units, "relu"),
                dense_layer(n_outputs, "linear")),
        head=head,
    )
    feat_ds = _feature_dataset(trunk, dataset)
    head_params, history = train(head_spec, feat_ds, config)
    return TransferModel(trunk, head_spec, head_params), history


def linear_probe(features, labels, config: TrainConfig,
                 test_fraction: float = 0.2):
    """Logistic regression by gradient descent on extracted features.

    Holds out test_fraction for the reported accuracy.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if np.unique(labels).size < 2:
        raise ValueError("probe labels are single-class")
    d = Dataset(
        x=features,
        feature_names=tuple(f"h{i}" for i in range(features.shape[1])),
        y=labels.astype(np.int64),
    )
    spec = NetworkSpec(input_dim=features.shape[1],
                       layers=(dense_layer(1, "linear"),), head="sigmoid")
    tr, te = split(d, test_fraction, config.seed)
    params, _ = train(spec, tr, config)
    metrics = {
        "train_accuracy": evaluate(spec, params, tr),
        "test_accuracy": evaluate(spec, params, te),
    }
    return spec, params, metrics


def align_features(source_names, target: Dataset):
    """Reorder target columns to the source feature list.

    Unmatched source features are zero-imputed; extra target features are
    dropped. Returns the aligned dataset plus (feature, status) report rows
    with status in {matched, imputed, dropped}.
    """
    source_names = tuple(source_names)
    pos = {name: j for j, name in enumerate(target.feature_names)}
    x = np.zeros((target.n_samples, len(source_names)))
    report = []
    for j, name in enumerate(source_names):
        if name in pos:
            x[:, j] = target.x[:, pos[name]]
            report.append((name, "matched"))
        else:
            report.append((name, "imputed"))
    for name in target.feature_names:
        if name not in set(source_names):
            report.append((name, "dropped"))
    aligned = Dataset(x=x, feature_names=source_names, y=target.y,
                      time=target.time, event=target.event)
    return aligned, report


def write_alignment_report(report, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "status"])
        w.writerows(report)
