"""CSV ingestion, standardization, splitting and the synthetic multiclass
generator used for the ground-truth interpretability experiments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .numerics import make_rng


class CsvParseError(ValueError):
    """A cell failed to parse; message names the offending row and column."""


@dataclass(frozen=True)
class Dataset:
    """Column-typed table: features, optional labels, optional survival columns.

    x is b rows by n features. y holds class indices (integer dtype) or real
    targets. Survival rows carry a strictly positive time and a 0/1 event flag.
    Instances are immutable; derived datasets are new values.
    """

    x: np.ndarray
    feature_names: tuple[str, ...]
    y: np.ndarray | None = None
    time: np.ndarray | None = None
    event: np.ndarray | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("x must be 2-D")
        if len(self.feature_names) != x.shape[1]:
            raise ValueError("feature_names length must match feature count")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite feature values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        for name in ("y", "time", "event"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v)
            if v.shape != (x.shape[0],):
                raise ValueError(f"{name} must have one entry per row")
            object.__setattr__(self, name, v)
        if self.time is not None:
            if np.any(np.asarray(self.time, dtype=np.float64) <= 0):
                raise ValueError("survival times must be strictly positive")
            if self.event is None:
                raise ValueError("time column requires an event column")
            ev = np.asarray(self.event)
            if not np.all(np.isin(ev, (0, 1))):
                raise ValueError("event indicators must be 0 or 1")
        if self.y is not None and np.issubdtype(self.y.dtype, np.integer):
            if self.y.size and self.y.min() < 0:
                raise ValueError("class labels must be non-negative")
        for arr in (self.x, self.y, self.time, self.event):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.y is not None

    @property
    def categorical(self) -> bool:
        return self.y is not None and np.issubdtype(self.y.dtype, np.integer)

    @property
    def n_classes(self) -> int:
        if not self.categorical:
            raise ValueError("dataset has no categorical labels")
        return int(self.y.max()) + 1

    def take(self, idx) -> "Dataset":
        """Row subset as a new Dataset."""
        idx = np.asarray(idx)
        return Dataset(
            x=self.x[idx],
            feature_names=self.feature_names,
            y=None if self.y is None else self.y[idx],
            time=None if self.time is None else self.time[idx],
            event=None if self.event is None else self.event[idx],
        )

    def select_features(self, cols) -> "Dataset":
        """Column subset (by index) as a new Dataset."""
        cols = np.asarray(cols, dtype=int)
        return Dataset(
            x=self.x[:, cols],
            feature_names=tuple(self.feature_names[c] for c in cols),
            y=self.y,
            time=self.time,
            event=self.event,
        )

    def with_labels(self, y) -> "Dataset":
        return replace(self, y=np.asarray(y))


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the hypercube-vertex multiclass generator.

    class_sep scales the spacing of class centroids: smaller values give a
    harder task. 0.1-1.0 is the usual sweep range but any positive value is
    accepted.
    """

    n_samples: int
    n_features: int
    n_informative: int
    n_classes: int = 6
    class_sep: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_informative > self.n_features:
            raise ValueError("n_informative cannot exceed n_features")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.class_sep <= 0:
            raise ValueError("class_sep must be positive")
        if self.n_informative < 1 or self.n_samples < 1:
            raise ValueError("n_samples and n_informative must be positive")


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature mean and std; std is 1 where a feature is constant."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, d: Dataset) -> Dataset:
        if d.n_features != self.mean.shape[0]:
            raise ValueError("scaler dimension does not match dataset")
        return replace(d, x=(d.x - self.mean) / self.std)


def load_csv(
    path,
    label_column: str | None = None,
    time_column: str | None = None,
    event_column: str | None = None,
    integer_labels: bool = True,
) -> Dataset:
    """Load a comma-delimited UTF-8 file with a mandatory header row.

    Columns named by label/time/event are pulled out of the feature block.
    Any cell that does not parse as a number raises CsvParseError naming the
    data row (1-based, excluding the header) and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file, header row required")
        header = [h.strip() for h in header]
        rows = list(reader)

    special = {}
    for role, col in (("label", label_column), ("time", time_column),
                      ("event", event_column)):
        if col is None:
            continue
        if col not in header:
            raise ValueError(f"{role} column {col!r} not found in header")
        special[role] = header.index(col)

    feat_idx = [i for i in range(len(header)) if i not in special.values()]
    feature_names = tuple(header[i] for i in feat_idx)

    def parse(cell, r, c):
        try:
            return float(cell)
        except ValueError:
            raise CsvParseError(
                f"{path}: cannot parse {cell!r} at row {r}, column {header[c]!r}"
            ) from None

    n = len(rows)
    x = np.empty((n, len(feat_idx)), dtype=np.float64)
    y = np.empty(n, dtype=np.float64) if "label" in special else None
    time = np.empty(n, dtype=np.float64) if "time" in special else None
    event = np.empty(n, dtype=np.int64) if "event" in special else None
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise CsvParseError(
                f"{path}: row {r + 1} has {len(row)} cells, expected {len(header)}"
            )
        for j, c in enumerate(feat_idx):
            x[r, j] = parse(row[c], r + 1, c)
        if y is not None:
            y[r] = parse(row[special["label"]], r + 1, special["label"])
        if time is not None:
            time[r] = parse(row[special["time"]], r + 1, special["time"])
        if event is not None:
            c = special["event"]
            event[r] = int(parse(row[c], r + 1, c))

    if y is not None and integer_labels and np.allclose(y, np.round(y)):
        y = y.astype(np.int64)
    return Dataset(x=x, feature_names=feature_names, y=y, time=time, event=event)


def save_csv(d: Dataset, path, label_column="label",
             time_column="time", event_column="event") -> None:
    """Inverse of load_csv for generated datasets."""
    header = list(d.feature_names)
    cols = [d.x[:, j] for j in range(d.n_features)]
    if d.y is not None:
        header.append(label_column)
        cols.append(d.y)
    if d.time is not None:
        header.append(time_column)
        cols.append(d.time)
        header.append(event_column)
        cols.append(d.event)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(d.n_samples):
            w.writerow([repr(float(c[r])) if c.dtype.kind == "f"
                        else str(int(c[r])) for c in cols])


def standardize(d: Dataset) -> tuple[Dataset, ScalerParams]:
    """Center and scale each feature to mean 0, std 1 (population std).

    Constant features keep a divisor of 1 so they are merely centered.
    Returns the fitted params for applying to held-out data.
    """
    if d.n_samples < 2:
        raise ValueError("standardize needs at least 2 rows")
    mean = d.x.mean(axis=0)
    std = d.x.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    params = ScalerParams(mean=mean, std=std)
    return params.apply(d), params


def split(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test row partition, shuffled by seed.

    Categorical labels are stratified per class; survival and regression
    datasets get a plain shuffle.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = make_rng(seed)
    n = d.n_samples
    if d.categorical:
        test_idx = []
        train_idx = []
        for c in range(d.n_classes):
            members = np.flatnonzero(d.y == c)
            if members.size == 0:
                continue
            if members.size < 2:
                raise ValueError(
                    f"class {c} has fewer than 2 members; cannot stratify"
                )
            perm = rng.permutation(members)
            n_test = int(round(test_fraction * members.size))
            n_test = min(max(n_test, 1), members.size - 1)
            test_idx.append(perm[:n_test])
            train_idx.append(perm[n_test:])
        test_idx = np.sort(np.concatenate(test_idx))
        train_idx = np.sort(np.concatenate(train_idx))
    else:
        perm = rng.permutation(n)
        n_test = int(round(test_fraction * n))
        n_test = min(max(n_test, 1), n - 1)
        test_idx = np.sort(perm[:n_test])
        train_idx = np.sort(perm[n_test:])
    return d.take(train_idx), d.take(test_idx)


def make_classification(spec: SyntheticSpec) -> tuple[Dataset, np.ndarray]:
    """Ground-truth synthetic multiclass data.

    Class centroids sit at distinct hypercube vertices (coordinates
    +-class_sep) of the informative subspace; informative coordinates are
    unit Gaussians around the class centroid; the remaining columns are
    label-independent standard normal noise. Informative columns are
    scattered over the feature order and their positions returned as the
    ground truth. Bitwise reproducible for a fixed seed, and class_sep
    enters only as a multiplicative scale.
    """
    k, n_inf = spec.n_classes, spec.n_informative
    if n_inf < 64 and k > 2 ** n_inf:
        raise ValueError(
            f"{k} classes need {k} distinct vertices but only "
            f"{2 ** n_inf} exist in a {n_inf}-dim hypercube"
        )
    rng = make_rng(spec.seed)

    # Draw order is fixed: positions, vertices, labels, informative noise,
    # filler noise, row shuffle.
    positions = np.sort(rng.choice(spec.n_features, size=n_inf, replace=False))

    if n_inf < 64:
        codes = rng.choice(2 ** n_inf, size=k, replace=False)
        vertices = np.array(
            [[1.0 if (int(c) >> b) & 1 else -1.0 for b in range(n_inf)]
             for c in codes]
        )
    else:
        vertices = np.empty((0, n_inf))
        while vertices.shape[0] < k:
            v = rng.choice([-1.0, 1.0], size=(1, n_inf))
            if not any(np.array_equal(v[0], u) for u in vertices):
                vertices = np.vstack([vertices, v])

    counts = np.full(k, spec.n_samples // k, dtype=int)
    counts[: spec.n_samples % k] += 1
    labels = np.repeat(np.arange(k), counts)

    centroids = vertices * spec.class_sep
    informative = centroids[labels] + rng.standard_normal(
        (spec.n_samples, n_inf)
    )
    x = np.empty((spec.n_samples, spec.n_features))
    noise_cols = np.setdiff1d(np.arange(spec.n_features), positions)
    x[:, positions] = informative
    x[:, noise_cols] = rng.standard_normal((spec.n_samples, noise_cols.size))

    perm = rng.permutation(spec.n_samples)
    names = tuple(f"f{j}" for j in range(spec.n_features))
    d = Dataset(x=x[perm], feature_names=names, y=labels[perm].astype(np.int64))
    return d, positions
