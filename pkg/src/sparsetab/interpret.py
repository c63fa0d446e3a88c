"""Attention-derived feature importance and its evaluation.

Importance for ranking is the per-feature mean of the softmax attention
weights over a dataset (what actually gates the input); the raw learnable
attention vector is used only for L1 feature selection, where coefficients
are read directly. Fidelity is assessed by most/least-relevant-first
ablation with retraining, informative-vs-noise separation statistics on
ground-truth synthetic data, noise-scaling stability sweeps, and a targeted
random-walk neuron ablation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, SyntheticSpec, make_classification, split, standardize
from .maskgen import random_walk_mask
from .network import NetworkSpec, ParameterSet, collect_attention, standard_spec
from .numerics import make_rng, spawn_seeds
from .training import TrainConfig, evaluate, predict, train


@dataclass(frozen=True)
class ImportanceReport:
    """Per-feature mean attention weight with ranks (1 = most important)."""

    importance: np.ndarray
    ranks: np.ndarray
    feature_names: tuple[str, ...]
    raw_weights: np.ndarray
    provenance: dict

    def __post_init__(self):
        if np.any(self.importance < 0):
            raise ValueError("importances are post-softmax means, >= 0")
        if sorted(self.ranks) != list(range(1, len(self.ranks) + 1)):
            raise ValueError("ranks must be a permutation of 1..n")

    def order(self, descending: bool = True) -> np.ndarray:
        """Feature indices from most to least important (or reversed).

        Ties break toward the lower feature index for rank stability.
        """
        idx = np.lexsort((np.arange(len(self.importance)), -self.importance))
        return idx if descending else idx[::-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for k in sorted(self.provenance):
                fh.write(f"# {k}={self.provenance[k]}\n")
            w = csv.writer(fh)
            w.writerow(["feature", "importance", "rank", "raw_weight"])
            for i, name in enumerate(self.feature_names):
                w.writerow([name, repr(float(self.importance[i])),
                            int(self.ranks[i]),
                            repr(float(self.raw_weights[i]))])


def _pre_mix_attention_index(spec: NetworkSpec) -> int:
    for i, l in enumerate(spec.layers):
        if l.kind == "attention":
            return i
        if l.kind in ("sparse", "dense"):
            break
    raise ValueError("model lacks a pre-sparse attention layer")


def feature_importance(spec: NetworkSpec, params: ParameterSet,
                       dataset: Dataset, provenance: dict | None = None
                       ) -> ImportanceReport:
    """Mean attention weight per feature over the dataset (infer mode)."""
    att = _pre_mix_attention_index(spec)
    alphas = collect_attention(spec, params, dataset.x)
    importance = alphas[0].mean(axis=0)
    order = np.lexsort((np.arange(importance.size), -importance))
    ranks = np.empty(importance.size, dtype=int)
    ranks[order] = np.arange(1, importance.size + 1)
    prov = {"n_samples": dataset.n_samples}
    if provenance:
        prov.update(provenance)
    return ImportanceReport(
        importance=importance,
        ranks=ranks,
        feature_names=dataset.feature_names,
        raw_weights=params.layers[att]["w"].copy(),
        provenance=prov,
    )


@dataclass(frozen=True)
class SeparationStat:
    """Mean importance over informative vs noise features and their gap."""

    informative_mean: float
    noise_mean: float | None
    gap: float | None
    n_informative: int
    n_noise: int


def separation_stat(report: ImportanceReport, informative_indices
                    ) -> SeparationStat:
    inf = np.asarray(informative_indices, dtype=int)
    if inf.size == 0:
        raise ValueError("informative index set is empty")
    n = len(report.importance)
    noise = np.setdiff1d(np.arange(n), inf)
    inf_mean = float(report.importance[inf].mean())
    if noise.size == 0:
        return SeparationStat(inf_mean, None, None, inf.size, 0)
    noise_mean = float(report.importance[noise].mean())
    return SeparationStat(inf_mean, noise_mean, inf_mean - noise_mean,
                          inf.size, noise.size)


@dataclass(frozen=True)
class AblationCurve:
    """Metric after each cumulative removal; index 0 is the full model."""

    mode: str  # morf | lerf
    removed: tuple[int, ...]  # feature ids in removal order
    steps_evaluated: tuple[int, ...]
    metric_mean: tuple[float, ...]
    metric_sd: tuple[float, ...]
    metric_name: str = "accuracy"

    def __post_init__(self):
        if len(self.metric_mean) != len(self.steps_evaluated):
            raise ValueError("one metric value per evaluated step")

    def to_csv(self, path, meta: dict | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for k in sorted(meta or {}):
                fh.write(f"# {k}={meta[k]}\n")
            w = csv.writer(fh)
            w.writerow(["removed_count", "removed_feature", self.metric_name,
                        "sd"])
            for pos, step in enumerate(self.steps_evaluated):
                feat = "" if step == 0 else self.removed[step - 1]
                w.writerow([step, feat, repr(self.metric_mean[pos]),
                            repr(self.metric_sd[pos])])


def _retrain_metric(d: Dataset, spec_builder, config: TrainConfig,
                    repeats: int, seed: int, test_fraction: float):
    """Mean/sd test metric over repeats with fresh splits and inits."""
    vals = []
    for rep_seed in spawn_seeds(seed, repeats):
        tr, te = split(d, test_fraction, rep_seed)
        spec = spec_builder(tr, rep_seed)
        params, _ = train(spec, tr, replace(config, seed=rep_seed))
        vals.append(evaluate(spec, params, te))
    return float(np.mean(vals)), float(np.std(vals))


def _ablation(mode: str, dataset: Dataset, spec_builder,
              importance: ImportanceReport, steps: int, repeats: int,
              seed: int, config: TrainConfig, test_fraction: float,
              eval_steps) -> AblationCurve:
    if steps >= dataset.n_features:
        raise ValueError("cannot remove every feature")
    if len(importance.importance) != dataset.n_features:
        raise ValueError("importance report does not cover dataset features")
    order = importance.order(descending=(mode == "morf"))[:steps]
    if eval_steps is None:
        eval_steps = range(steps + 1)
    eval_steps = tuple(int(s) for s in eval_steps)
    means, sds = [], []
    for step in eval_steps:
        keep = np.setdiff1d(np.arange(dataset.n_features), order[:step])
        reduced = dataset.select_features(keep)
        m, s = _retrain_metric(reduced, spec_builder, config, repeats, seed,
                               test_fraction)
        means.append(m)
        sds.append(s)
    return AblationCurve(mode=mode, removed=tuple(int(i) for i in order),
                         steps_evaluated=eval_steps,
                         metric_mean=tuple(means), metric_sd=tuple(sds))


def morf(dataset: Dataset, spec_builder, importance: ImportanceReport,
         steps: int, repeats: int, seed: int,
         config: TrainConfig = TrainConfig(), test_fraction: float = 0.2,
         eval_steps=None) -> AblationCurve:
    """Most-relevant-first: iteratively drop the most important remaining
    feature (order frozen from the supplied full-model report), rebuild the
    mask on the reduced feature set via spec_builder and retrain.
    """
    return _ablation("morf", dataset, spec_builder, importance, steps,
                     repeats, seed, config, test_fraction, eval_steps)


def lerf(dataset: Dataset, spec_builder, importance: ImportanceReport,
         steps: int, repeats: int, seed: int,
         config: TrainConfig = TrainConfig(), test_fraction: float = 0.2,
         eval_steps=None) -> AblationCurve:
    """Least-relevant-first counterpart of morf."""
    return _ablation("lerf", dataset, spec_builder, importance, steps,
                     repeats, seed, config, test_fraction, eval_steps)


def noise_stability_sweep(base_spec: SyntheticSpec, n_noise_list,
                          repeats: int, seed: int,
                          config: TrainConfig = TrainConfig(),
                          attention_kind: str = "scaled_dot",
                          hidden_units: int = 100) -> list[dict]:
    """Regenerate synthetic data with a fixed informative count and a
    growing noise block; train and record separation statistics per point.

    Returns one row per noise count with repeat means and sds.
    """
    if list(n_noise_list) != sorted(n_noise_list):
        raise ValueError("n_noise_list must be ascending")
    rows = []
    point_seeds = spawn_seeds(seed, len(list(n_noise_list)))
    for n_noise, pseed in zip(n_noise_list, point_seeds):
        spec_d = replace(base_spec,
                         n_features=base_spec.n_informative + int(n_noise))
        inf_means, noise_means, gaps = [], [], []
        for rep_seed in spawn_seeds(pseed, repeats):
            d, truth = make_classification(replace(spec_d, seed=rep_seed))
            d, _ = standardize(d)
            tr, _ = split(d, 0.2, rep_seed)
            net = standard_spec(tr.n_features, spec_d.n_classes, "softmax",
                                attention_kind=attention_kind,
                                hidden_units=hidden_units)
            params, _ = train(net, tr, replace(config, seed=rep_seed))
            stat = separation_stat(
                feature_importance(net, params, tr), truth)
            inf_means.append(stat.informative_mean)
            if stat.noise_mean is not None:
                noise_means.append(stat.noise_mean)
                gaps.append(stat.gap)
        rows.append({
            "n_noise": int(n_noise),
            "informative_mean": float(np.mean(inf_means)),
            "informative_sd": float(np.std(inf_means)),
            "noise_mean": float(np.mean(noise_means)) if noise_means else None,
            "gap_mean": float(np.mean(gaps)) if gaps else None,
            "gap_sd": float(np.std(gaps)) if gaps else None,
        })
    return rows


def write_rows_csv(rows: list[dict], path, meta: dict | None = None) -> None:
    """Dict rows to CSV with `#`-prefixed metadata header lines."""
    if not rows:
        raise ValueError("no rows to write")
    keys = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for k in sorted(meta or {}):
            fh.write(f"# {k}={meta[k]}\n")
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow(["" if r[k] is None else r[k] for k in keys])


def select_features(spec: NetworkSpec, params: ParameterSet,
                    threshold: float = 1e-6) -> np.ndarray:
    """Indices whose raw (pre-softmax) attention weight magnitude exceeds
    the threshold. Meaningful on models trained with an L1-penalized
    attention vector, where unneeded coefficients are driven to exact zero.
    """
    att = _pre_mix_attention_index(spec)
    w = params.layers[att]["w"]
    return np.flatnonzero(np.abs(w) > threshold)


DEFAULT_L1_GRID = (1e-7, 5e-7, 1e-6, 5e-6, 1e-5, 5e-5, 1e-4, 5e-4,
                   1e-3, 5e-3)


def selection_sweep(dataset: Dataset, lambdas, repeats: int, seed: int,
                    spec_builder, config: TrainConfig = TrainConfig(),
                    threshold: float = 1e-6,
                    test_fraction: float = 0.2) -> list[dict]:
    """L1 strength sweep: per lambda, train with the penalty, read the
    surviving attention coefficients, then retrain on the selected feature
    subset and record downstream accuracy next to the full-feature baseline.
    """
    rows = []
    lam_seeds = spawn_seeds(seed, len(list(lambdas)) + 1)
    baseline_mean, baseline_sd = _retrain_metric(
        dataset, spec_builder, config, repeats, lam_seeds[-1], test_fraction)
    for lam, lseed in zip(lambdas, lam_seeds):
        counts, downstream, selected_sets = [], [], []
        for rep_seed in spawn_seeds(lseed, repeats):
            tr, te = split(dataset, test_fraction, rep_seed)
            spec = spec_builder(tr, rep_seed)
            params, _ = train(
                spec, tr, replace(config, seed=rep_seed, l1_attention=lam))
            sel = select_features(spec, params, threshold)
            counts.append(sel.size)
            selected_sets.append(sel)
            if sel.size == 0:
                continue
            reduced_tr = tr.select_features(sel)
            reduced_te = te.select_features(sel)
            rspec = spec_builder(reduced_tr, rep_seed)
            rparams, _ = train(rspec, reduced_tr, replace(config, seed=rep_seed))
            downstream.append(evaluate(rspec, rparams, reduced_te))
        rows.append({
            "lambda": float(lam),
            "selected_mean": float(np.mean(counts)),
            "selected_sd": float(np.std(counts)),
            "downstream_mean": float(np.mean(downstream)) if downstream else None,
            "downstream_sd": float(np.std(downstream)) if downstream else None,
            "baseline_mean": baseline_mean,
            "baseline_sd": baseline_sd,
            "selected_union": sorted(
                {int(i) for s in selected_sets for i in s}),
        })
    return rows


def _binary_confusion(out, y, positive):
    pred_pos = (out.argmax(axis=1) == positive) if out.shape[1] > 1 \
        else (out.reshape(-1) >= 0.5)
    if out.shape[1] > 1:
        true_pos = y == positive
    else:
        true_pos = y == 1
        pred_pos = pred_pos.astype(bool)
    fp = int((pred_pos & ~true_pos).sum())
    fn = int((~pred_pos & true_pos).sum())
    return fp, fn


@dataclass(frozen=True)
class WalkAblationSummary:
    feature_tally: dict
    targeted: tuple[int, ...]
    random_baseline: tuple[int, ...]
    metrics_targeted: dict
    metrics_random: dict
    repeats: int


def walk_ablation(dataset: Dataset, repeats: int = 100, seed: int = 0,
                  config: TrainConfig = TrainConfig(), n_remove: int = 5,
                  walk_params: dict | None = None,
                  test_fraction: float = 0.2,
                  attention_kind: str = "scaled_dot",
                  eval_repeats: int | None = None) -> WalkAblationSummary:
    """Targeted ablation of the features driving the top random walk.

    Per repeat (fresh split, fresh walks): train a model with a second
    attention layer after the masked layer, pick the unit with the highest
    mean attention, and tally that walk's member features. The n_remove
    most frequent features are then removed and the retrained performance
    is compared against removing n_remove uniformly random features.
    """
    wp = {"r": 3, "t": 5, "p": 1.0, "q": 1.0, "threshold": 0.5}
    wp.update(walk_params or {})
    positive = None
    if dataset.categorical and dataset.n_classes > 2:
        counts = np.bincount(dataset.y)
        positive = int(counts.argmax())

    def build(d: Dataset, s: int, post: bool) -> NetworkSpec:
        mask = random_walk_mask(d.x, seed=s, **wp)
        head = "softmax" if (d.categorical and d.n_classes > 2) else "sigmoid"
        n_out = d.n_classes if head == "softmax" else 1
        return standard_spec(d.n_features, n_out, head, mask=mask,
                             attention_kind=attention_kind,
                             post_sparse_attention=post)

    tally: dict[int, int] = {}
    rep_seeds = spawn_seeds(seed, repeats)
    for rep_seed in rep_seeds:
        tr, _ = split(dataset, test_fraction, rep_seed)
        spec = build(tr, rep_seed, post=True)
        params, _ = train(spec, tr, replace(config, seed=rep_seed))
        alphas = collect_attention(spec, params, tr.x)
        unit = int(alphas[1].mean(axis=0).argmax())
        mask = next(l.mask for l in spec.layers if l.kind == "sparse")
        for feat in np.flatnonzero(mask.a[:, unit]):
            tally[int(feat)] = tally.get(int(feat), 0) + 1

    if len(tally) < n_remove:
        raise ValueError(
            f"only {len(tally)} distinct features appear in top walks; "
            f"need {n_remove}"
        )
    targeted = tuple(sorted(tally, key=lambda f: (-tally[f], f))[:n_remove])
    rng_seed, arm_seed = spawn_seeds(seed + 1, 2)
    random_pick = tuple(
        int(i) for i in make_rng(rng_seed).choice(
            dataset.n_features, size=n_remove, replace=False)
    )

    def removed_metrics(remove: tuple[int, ...]) -> dict:
        keep = np.setdiff1d(np.arange(dataset.n_features), remove)
        reduced = dataset.select_features(keep)
        accs, fps, fns = [], [], []
        n_eval = eval_repeats if eval_repeats is not None else repeats
        for rep_seed in spawn_seeds(arm_seed, n_eval):
            tr, te = split(reduced, test_fraction, rep_seed)
            spec = build(tr, rep_seed, post=False)
            params, _ = train(spec, tr, replace(config, seed=rep_seed))
            out = predict(spec, params, te.x)
            accs.append(evaluate(spec, params, te))
            fp, fn = _binary_confusion(out, te.y, positive)
            fps.append(fp)
            fns.append(fn)
        return {"accuracy_mean": float(np.mean(accs)),
                "accuracy_sd": float(np.std(accs)),
                "false_positives_mean": float(np.mean(fps)),
                "false_negatives_mean": float(np.mean(fns))}

    return WalkAblationSummary(
        feature_tally=dict(sorted(tally.items())),
        targeted=targeted,
        random_baseline=random_pick,
        metrics_targeted=removed_metrics(targeted),
        metrics_random=removed_metrics(random_pick),
        repeats=repeats,
    )
