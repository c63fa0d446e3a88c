"""Experiment command line.

One executable covering synthesis, mask generation, training, evaluation,
importance and ablation studies, L1 feature selection, transfer and
survival analysis. Every command is a pure function of (config, input
files, seed): outputs land under the configured directory together with a
run manifest (config hash, seed, versions, file hashes), and re-running the
same manifest reproduces every output file bitwise. Reporting commands
render a PNG figure next to each delimited output (disable with
--no-plots).
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    Dataset,
    ScalerParams,
    SyntheticSpec,
    load_csv,
    make_classification,
    save_csv,
    split,
    standardize,
)
from .interpret import (
    DEFAULT_L1_GRID,
    feature_importance,
    lerf,
    morf,
    selection_sweep,
    walk_ablation,
)
from .maskgen import (
    dense_mask,
    groups_to_mask,
    kmeans_mask,
    load_grouping_csv,
    random_walk_mask,
    save_mask,
)
from .network import (
    load_model,
    load_model_extras,
    save_model,
    standard_spec,
)
from .numerics import make_rng, spawn_seeds
from .training import TrainConfig, evaluate, train
from .transfer import (
    FrozenTrunk,
    align_features,
    fine_tune,
    linear_probe,
    extract_features,
    write_alignment_report,
)


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "task": "multiclass",  # binary | multiclass | survival
    "data": {
        "csv": None,
        "label_column": "label",
        "time_column": None,
        "event_column": None,
        "synthetic": None,
    },
    "mask": {
        "source": "dense",  # dense | grouping | random_walk | kmeans
        "grouping_csv": None,
        "units": 100,
        "r": 3,
        "t": 5,
        "p": 1.0,
        "q": 1.0,
        "threshold": 0.5,
        "k": "elbow",
    },
    "network": {
        "attention_kind": "scaled_dot",
        "hidden_activation": "tanh",
        "dense_units": 64,
        "dropout": 0.3,
        "post_sparse_attention": False,
    },
    "train": TrainConfig().to_dict(),
    "evaluation": {"repeats": 10, "test_fraction": 0.2, "steps": 10},
    "standardize": True,
    "seed": 0,
    "out": "run",
}

SYNTH_KEYS = {"n_samples", "n_features", "n_informative", "n_classes",
              "class_sep", "seed"}
TASKS = ("binary", "multiclass", "survival")
MASK_SOURCES = ("dense", "grouping", "random_walk", "kmeans")


def _validate(user: dict, allowed: dict, path: str = "") -> None:
    for key, value in user.items():
        where = f"{path}{key}"
        if key not in allowed:
            raise ConfigError(f"unknown config key '{where}'")
        if key == "synthetic":
            if value is None:
                continue
            for k in value:
                if k not in SYNTH_KEYS:
                    raise ConfigError(f"unknown config key '{where}.{k}'")
        elif isinstance(allowed[key], dict) and isinstance(value, dict):
            _validate(value, allowed[key], where + ".")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) \
                and k != "synthetic":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        _validate(user, DEFAULT_CONFIG)
        cfg = _merge(cfg, user)
    cfg = _merge(cfg, overrides)  # flags win over file values
    if cfg["task"] not in TASKS:
        raise ConfigError(f"unknown config value task={cfg['task']!r}")
    if cfg["mask"]["source"] not in MASK_SOURCES:
        raise ConfigError(
            f"unknown config value mask.source={cfg['mask']['source']!r}")
    return cfg


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: dict) -> str:
    hashed = {k: v for k, v in cfg.items() if k != "out"}
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: dict,
                   inputs: list, outputs: list) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {
            "sparsetab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {name: _sha256(out_dir / name) for name in outputs},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def resolve_dataset(cfg: dict) -> tuple[Dataset, np.ndarray | None, list]:
    """Dataset per config plus ground-truth indices (synthetic only) and
    the input files consumed."""
    d = cfg["data"]
    if d["synthetic"] is not None:
        spec = SyntheticSpec(**d["synthetic"])
        ds, truth = make_classification(spec)
        if cfg["task"] == "binary":
            ds = ds.with_labels((ds.y >= spec.n_classes // 2).astype(np.int64))
        elif cfg["task"] == "survival":
            raise ConfigError("synthetic data does not support survival tasks")
        return ds, truth, []
    if d["csv"] is None:
        raise ConfigError("config needs data.csv or data.synthetic")
    if cfg["task"] == "survival":
        ds = load_csv(d["csv"], label_column=None,
                      time_column=d["time_column"] or "time",
                      event_column=d["event_column"] or "event")
    else:
        ds = load_csv(d["csv"], label_column=d["label_column"])
    return ds, None, [d["csv"]]


def build_mask(cfg: dict, d: Dataset, seed: int):
    m = cfg["mask"]
    if m["source"] == "dense":
        return dense_mask(d.n_features, m["units"], d.feature_names)
    if m["source"] == "random_walk":
        return random_walk_mask(d.x, r=m["r"], t=m["t"], p=m["p"], q=m["q"],
                                threshold=m["threshold"], seed=seed,
                                feature_names=d.feature_names)
    if m["source"] == "kmeans":
        return kmeans_mask(d.x, k=m["k"], seed=seed,
                           feature_names=d.feature_names)
    if m["grouping_csv"] is None:
        raise ConfigError("mask.source=grouping requires mask.grouping_csv")
    pairs = load_grouping_csv(m["grouping_csv"])
    present = set(d.feature_names)
    pairs = [(f, g) for f, g in pairs if f in present]
    return groups_to_mask(pairs, d.feature_names)


def _head_for_task(task: str, d: Dataset) -> tuple[str, int]:
    if task == "multiclass":
        return "softmax", d.n_classes
    if task == "binary":
        return "sigmoid", 1
    return "linear", 1


def build_spec(cfg: dict, d: Dataset, mask):
    head, n_out = _head_for_task(cfg["task"], d)
    net = cfg["network"]
    return standard_spec(
        d.n_features, n_out, head, mask=mask,
        attention_kind=net["attention_kind"],
        hidden_units=cfg["mask"]["units"],
        hidden_activation=net["hidden_activation"],
        dense_units=net["dense_units"],
        dropout=net["dropout"],
        post_sparse_attention=net["post_sparse_attention"],
    )


def make_spec_builder(cfg: dict):
    """Builder for retraining pipelines: rebuilds the mask on whatever
    (reduced) training set it receives."""

    def builder(train_ds: Dataset, seed: int):
        return build_spec(cfg, train_ds, build_mask(cfg, train_ds, seed))

    return builder


def train_config(cfg: dict, seed: int) -> TrainConfig:
    tc = dict(cfg["train"])
    tc["seed"] = seed
    return TrainConfig.from_dict(tc)


def _prepare(cfg: dict):
    """Shared train-command plumbing: load, split, standardize, mask."""
    full, truth, inputs = resolve_dataset(cfg)
    split_seed, mask_seed, train_seed = spawn_seeds(cfg["seed"], 3)
    tr, te = split(full, cfg["evaluation"]["test_fraction"], split_seed)
    scaler = None
    if cfg["standardize"]:
        tr, scaler = standardize(tr)
        te = scaler.apply(te)
    mask = build_mask(cfg, tr, mask_seed)
    return full, tr, te, scaler, mask, truth, inputs, train_seed


def _apply_scaler_from_extras(extras: dict, ds: Dataset) -> Dataset:
    if extras.get("scaler_mean") is None:
        return ds
    scaler = ScalerParams(mean=np.array(extras["scaler_mean"]),
                          std=np.array(extras["scaler_std"]))
    return scaler.apply(ds)


def _standardized_full(cfg: dict):
    full, truth, inputs = resolve_dataset(cfg)
    if cfg["standardize"]:
        full, _ = standardize(full)
    return full, truth, inputs


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(cfg: dict, out: Path, plots: bool, threads: int) -> list:
    if cfg["data"]["synthetic"] is None:
        raise ConfigError("synth requires data.synthetic parameters")
    ds, truth, _ = resolve_dataset(cfg)
    save_csv(ds, out / "data.csv")
    with open(out / "informative_indices.csv", "w", encoding="utf-8") as fh:
        fh.write("informative_index\n")
        for i in truth:
            fh.write(f"{int(i)}\n")
    return ["data.csv", "informative_indices.csv"]


def cmd_mask(cfg: dict, out: Path, plots: bool, threads: int) -> list:
    full, _, inputs = _standardized_full(cfg)
    mask = build_mask(cfg, full, cfg["seed"])
    save_mask(mask, out / "mask.csv")
    return ["mask.csv", "mask.csv.meta.json"], inputs


def cmd_train(cfg: dict, out: Path, plots: bool, threads: int):
    full, tr, te, scaler, mask, truth, inputs, train_seed = _prepare(cfg)
    spec = build_spec(cfg, tr, mask)
    params, history = train(spec, tr, train_config(cfg, train_seed),
                            eval_data=te)
    extras = {
        "task": cfg["task"],
        "feature_names": list(tr.feature_names),
        "scaler_mean": None if scaler is None else list(scaler.mean),
        "scaler_std": None if scaler is None else list(scaler.std),
    }
    save_model(spec, params, out / "model.bin", extras=extras)
    history.to_csv(out / "history.csv")
    metrics = {
        "final_train_loss": history.loss[-1],
        "test_metric": history.val_metric[-1],
        "metric_name": history.metric_name,
        "n_train": tr.n_samples,
        "n_test": te.n_samples,
    }
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = ["model.bin", "history.csv", "metrics.json"]
    if plots:
        from .plots import save_history_plot

        save_history_plot(history, out / "history.png")
        outputs.append("history.png")
    return outputs, inputs


def _load_model_for_data(model_path: str, cfg: dict):
    spec, params = load_model(model_path)
    extras = load_model_extras(model_path)
    ds, truth, inputs = resolve_dataset(cfg)
    if extras.get("feature_names") and \
            list(ds.feature_names) != extras["feature_names"]:
        ds, _ = align_features(extras["feature_names"], ds)
    ds = _apply_scaler_from_extras(extras, ds)
    return spec, params, extras, ds, truth, inputs + [model_path]


def cmd_eval(cfg: dict, out: Path, plots: bool, threads: int,
             model_path: str):
    spec, params, extras, ds, _, inputs = _load_model_for_data(model_path, cfg)
    repeats = cfg["evaluation"]["repeats"]
    frac = cfg["evaluation"]["test_fraction"]
    n_fold = max(2, int(round(frac * ds.n_samples)))

    def one(seed: int) -> float:
        idx = make_rng(seed).choice(ds.n_samples, size=n_fold, replace=False)
        return evaluate(spec, params, ds.take(np.sort(idx)))

    seeds = spawn_seeds(cfg["seed"], repeats)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        values = list(pool.map(one, seeds))
    name = "c_index" if spec.head == "linear" else "accuracy"
    metrics = {
        "metric_name": name,
        "values": values,
        "mean": float(np.mean(values)),
        "sd": float(np.std(values)),
        "repeats": repeats,
    }
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = ["metrics.json"]
    if plots:
        from .plots import save_metric_plot

        save_metric_plot(values, name, out / "metrics.png")
        outputs.append("metrics.png")
    return outputs, inputs


def cmd_importance(cfg: dict, out: Path, plots: bool, threads: int,
                   model_path: str):
    spec, params, extras, ds, _, inputs = _load_model_for_data(model_path, cfg)
    report = feature_importance(
        spec, params, ds,
        provenance={"model": Path(model_path).name,
                    "config_hash": config_hash(cfg)},
    )
    report.to_csv(out / "importance.csv")
    outputs = ["importance.csv"]
    if plots:
        from .plots import save_importance_plot

        save_importance_plot(report, out / "importance.png")
        outputs.append("importance.png")
    return outputs, inputs


def cmd_ablate(cfg: dict, out: Path, plots: bool, threads: int, mode: str):
    full, truth, inputs = _standardized_full(cfg)
    repeats = cfg["evaluation"]["repeats"]
    frac = cfg["evaluation"]["test_fraction"]
    tc = train_config(cfg, cfg["seed"])
    if mode == "walk":
        summary = walk_ablation(full, repeats=repeats, seed=cfg["seed"],
                                config=tc, test_fraction=frac,
                                walk_params={k: cfg["mask"][k]
                                             for k in ("r", "t", "p", "q",
                                                       "threshold")})
        payload = {
            "feature_tally": {str(k): v
                              for k, v in summary.feature_tally.items()},
            "targeted_features": list(summary.targeted),
            "random_features": list(summary.random_baseline),
            "metrics_targeted": summary.metrics_targeted,
            "metrics_random": summary.metrics_random,
            "repeats": summary.repeats,
        }
        with open(out / "walk_ablation.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs = ["walk_ablation.json"]
        if plots:
            from .plots import save_comparison_plot

            save_comparison_plot(
                {"targeted": (summary.metrics_targeted["accuracy_mean"],
                              summary.metrics_targeted["accuracy_sd"]),
                 "random": (summary.metrics_random["accuracy_mean"],
                            summary.metrics_random["accuracy_sd"])},
                "accuracy", out / "walk_ablation.png")
            outputs.append("walk_ablation.png")
        return outputs, inputs

    fit_seed, curve_seed = spawn_seeds(cfg["seed"], 2)
    builder = make_spec_builder(cfg)
    tr, te = split(full, frac, fit_seed)
    spec = builder(tr, fit_seed)
    params, _ = train(spec, tr, replace(tc, seed=fit_seed))
    report = feature_importance(spec, params, tr)
    fn = morf if mode == "morf" else lerf
    curve = fn(full, builder, report, steps=cfg["evaluation"]["steps"],
               repeats=repeats, seed=curve_seed, config=tc,
               test_fraction=frac)
    curve.to_csv(out / f"ablation_{mode}.csv",
                 meta={"seed": cfg["seed"], "config_hash": config_hash(cfg)})
    outputs = [f"ablation_{mode}.csv"]
    if plots:
        from .plots import save_ablation_plot

        save_ablation_plot(curve, out / f"ablation_{mode}.png")
        outputs.append(f"ablation_{mode}.png")
    return outputs, inputs


def cmd_select(cfg: dict, out: Path, plots: bool, threads: int,
               lambdas: list[float] | None):
    full, truth, inputs = _standardized_full(cfg)
    grid = lambdas if lambdas else list(DEFAULT_L1_GRID)
    rows = selection_sweep(
        full, grid, repeats=cfg["evaluation"]["repeats"], seed=cfg["seed"],
        spec_builder=make_spec_builder(cfg),
        config=train_config(cfg, cfg["seed"]),
        test_fraction=cfg["evaluation"]["test_fraction"],
    )
    with open(out / "selection.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# seed={cfg['seed']}\n")
        fh.write(f"# config_hash={config_hash(cfg)}\n")
        fh.write("lambda,selected_mean,selected_sd,downstream_mean,"
                 "downstream_sd,baseline_mean,selected_union\n")
        for r in rows:
            down = "" if r["downstream_mean"] is None else repr(
                r["downstream_mean"])
            dsd = "" if r["downstream_sd"] is None else repr(r["downstream_sd"])
            union = ";".join(str(i) for i in r["selected_union"])
            fh.write(f"{r['lambda']!r},{r['selected_mean']!r},"
                     f"{r['selected_sd']!r},{down},{dsd},"
                     f"{r['baseline_mean']!r},{union}\n")
    outputs = ["selection.csv"]
    if plots:
        from .plots import save_selection_plot

        save_selection_plot(rows, out / "selection.png")
        outputs.append("selection.png")
    return outputs, inputs


def cmd_transfer(cfg: dict, out: Path, plots: bool, threads: int,
                 model_path: str, mode: str):
    spec, params = load_model(model_path)
    extras = load_model_extras(model_path)
    target, _, inputs = resolve_dataset(cfg)
    outputs = []
    if extras.get("feature_names") and \
            list(target.feature_names) != extras["feature_names"]:
        target, report = align_features(extras["feature_names"], target)
        write_alignment_report(report, out / "alignment.csv")
        outputs.append("alignment.csv")
    target = _apply_scaler_from_extras(extras, target)
    trunk = FrozenTrunk.from_model(spec, params, drop_last=2)
    digest_before = trunk.digest()
    tc = train_config(cfg, cfg["seed"])
    frac = cfg["evaluation"]["test_fraction"]
    tr, te = split(target, frac, cfg["seed"])
    if mode == "finetune":
        head, n_out = _head_for_task(cfg["task"], target)
        model, history = fine_tune(trunk, tr, tc, head=head, n_outputs=n_out)
        metric = model.evaluate(te)
        name = "c_index" if head == "linear" else "accuracy"
        metrics = {"mode": mode, "metric_name": name, "test_metric": metric}
    else:  # probe
        feats = extract_features(trunk, target.x)
        _, _, probe_metrics = linear_probe(feats, target.y, tc,
                                           test_fraction=frac)
        metrics = {"mode": mode, "metric_name": "accuracy", **probe_metrics}
    metrics["trunk_digest_before"] = digest_before
    metrics["trunk_digest_after"] = trunk.digest()
    metrics["trunk_frozen"] = digest_before == metrics["trunk_digest_after"]
    with open(out / "transfer_metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append("transfer_metrics.json")
    return outputs, inputs + [model_path]


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="parallel folds where supported")
    p.add_argument("--no-plots", action="store_true",
                   help="skip figure rendering")
    p.add_argument("--no-standardize", action="store_true",
                   help="disable feature standardization")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsetab",
        description="sparse interpretable tabular networks: experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--samples", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--informative", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--sep", type=float)
    _add_common(p)

    p = sub.add_parser("mask", help="build a connectivity mask")
    _add_common(p)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--model", required=True)
    _add_common(p)

    p = sub.add_parser("importance", help="attention feature importance")
    p.add_argument("--model", required=True)
    _add_common(p)

    p = sub.add_parser("ablate", help="feature ablation studies")
    p.add_argument("--mode", choices=("morf", "lerf", "walk"),
                   default="morf")
    p.add_argument("--steps", type=int)
    _add_common(p)

    p = sub.add_parser("select", help="L1 attention feature selection sweep")
    p.add_argument("--lambdas", help="comma-separated L1 strengths")
    _add_common(p)

    p = sub.add_parser("transfer", help="fine-tune or probe a frozen model")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("finetune", "probe"),
                   default="finetune")
    _add_common(p)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.out is not None:
        o["out"] = args.out
    if args.no_standardize:
        o["standardize"] = False
    if args.command == "synth":
        synth = {}
        for flag, key in (("samples", "n_samples"), ("features", "n_features"),
                          ("informative", "n_informative"),
                          ("classes", "n_classes"), ("sep", "class_sep")):
            v = getattr(args, flag)
            if v is not None:
                synth[key] = v
        if synth:
            synth.setdefault("seed", o.get("seed", 0))
            o["data"] = {"synthetic": synth}
    if args.command == "ablate" and args.steps is not None:
        o["evaluation"] = {"steps": args.steps}
    return o


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config, _overrides(args))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    plots = not args.no_plots
    threads = max(1, args.threads)

    if args.command == "synth":
        result = cmd_synth(cfg, out, plots, threads)
    elif args.command == "mask":
        result = cmd_mask(cfg, out, plots, threads)
    elif args.command == "train":
        result = cmd_train(cfg, out, plots, threads)
    elif args.command == "eval":
        result = cmd_eval(cfg, out, plots, threads, args.model)
    elif args.command == "importance":
        result = cmd_importance(cfg, out, plots, threads, args.model)
    elif args.command == "ablate":
        result = cmd_ablate(cfg, out, plots, threads, args.mode)
    elif args.command == "select":
        lambdas = None
        if args.lambdas:
            lambdas = [float(v) for v in args.lambdas.split(",") if v]
        result = cmd_select(cfg, out, plots, threads, lambdas)
    else:
        result = cmd_transfer(cfg, out, plots, threads, args.model, args.mode)

    if isinstance(result, tuple):
        outputs, inputs = result
    else:
        outputs, inputs = result, []
    write_manifest(out, args.command, cfg, inputs, outputs)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # single-line machine-parsable failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
