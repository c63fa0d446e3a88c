"""Losses, Adam, the mini-batch training loop and evaluation metrics.

Supported objectives: categorical cross-entropy (softmax head), binary
cross-entropy (sigmoid head) and the negative Cox partial log-likelihood
with Breslow tie handling (linear risk head). Loss functions return the
gradient with respect to the network's pre-head output, so the training
loop composes them directly with the exact backward pass.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .network import (
    DivergenceError,
    NetworkSpec,
    ParameterSet,
    backward,
    forward,
    init_params,
)
from .numerics import make_rng, spawn_seeds

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l1_attention: float = 0.0
    l1_all_layers: bool = False
    seed: int = 0
    shuffle: bool = True
    full_batch_survival: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l1_attention < 0:
            raise ValueError("l1_attention must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainHistory:
    loss: tuple[float, ...]
    val_metric: tuple[float, ...] | None = None
    metric_name: str = ""

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "val_metric"])
            for e, l in enumerate(self.loss):
                val = "" if self.val_metric is None else repr(self.val_metric[e])
                w.writerow([e + 1, repr(l), val])


def categorical_cross_entropy(probs, labels):
    """Mean -log p at the true class; gradient w.r.t. pre-softmax logits."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    b = probs.shape[0]
    if labels.shape != (b,):
        raise ValueError("labels must be one class index per row")
    p_true = np.maximum(probs[np.arange(b), labels], PROB_FLOOR)
    loss = float(-np.log(p_true).mean())
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), labels] = 1.0
    return loss, (probs - onehot) / b


def binary_cross_entropy(p, y):
    """Mean binary cross-entropy; gradient w.r.t. the sigmoid logit."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    b = p.shape[0]
    pc = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    loss = float(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).mean())
    return loss, (p - y) / b


def cox_breslow_loss(risks, times, events):
    """Negative Cox partial log-likelihood with Breslow tie handling.

    loss = -sum over events i of [eta_i - log sum_{j: t_j >= t_i} exp(eta_j)];
    tied event times share the full common risk set. One descending sort,
    cumulative log-sum-exp for the risk sets and an exact analytic gradient.
    """
    eta = np.asarray(risks, dtype=np.float64).reshape(-1)
    t = np.asarray(times, dtype=np.float64).reshape(-1)
    d = np.asarray(events, dtype=np.float64).reshape(-1)
    n = eta.shape[0]
    if t.shape[0] != n or d.shape[0] != n:
        raise ValueError("risks, times and events must have equal length")
    if d.sum() == 0:
        raise ValueError("no events in batch; partial likelihood undefined")

    order = np.argsort(-t, kind="stable")
    t_s, eta_s, d_s = t[order], eta[order], d[order]
    shift = eta_s.max()
    lse = np.logaddexp.accumulate(eta_s - shift) + shift

    # Ties share the risk set of the last (smallest index distance from the
    # end of the block) tied position: everything with t_j >= t_i.
    block_last = np.empty(n, dtype=int)
    block_first = np.empty(n, dtype=int)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and t_s[j + 1] == t_s[i]:
            j += 1
        block_last[i : j + 1] = j
        block_first[i : j + 1] = i
        i = j + 1
    risk_lse = lse[block_last]

    loss = float(-np.sum(d_s * (eta_s - risk_lse)))

    inv_s = d_s * np.exp(-(risk_lse - shift))
    suffix = np.cumsum(inv_s[::-1])[::-1]
    grad_s = -d_s + np.exp(eta_s - shift) * suffix[block_first]
    grad = np.empty(n)
    grad[order] = grad_s
    return loss, grad


@dataclass(frozen=True)
class AdamState:
    t: int
    m: tuple[dict, ...]
    v: tuple[dict, ...]

    @classmethod
    def zeros(cls, params: ParameterSet) -> "AdamState":
        zero = tuple(
            {k: np.zeros_like(v) for k, v in layer.items()}
            for layer in params.layers
        )
        return cls(t=0, m=zero,
                   v=tuple({k: np.zeros_like(v) for k, v in layer.items()}
                           for layer in params.layers))


def adam_step(spec: NetworkSpec, params: ParameterSet, grads,
              state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update returning new params and state.

    With l1_attention > 0, the subgradient lambda * sign(w) is added to the
    attention-vector gradients, plus a proximal soft-threshold after the
    move, preconditioned like the step itself: lr * lambda / (sqrt(v_hat)
    + eps). The subgradient alone leaves coefficients oscillating at about
    lr * (1-beta1)/(1+beta1) around zero under Adam and never below 1e-6;
    the preconditioned snap drives penalized dead coordinates to exact
    zero (their v_hat settles near lambda^2, so the threshold reaches lr)
    while data-dominated coordinates (v_hat >> lambda^2) are barely
    shrunk. l1_all_layers extends the penalty to every weight matrix.
    Masked sparse entries are re-zeroed after the update.
    """
    t = state.t + 1
    lr, b1, b2, eps = (config.learning_rate, config.beta1, config.beta2,
                       config.epsilon)
    lam = config.l1_attention
    new_layers, new_m, new_v = [], [], []
    for l, p, g, m, v in zip(spec.layers, params.layers, grads,
                             state.m, state.v):
        pl, ml, vl = {}, {}, {}
        for key in p:
            gk = g[key]
            penalized = lam > 0.0 and key == "w" and (
                l.kind == "attention" or config.l1_all_layers)
            if penalized:
                gk = gk + lam * np.sign(p[key])
            mk = b1 * m[key] + (1.0 - b1) * gk
            vk = b2 * v[key] + (1.0 - b2) * gk * gk
            m_hat = mk / (1.0 - b1 ** t)
            v_hat = vk / (1.0 - b2 ** t)
            precond = np.sqrt(v_hat) + eps
            wk = p[key] - lr * m_hat / precond
            if penalized:
                wk = np.sign(wk) * np.maximum(
                    np.abs(wk) - lr * lam / precond, 0.0)
            if l.kind == "sparse" and key == "w":
                wk = wk * l.mask.a
            pl[key], ml[key], vl[key] = wk, mk, vk
        new_layers.append(pl)
        new_m.append(ml)
        new_v.append(vl)
    return (ParameterSet(tuple(new_layers)),
            AdamState(t=t, m=tuple(new_m), v=tuple(new_v)))


def _check_task(spec: NetworkSpec, d: Dataset) -> None:
    if spec.head == "softmax":
        if not d.categorical:
            raise ValueError("softmax head requires categorical labels")
        if d.n_classes > spec.n_outputs:
            raise ValueError(
                f"dataset has {d.n_classes} classes but head outputs "
                f"{spec.n_outputs}"
            )
    elif spec.head == "sigmoid":
        if d.y is None or not np.all(np.isin(d.y, (0, 1))):
            raise ValueError("sigmoid head requires 0/1 labels")
    else:
        if d.time is None:
            raise ValueError("linear risk head requires survival columns")


def _batch_loss(spec: NetworkSpec, out, batch: Dataset):
    if spec.head == "softmax":
        return categorical_cross_entropy(out, batch.y)
    if spec.head == "sigmoid":
        return binary_cross_entropy(out, batch.y)
    loss, grad = cox_breslow_loss(out[:, 0], batch.time, batch.event)
    return loss, grad.reshape(-1, 1)


def train(spec: NetworkSpec, dataset: Dataset, config: TrainConfig,
          eval_data: Dataset | None = None):
    """Seeded mini-batch training; deterministic given (seed, data, config).

    Survival tasks run full-batch by default so risk sets are exact; with
    full_batch_survival=False, risk sets are formed within each mini-batch,
    which is an approximation (event-free batches are skipped).
    """
    _check_task(spec, dataset)
    seed_init, seed_shuffle, seed_dropout = spawn_seeds(config.seed, 3)
    params = init_params(spec, seed_init)
    state = AdamState.zeros(params)
    rng_shuffle = make_rng(seed_shuffle)
    rng_dropout = make_rng(seed_dropout)

    survival = spec.head == "linear"
    n = dataset.n_samples
    batch_size = n if (survival and config.full_batch_survival) \
        else config.batch_size

    losses, vals = [], []
    for epoch in range(config.epochs):
        perm = rng_shuffle.permutation(n) if config.shuffle else np.arange(n)
        epoch_loss, seen = 0.0, 0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            batch = dataset.take(idx)
            if survival and batch.event.sum() == 0:
                continue
            out, cache = forward(spec, params, batch.x, mode="train",
                                 rng=rng_dropout)
            loss, grad_out = _batch_loss(spec, out, batch)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch + 1}, "
                    f"batch {start // batch_size + 1}"
                )
            grads = backward(spec, params, cache, grad_out)
            params, state = adam_step(spec, params, grads, state, config)
            epoch_loss += loss * idx.size
            seen += idx.size
        losses.append(epoch_loss / max(seen, 1))
        if eval_data is not None:
            vals.append(evaluate(spec, params, eval_data))
    metric = "" if eval_data is None else (
        "c_index" if survival else "accuracy")
    history = TrainHistory(
        loss=tuple(losses),
        val_metric=tuple(vals) if eval_data is not None else None,
        metric_name=metric,
    )
    return params, history


def predict(spec: NetworkSpec, params: ParameterSet, x) -> np.ndarray:
    out, _ = forward(spec, params, x, mode="infer")
    return out


def accuracy(preds, labels) -> float:
    """Fraction correct: argmax for multiclass outputs, 0.5 threshold for
    a single sigmoid column."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise ValueError("empty prediction set")
    if preds.ndim == 2 and preds.shape[1] > 1:
        chosen = preds.argmax(axis=1)
    else:
        chosen = (preds.reshape(-1) >= 0.5).astype(np.int64)
    return float((chosen == labels).mean())


def concordance_index(risks, times, events) -> float:
    """Harrell's c-index. A pair (i, j) is comparable iff t_i < t_j and
    subject i had the event; risk ties count one half."""
    r = np.asarray(risks, dtype=np.float64).reshape(-1)
    t = np.asarray(times, dtype=np.float64).reshape(-1)
    d = np.asarray(events).reshape(-1)
    comparable = (t[:, None] < t[None, :]) & (d[:, None] == 1)
    n_comp = int(comparable.sum())
    if n_comp == 0:
        raise ValueError("no comparable pairs")
    concordant = int((comparable & (r[:, None] > r[None, :])).sum())
    tied = int((comparable & (r[:, None] == r[None, :])).sum())
    return (concordant + 0.5 * tied) / n_comp


def evaluate(spec: NetworkSpec, params: ParameterSet, d: Dataset) -> float:
    """Task metric on a dataset: accuracy for classifiers, c-index for
    survival models."""
    out = predict(spec, params, d.x)
    if spec.head == "linear":
        return concordance_index(out[:, 0], d.time, d.event)
    return accuracy(out, d.y)
