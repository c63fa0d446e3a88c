"""Declarative layer stacks, forward/backward passes and model files.

The layer set is closed: attention (per-feature softmax gating), sparse
(mask-constrained linear), dense, dropout, plus an output head. The mask law
is global: for every sparse layer, masked weight entries are exactly zero
after init, after every update and across serialization; gradients at masked
positions are exactly zero as well.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .maskgen import MaskMatrix, dense_mask
from .numerics import activation, make_rng, sigmoid, softmax_rows

MAGIC = b"SPTABNET"
FORMAT_VERSION = 1

ATTENTION_KINDS = ("bahdanau", "dot", "content", "scaled_dot")
HEADS = ("softmax", "sigmoid", "linear")


class DivergenceError(RuntimeError):
    """Forward pass or loss produced NaN/Inf."""


class ModelFormatError(ValueError):
    """Model file is unreadable: bad magic, version or checksum."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # attention | sparse | dense | dropout
    units: int | None = None
    activation: str | None = None
    score: str | None = None  # attention score function
    rate: float | None = None  # dropout rate
    mask: MaskMatrix | None = None  # sparse only

    def __post_init__(self):
        if self.kind == "attention":
            if self.score not in ATTENTION_KINDS:
                raise ValueError(f"unknown attention score {self.score!r}")
        elif self.kind == "sparse":
            if self.mask is None:
                raise ValueError("sparse layer requires a mask")
            if self.units is not None and self.units != self.mask.n_units:
                raise ValueError("sparse units must equal mask column count")
            object.__setattr__(self, "units", self.mask.n_units)
        elif self.kind == "dense":
            if not self.units or self.units < 1:
                raise ValueError("dense layer requires units >= 1")
        elif self.kind == "dropout":
            if self.rate is None or not 0.0 <= self.rate < 1.0:
                raise ValueError("dropout rate must lie in [0, 1)")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("sparse", "dense") and self.activation is None:
            object.__setattr__(self, "activation", "linear")


def attention_layer(score: str = "scaled_dot") -> LayerSpec:
    return LayerSpec(kind="attention", score=score)


def sparse_layer(mask: MaskMatrix, act: str = "tanh") -> LayerSpec:
    return LayerSpec(kind="sparse", mask=mask, activation=act)


def dense_layer(units: int, act: str = "linear") -> LayerSpec:
    return LayerSpec(kind="dense", units=units, activation=act)


def dropout_layer(rate: float) -> LayerSpec:
    return LayerSpec(kind="dropout", rate=rate)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack ending in an output head.

    The head applies softmax (multiclass), sigmoid (binary) or identity
    (risk score) to the final layer's linear output.
    """

    input_dim: int
    layers: tuple[LayerSpec, ...]
    head: str

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        object.__setattr__(self, "layers", tuple(self.layers))
        dims = self.layer_dims()
        if self.head == "softmax" and dims[-1] < 2:
            raise ValueError("softmax head needs at least 2 outputs")
        if self.head in ("sigmoid", "linear") and dims[-1] != 1:
            raise ValueError(f"{self.head} head needs exactly 1 output")
        first_mix = next(
            (i for i, l in enumerate(self.layers) if l.kind in ("sparse", "dense")),
            len(self.layers),
        )
        att_positions = [i for i, l in enumerate(self.layers)
                         if l.kind == "attention"]
        if len(att_positions) > 2:
            raise ValueError("at most two attention layers are supported")
        if len([i for i in att_positions if i < first_mix]) > 1:
            raise ValueError("at most one attention layer before the first "
                             "sparse/dense layer")

    def layer_dims(self) -> list[int]:
        """Output dimension after each layer; validates the chain."""
        dims = [self.input_dim]
        for i, l in enumerate(self.layers):
            d = dims[-1]
            if l.kind in ("attention", "dropout"):
                dims.append(d)
            elif l.kind == "sparse":
                if l.mask.n_features != d:
                    raise ValueError(
                        f"layer {i}: mask expects {l.mask.n_features} inputs, "
                        f"got {d}"
                    )
                dims.append(l.mask.n_units)
            else:
                dims.append(l.units)
        return dims

    @property
    def n_outputs(self) -> int:
        return self.layer_dims()[-1]


def standard_spec(
    n_features: int,
    n_outputs: int,
    head: str,
    mask: MaskMatrix | None = None,
    attention_kind: str = "scaled_dot",
    hidden_units: int = 100,
    hidden_activation: str = "tanh",
    dense_units: int = 64,
    dropout: float = 0.3,
    post_sparse_attention: bool = False,
    fusion_mask: MaskMatrix | None = None,
) -> NetworkSpec:
    """The reference stack: attention, masked hidden layer, 64-unit relu
    layer with dropout, linear output into the head.

    With mask=None the hidden layer is fully connected (all-ones mask).
    fusion_mask prepends a second masked layer for multi-modal inputs.
    """
    layers: list[LayerSpec] = [attention_layer(attention_kind)]
    d = n_features
    if fusion_mask is not None:
        layers.append(sparse_layer(fusion_mask, hidden_activation))
        d = fusion_mask.n_units
    m = mask if mask is not None else dense_mask(d, hidden_units)
    layers.append(sparse_layer(m, hidden_activation))
    if post_sparse_attention:
        layers.append(attention_layer(attention_kind))
    layers.append(dense_layer(dense_units, "relu"))
    if dropout > 0:
        layers.append(dropout_layer(dropout))
    layers.append(dense_layer(n_outputs, "linear"))
    return NetworkSpec(input_dim=n_features, layers=tuple(layers), head=head)


@dataclass(frozen=True)
class ParameterSet:
    """Per-layer arrays, shapes bound to a NetworkSpec.

    layers[i] maps 'w' (and 'b' for sparse/dense) to float64 arrays; dropout
    layers hold an empty dict. Treated as an immutable value: updates return
    new ParameterSets.
    """

    layers: tuple[dict, ...]

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            tuple({k: v.copy() for k, v in layer.items()} for layer in self.layers)
        )

    def digest(self) -> str:
        """SHA-256 over the little-endian blobs in layer order."""
        h = hashlib.sha256()
        for layer in self.layers:
            for key in sorted(layer):
                h.update(np.ascontiguousarray(layer[key], dtype="<f8").tobytes())
        return h.hexdigest()


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(spec: NetworkSpec, seed: int) -> ParameterSet:
    """Glorot-uniform weights, zero biases; masked entries zeroed after the
    draw so the mask law holds from step zero."""
    rng = make_rng(seed)
    dims = spec.layer_dims()
    layers = []
    for i, l in enumerate(spec.layers):
        d_in, d_out = dims[i], dims[i + 1]
        if l.kind == "attention":
            layers.append({"w": _glorot(rng, d_in, 1, (d_in,))})
        elif l.kind == "sparse":
            w = _glorot(rng, d_in, d_out, (d_in, d_out)) * l.mask.a
            layers.append({"w": w, "b": np.zeros(d_out)})
        elif l.kind == "dense":
            layers.append({"w": _glorot(rng, d_in, d_out, (d_in, d_out)),
                           "b": np.zeros(d_out)})
        else:
            layers.append({})
    return ParameterSet(tuple(layers))


def _score(z: np.ndarray, kind: str, n: int) -> np.ndarray:
    if kind == "bahdanau":
        return np.tanh(z)
    if kind == "dot":
        return z
    if kind == "content":
        return np.cos(z)
    return z / np.sqrt(n)  # scaled_dot


def _score_grad(z: np.ndarray, kind: str, n: int) -> np.ndarray:
    if kind == "bahdanau":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "dot":
        return np.ones_like(z)
    if kind == "content":
        return -np.sin(z)
    return np.full_like(z, 1.0 / np.sqrt(n))


def attention_forward(x, w, kind: str):
    """Per-feature gating. Scores are the per-feature products x_ij * w_j
    passed through the score function; alpha is their row softmax and the
    output is x reweighted by alpha."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (x.shape[1],):
        raise ValueError("attention vector length must equal feature count")
    if kind not in ATTENTION_KINDS:
        raise ValueError(f"unknown attention score {kind!r}")
    z = x * w
    alpha = softmax_rows(_score(z, kind, x.shape[1]))
    return alpha, x * alpha


def sparse_forward(x, w, mask: MaskMatrix, b, act: str) -> np.ndarray:
    """act(x @ (A * W) + b); the mask is re-asserted on every call so stray
    values at masked positions can never leak into the output."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != mask.n_features or w.shape != mask.a.shape:
        raise ValueError("shape mismatch in sparse layer")
    return activation(x @ (mask.a * w) + b, act)


@dataclass
class ForwardCache:
    """Training-mode byproducts needed by the exact backward pass."""

    inputs: list  # per-layer input matrix
    extras: list  # per-layer dict: pre-activations, alphas, dropout masks
    pre_head: np.ndarray | None = None


def forward(spec: NetworkSpec, params: ParameterSet, x, mode: str = "infer",
            rng: np.random.Generator | None = None):
    """Run the stack. Returns (output, cache) in train mode and
    (output, None) in infer mode; dropout only fires in train mode."""
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(
            f"input has shape {x.shape}, expected (b, {spec.input_dim})"
        )
    train = mode == "train"
    h = x
    inputs, extras = [], []
    for l, p in zip(spec.layers, params.layers):
        inputs.append(h)
        if l.kind == "attention":
            z = h * p["w"]
            alpha = softmax_rows(_score(z, l.score, h.shape[1]))
            extras.append({"z": z, "alpha": alpha})
            h = h * alpha
        elif l.kind in ("sparse", "dense"):
            w_eff = l.mask.a * p["w"] if l.kind == "sparse" else p["w"]
            pre = h @ w_eff + p["b"]
            extras.append({"pre": pre})
            h = activation(pre, l.activation)
        else:  # dropout
            if train and l.rate > 0.0:
                if rng is None:
                    raise ValueError("train mode with dropout requires an rng")
                keep = (rng.random(h.shape) >= l.rate).astype(np.float64)
                extras.append({"keep": keep})
                h = h * keep / (1.0 - l.rate)
            else:
                extras.append({})
    pre_head = h
    if spec.head == "softmax":
        out = softmax_rows(pre_head)
    elif spec.head == "sigmoid":
        out = sigmoid(pre_head)
    else:
        out = pre_head
    if not np.all(np.isfinite(out)):
        raise DivergenceError("forward pass produced non-finite output")
    if train:
        return out, ForwardCache(inputs=inputs, extras=extras, pre_head=pre_head)
    return out, None


def collect_attention(spec: NetworkSpec, params: ParameterSet, x) -> list[np.ndarray]:
    """Infer-mode alpha matrices of every attention layer, in stack order."""
    x = np.asarray(x, dtype=np.float64)
    h = x
    alphas = []
    for l, p in zip(spec.layers, params.layers):
        if l.kind == "attention":
            alpha, h = attention_forward(h, p["w"], l.score)
            alphas.append(alpha)
        elif l.kind == "sparse":
            h = sparse_forward(h, p["w"], l.mask, p["b"], l.activation)
        elif l.kind == "dense":
            h = activation(h @ p["w"] + p["b"], l.activation)
        # dropout: identity at inference
    return alphas


def backward(spec: NetworkSpec, params: ParameterSet, cache: ForwardCache,
             grad_pre_head) -> list[dict]:
    """Exact gradients for every parameter given dLoss/d(pre-head output).

    Sparse weight gradients are multiplied by the mask, so masked entries
    receive exactly zero. Attention gradients flow through both the softmax
    and the input-gating product.
    """
    if cache is None:
        raise ValueError("backward requires the cache of a train-mode forward")
    g = np.asarray(grad_pre_head, dtype=np.float64)
    grads: list[dict] = [None] * len(spec.layers)
    for i in range(len(spec.layers) - 1, -1, -1):
        l, p = spec.layers[i], params.layers[i]
        h_in, extra = cache.inputs[i], cache.extras[i]
        if l.kind in ("sparse", "dense"):
            dpre = g * activation(extra["pre"], l.activation, "derivative")
            gw = h_in.T @ dpre
            if l.kind == "sparse":
                gw = gw * l.mask.a
                w_eff = l.mask.a * p["w"]
            else:
                w_eff = p["w"]
            grads[i] = {"w": gw, "b": dpre.sum(axis=0)}
            g = dpre @ w_eff.T
        elif l.kind == "attention":
            alpha, z = extra["alpha"], extra["z"]
            dalpha = g * h_in
            ds = alpha * (dalpha - (dalpha * alpha).sum(axis=1, keepdims=True))
            dz = ds * _score_grad(z, l.score, h_in.shape[1])
            grads[i] = {"w": (dz * h_in).sum(axis=0)}
            g = g * alpha + dz * p["w"]
        else:  # dropout
            if extra:
                g = g * extra["keep"] / (1.0 - l.rate)
            grads[i] = {}
    return grads


def params_digest(params: ParameterSet) -> str:
    return params.digest()


# ---------------------------------------------------------------------------
# Model files
#
# Layout: MAGIC (8 bytes) | format version (u32 LE) | header length (u64 LE)
# | JSON header | array blobs (float64 LE) | SHA-256 of everything before it.
# The header describes the spec, mask provenance and an array index with
# byte offsets. Stability is guaranteed within a major format version.
# ---------------------------------------------------------------------------


def _spec_header(spec: NetworkSpec) -> tuple[dict, list[np.ndarray], list[dict]]:
    arrays: list[np.ndarray] = []
    index: list[dict] = []

    def add(name: str, arr: np.ndarray):
        arrays.append(np.ascontiguousarray(arr, dtype="<f8"))
        index.append({"name": name, "shape": list(arr.shape)})

    layers = []
    for i, l in enumerate(spec.layers):
        entry = {"kind": l.kind, "units": l.units, "activation": l.activation,
                 "score": l.score, "rate": l.rate}
        if l.kind == "sparse":
            entry["mask"] = f"mask{i}"
            entry["mask_provenance"] = l.mask.provenance
            entry["mask_params"] = l.mask.params
            add(f"mask{i}", l.mask.a)
        layers.append(entry)
    header = {"input_dim": spec.input_dim, "head": spec.head, "layers": layers}
    return header, arrays, index


def save_model(spec: NetworkSpec, params: ParameterSet, path,
               extras: dict | None = None) -> None:
    header, arrays, index = _spec_header(spec)
    header["extras"] = extras or {}
    for i, layer in enumerate(params.layers):
        for key in sorted(layer):
            arrays.append(np.ascontiguousarray(layer[key], dtype="<f8"))
            index.append({"name": f"layer{i}/{key}",
                          "shape": list(layer[key].shape)})
    offset = 0
    for arr, entry in zip(arrays, index):
        entry["offset"] = offset
        entry["nbytes"] = arr.nbytes
        offset += arr.nbytes
    header["arrays"] = index
    header["format_version"] = FORMAT_VERSION
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<I", FORMAT_VERSION)
    body += struct.pack("<Q", len(header_bytes)) + header_bytes
    body += b"".join(arr.tobytes() for arr in arrays)
    checksum = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body + checksum)


def load_model_extras(path) -> dict:
    """Side metadata stored alongside the model (feature names, scaler...)."""
    return _read_model(path)[2]


def load_model(path) -> tuple[NetworkSpec, ParameterSet]:
    spec, params, _ = _read_model(path)
    return spec, params


def _read_model(path) -> tuple[NetworkSpec, ParameterSet, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 12 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file")
    body, checksum = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise ModelFormatError(f"{path}: checksum mismatch (corrupt or truncated)")
    version = struct.unpack_from("<I", raw, len(MAGIC))[0]
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: format version {version} not supported by this reader "
            f"(expected {FORMAT_VERSION}); no migration available"
        )
    hlen = struct.unpack_from("<Q", raw, len(MAGIC) + 4)[0]
    start = len(MAGIC) + 12
    header = json.loads(raw[start : start + hlen].decode("utf-8"))
    blob_start = start + hlen

    def read_array(entry) -> np.ndarray:
        a = np.frombuffer(
            raw, dtype="<f8", count=int(np.prod(entry["shape"], dtype=int)),
            offset=blob_start + entry["offset"],
        )
        return a.reshape(entry["shape"]).copy()

    by_name = {e["name"]: e for e in header["arrays"]}
    layer_specs = []
    for i, entry in enumerate(header["layers"]):
        mask = None
        if entry["kind"] == "sparse":
            mask = MaskMatrix(
                a=read_array(by_name[entry["mask"]]),
                provenance=entry["mask_provenance"],
                params=entry["mask_params"],
            )
        layer_specs.append(
            LayerSpec(kind=entry["kind"],
                      units=None if entry["kind"] == "sparse" else entry["units"],
                      activation=entry["activation"], score=entry["score"],
                      rate=entry["rate"], mask=mask)
        )
    spec = NetworkSpec(input_dim=header["input_dim"],
                       layers=tuple(layer_specs), head=header["head"])
    layers = []
    for i in range(len(layer_specs)):
        prefix = f"layer{i}/"
        layers.append({
            e["name"][len(prefix):]: read_array(e)
            for e in header["arrays"] if e["name"].startswith(prefix)
        })
    return spec, ParameterSet(tuple(layers)), header.get("extras", {})
