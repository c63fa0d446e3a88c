"""Deterministic matrix algebra, activations and seeded random generation.

All values are float64. Matrices are 2-D C-contiguous numpy arrays (row-major).
NaN or Inf appearing in a result is treated as an error condition by callers,
never as a silent state.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


def as_matrix(a) -> np.ndarray:
    """Coerce input to a 2-D float64 row-major array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def check_finite(m: np.ndarray, where: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise FloatingPointError(f"non-finite values in {where}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product a @ b.

    Summation order is delegated to numpy's fixed kernel, which is
    deterministic for identical inputs on the same build; re-running a
    computation reproduces results bitwise.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"dimension mismatch in matmul: {a.shape} x {b.shape}"
        )
    return a @ b


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two equal-shape matrices."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ValueError(
            f"dimension mismatch in hadamard: {a.shape} vs {b.shape}"
        )
    return a * b


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow stability."""
    m = as_matrix(m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def activation(m, kind: str, mode: str = "value") -> np.ndarray:
    """Elementwise activation or its derivative evaluated at the input.

    relu derivative uses the subgradient 0 at the kink.
    """
    m = np.asarray(m, dtype=np.float64)
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation kind {kind!r}")
    if mode not in ("value", "derivative"):
        raise ValueError(f"unknown activation mode {mode!r}")
    if kind == "relu":
        if mode == "value":
            return np.maximum(m, 0.0)
        return (m > 0.0).astype(np.float64)
    if kind == "tanh":
        t = np.tanh(m)
        return t if mode == "value" else 1.0 - t * t
    if kind == "sigmoid":
        s = sigmoid(m)
        return s if mode == "value" else s * (1.0 - s)
    # linear
    return m.copy() if mode == "value" else np.ones_like(m)


def sigmoid(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator: PCG64 (permuted congruential, numpy's documented,
    version-stable algorithm). Identical seed gives an identical draw
    sequence across runs and platforms; the golden sequence is pinned in
    the test suite.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive n independent child seeds deterministically from one seed."""
    ss = np.random.SeedSequence(int(seed))
    return [int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(n)]
