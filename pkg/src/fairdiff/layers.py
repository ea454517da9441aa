"""Graph network building blocks on top of the autodiff engine.

All layers are plain functions over ``Tensor`` operands so gradients flow to
node features, adjacency, and parameters alike. Adjacency entries can turn
negative mid-diffusion; they are clamped to zero only where a nonnegative
matrix is structurally required (degree normalization, attention masking),
while the raw values stay untouched for the SDE arithmetic elsewhere.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "xavier_uniform",
    "init_linear",
    "init_gmh",
    "normalized_adjacency",
    "gcn_forward",
    "linear_forward",
    "adjacency_power",
    "gmh_forward",
]


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_linear(rng: np.random.Generator, in_dim: int, out_dim: int) -> tuple[Tensor, Tensor]:
    """Weight and zero bias for an affine layer (also used for GCN layers)."""
    weight = Tensor(xavier_uniform(rng, in_dim, out_dim), requires_grad=True)
    bias = Tensor(np.zeros(out_dim), requires_grad=True)
    return weight, bias


def _as_op(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def normalized_adjacency(a) -> Tensor:
    """Symmetric degree normalization of A with self-loops added.

    Negative entries are clamped to zero before the degree computation so the
    inverse square root stays real; degrees are then at least 1.
    """
    a = _as_op(a)
    n = a.data.shape[0]
    clamped = ad.relu(a)
    with_loops = clamped + Tensor(np.eye(n))
    scale = ad.powf(with_loops.sum(axis=1, keepdims=True), -0.5)
    return with_loops * scale * scale.T


def gcn_forward(h, a, weight: Tensor, bias: Tensor, *, norm=None) -> Tensor:
    """One graph convolution: norm(A) @ H @ W + b.

    ``norm`` may carry a precomputed ``normalized_adjacency`` result when the
    adjacency is constant across calls (training loops over fixed subgraphs).
    """
    h = _as_op(h)
    if h.data.ndim != 2 or h.data.shape[0] == 0:
        raise ad.ShapeError(f"gcn_forward: node features must be (n, f) with n > 0, got {h.shape}")
    if norm is None:
        norm = normalized_adjacency(a)
    return ad.matmul(ad.matmul(_as_op(norm), h), weight) + bias


def linear_forward(h, weight: Tensor, bias: Tensor) -> Tensor:
    return ad.matmul(_as_op(h), weight) + bias


def adjacency_power(a, power: int) -> Tensor:
    """Matrix power A^p by repeated multiplication (p >= 1)."""
    if power < 1:
        raise ValueError(f"adjacency_power: power must be >= 1, got {power}")
    a = _as_op(a)
    out = a
    for _ in range(power - 1):
        out = ad.matmul(out, a)
    return out


def init_gmh(
    rng: np.random.Generator, in_dim: int, out_dim: int, n_heads: int, head_dim: int
) -> dict[str, Tensor]:
    """Per-head query/key/value projections plus the output projection."""
    params: dict[str, Tensor] = {}
    for h in range(n_heads):
        for name in ("q", "k", "v"):
            params[f"{name}{h}"] = Tensor(xavier_uniform(rng, in_dim, head_dim), requires_grad=True)
    params["out"] = Tensor(xavier_uniform(rng, n_heads * head_dim, out_dim), requires_grad=True)
    return params


def _attention_mask(a_p: np.ndarray) -> np.ndarray:
    """Additive mask: 0 on positive entries, a large negative value elsewhere.

    Rows without any positive entry fall back to self-attention: only their
    diagonal is left open.
    """
    mask = np.where(a_p > 0.0, 0.0, ad.NEG_MASK)
    empty = ~np.any(a_p > 0.0, axis=1)
    if np.any(empty):
        idx = np.flatnonzero(empty)
        mask[idx, idx] = 0.0
    return mask


def gmh_forward(h, a_p, params: dict[str, Tensor], n_heads: int) -> Tensor:
    """Multi-head dot-product attention masked by a nonnegative adjacency power.

    Scores between u and v get ``log(a_p[u, v])`` added where ``a_p`` is
    positive and are blocked otherwise, so attention follows the (weighted)
    p-hop structure. Gradients flow into the positive ``a_p`` entries.
    """
    h = _as_op(h)
    a_p = _as_op(a_p)
    n = h.data.shape[0]
    if a_p.data.shape != (n, n):
        raise ad.ShapeError(f"gmh_forward: adjacency power shape {a_p.shape} does not match {n} nodes")
    if np.any(a_p.data < 0.0):
        raise ValueError("gmh_forward: adjacency power must be nonnegative")

    additive = Tensor(_attention_mask(a_p.data))
    log_weights = ad.poslog(a_p)
    head_dim = params["q0"].data.shape[1]
    scale = 1.0 / np.sqrt(head_dim)

    heads = []
    for i in range(n_heads):
        q = ad.matmul(h, params[f"q{i}"])
        k = ad.matmul(h, params[f"k{i}"])
        v = ad.matmul(h, params[f"v{i}"])
        scores = ad.matmul(q, k.T) * scale + log_weights + additive
        heads.append(ad.matmul(ad.row_softmax(scores), v))
    return ad.matmul(ad.concat(heads, axis=1), params["out"])
