"""Sensitive-attribute adversary: a small GCN classifier over subgraphs.

The adversary predicts each node's sensitive attribute from (X, A). Its loss
gradients with respect to the inputs define the bias direction used by the
fairness-aware forward diffusion: a gradient-descent step on X or A makes the
adversary more confident, i.e. the subgraph more biased.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .autodiff import Tensor
from .layers import gcn_forward, init_linear, linear_forward, normalized_adjacency
from .optim import Adam
from .sampling import Subgraph

__all__ = [
    "init_sensitive_params",
    "sensitive_forward",
    "sensitive_loss",
    "input_gradients",
    "train_sensitive",
    "SensitiveAttributeAdversary",
]


def init_sensitive_params(
    rng: np.random.Generator, in_dim: int, hidden: tuple[int, int, int] = (64, 32, 16)
) -> dict[str, Tensor]:
    """Two GCN layers then two affine layers; logits over {0, 1}."""
    h1, h2, h3 = hidden
    params: dict[str, Tensor] = {}
    for name, (fan_in, fan_out) in {
        "gcn0": (in_dim, h1),
        "gcn1": (h1, h2),
        "fc0": (h2, h3),
        "fc1": (h3, 2),
    }.items():
        params[f"{name}.w"], params[f"{name}.b"] = init_linear(rng, fan_in, fan_out)
    return params


def sensitive_forward(
    params: dict[str, Tensor],
    x,
    a,
    *,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    norm=None,
) -> Tensor:
    """Logits (n, 2). Dropout masks are drawn from ``rng`` in training mode."""
    if dropout > 0.0 and rng is None:
        raise ValueError("sensitive_forward: dropout requires an rng")

    def drop(t: Tensor) -> Tensor:
        if dropout <= 0.0:
            return t
        return ad.apply_mask(t, ad.dropout_mask(t.data.shape, dropout, rng))

    h = drop(ad.relu(gcn_forward(x, a, params["gcn0.w"], params["gcn0.b"], norm=norm)))
    h = drop(ad.relu(gcn_forward(h, a, params["gcn1.w"], params["gcn1.b"], norm=norm)))
    h = drop(ad.relu(linear_forward(h, params["fc0.w"], params["fc0.b"])))
    return linear_forward(h, params["fc1.w"], params["fc1.b"])


def _one_hot(values: np.ndarray, classes: int = 2) -> np.ndarray:
    out = np.zeros((values.shape[0], classes))
    out[np.arange(values.shape[0]), values] = 1.0
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Summed cross entropy; ``weights`` (0/1) selects which rows count."""
    one_hot = _one_hot(targets, logits.data.shape[1])
    if weights is not None:
        one_hot = one_hot * weights[:, None]
    return -1.0 * (ad.row_log_softmax(logits) * Tensor(one_hot)).sum()


def sensitive_loss(
    params: dict[str, Tensor],
    sub: Subgraph,
    *,
    x=None,
    a=None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    norm=None,
) -> Tensor:
    """Cross entropy of the adversary over all subgraph nodes."""
    x = sub.features if x is None else x
    a = sub.adjacency if a is None else a
    logits = sensitive_forward(params, x, a, dropout=dropout, rng=rng, norm=norm)
    return cross_entropy(logits, sub.sensitive)


def input_gradients(params: dict[str, Tensor], sub: Subgraph) -> tuple[np.ndarray, np.ndarray]:
    """Exact adversary-loss gradients w.r.t. features and adjacency.

    The adjacency gradient is symmetrized with a zeroed diagonal so it lives
    in the same space as the (symmetric, zero-diagonal) adjacency itself.
    """
    x = Tensor(sub.features, requires_grad=True)
    a = Tensor(sub.adjacency, requires_grad=True)
    loss = sensitive_loss(params, sub, x=x, a=a)
    grad_x, grad_a = ad.gradients(loss, [x, a])
    grad_a = 0.5 * (grad_a + grad_a.T)
    np.fill_diagonal(grad_a, 0.0)
    return grad_x, grad_a


def train_sensitive(
    params: dict[str, Tensor],
    subgraphs: list[Subgraph],
    *,
    epochs: int = 500,
    lr: float = 1e-4,
    dropout: float = 0.1,
    rng: np.random.Generator,
) -> list[float]:
    """Adam over per-subgraph steps, shuffled each epoch; returns epoch losses."""
    if not subgraphs:
        raise ValueError("train_sensitive: empty subgraph list")
    optimizer = Adam(params, lr=lr)
    norms = [normalized_adjacency(sub.adjacency).data for sub in subgraphs]
    curve: list[float] = []
    for _ in range(epochs):
        total = 0.0
        for idx in rng.permutation(len(subgraphs)):
            loss = sensitive_loss(
                params, subgraphs[idx], dropout=dropout, rng=rng, norm=norms[idx]
            )
            total += loss.item()
            ad.backward(loss)
            optimizer.step()
        curve.append(total)
    return curve


class SensitiveAttributeAdversary(BaseEstimator):
    """Estimator wrapper around the adversary network.

    Parameters mirror the training defaults: hidden sizes (64, 32, 16),
    dropout 0.1, 500 epochs of Adam at lr 1e-4.
    """

    def __init__(
        self,
        hidden: tuple[int, int, int] = (64, 32, 16),
        dropout: float = 0.1,
        epochs: int = 500,
        lr: float = 1e-4,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    def fit(self, subgraphs: list[Subgraph]):
        if not subgraphs:
            raise ValueError("fit: empty subgraph list")
        rng = np.random.default_rng(self.seed)
        self.n_features_in_ = subgraphs[0].features.shape[1]
        self.params_ = init_sensitive_params(rng, self.n_features_in_, tuple(self.hidden))
        self.loss_curve_ = train_sensitive(
            self.params_,
            subgraphs,
            epochs=self.epochs,
            lr=self.lr,
            dropout=self.dropout,
            rng=rng,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("adversary is not fitted")

    def predict_proba(self, sub: Subgraph) -> np.ndarray:
        self._check_fitted()
        logits = sensitive_forward(self.params_, sub.features, sub.adjacency)
        return ad.row_softmax(logits).data

    def loss(self, sub: Subgraph) -> float:
        self._check_fitted()
        return sensitive_loss(self.params_, sub).item()

    def input_gradients(self, sub: Subgraph) -> tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        return input_gradients(self.params_, sub)

    def accuracy(self, subgraphs: list[Subgraph]) -> float:
        """Node-level accuracy of the sensitive-attribute prediction."""
        self._check_fitted()
        hits = total = 0
        for sub in subgraphs:
            pred = np.argmax(self.predict_proba(sub), axis=1)
            hits += int((pred == sub.sensitive).sum())
            total += sub.n_nodes
        return hits / total
