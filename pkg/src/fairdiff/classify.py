"""Node classification over (debiased) subgraph sets and fairness metrics.

The classifier trains on labeled nodes inside each subgraph and predicts a
node by averaging its probability vectors across every subgraph containing
it. Fairness is reported as demographic-parity and equal-opportunity gaps
between the two sensitive groups.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .adversary import cross_entropy
from .autodiff import Tensor
from .data import Graph, TEST
from .layers import gcn_forward, init_linear, linear_forward, normalized_adjacency
from .optim import Adam
from .sampling import Subgraph

__all__ = [
    "SeedMetrics",
    "init_classifier_params",
    "classifier_forward",
    "classifier_proba",
    "train_classifier",
    "predict_nodes",
    "fairness_metrics",
    "SubgraphEnsembleClassifier",
]


def init_classifier_params(
    rng: np.random.Generator, in_dim: int, hidden: int = 64, n_classes: int = 2
) -> dict[str, Tensor]:
    """Two GCN layers then two fully-connected layers, all width ``hidden``."""
    params: dict[str, Tensor] = {}
    params["gcn0.w"], params["gcn0.b"] = init_linear(rng, in_dim, hidden)
    params["gcn1.w"], params["gcn1.b"] = init_linear(rng, hidden, hidden)
    params["fc0.w"], params["fc0.b"] = init_linear(rng, hidden, hidden)
    params["fc1.w"], params["fc1.b"] = init_linear(rng, hidden, n_classes)
    return params


def classifier_forward(
    params: dict[str, Tensor],
    x,
    a,
    *,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    norm=None,
) -> Tensor:
    """Class logits; dropout after each hidden layer while training."""
    if dropout > 0.0 and rng is None:
        raise ValueError("dropout requires an rng")
    if norm is None:
        norm = normalized_adjacency(a)

    def drop(t: Tensor) -> Tensor:
        if dropout <= 0.0:
            return t
        return ad.apply_mask(t, ad.dropout_mask(t.shape, dropout, rng))

    h = drop(ad.relu(gcn_forward(x, a, params["gcn0.w"], params["gcn0.b"], norm=norm)))
    h = drop(ad.relu(gcn_forward(h, a, params["gcn1.w"], params["gcn1.b"], norm=norm)))
    h = drop(ad.relu(linear_forward(h, params["fc0.w"], params["fc0.b"])))
    return linear_forward(h, params["fc1.w"], params["fc1.b"])


def classifier_proba(params: dict[str, Tensor], x, a) -> np.ndarray:
    """Row-softmax class probabilities in evaluation mode."""
    logits = classifier_forward(params, x, a)
    return ad.row_softmax(logits).data


def train_classifier(
    subgraphs: list[Subgraph],
    params: dict[str, Tensor],
    *,
    epochs: int = 500,
    lr: float = 1e-3,
    weight_decay: float = 1e-4,
    dropout: float = 0.3,
    rng: np.random.Generator,
) -> list[float]:
    """Adam on summed cross entropy over each subgraph's labeled nodes.

    Subgraphs without labeled nodes contribute nothing and are skipped;
    having no labeled node anywhere is an error. Returns the per-epoch
    total-loss curve.
    """
    labeled = [sub for sub in subgraphs if sub.labeled_mask.any()]
    if not labeled:
        raise ValueError("train_classifier: no labeled node in any subgraph")
    norms = [Tensor(normalized_adjacency(sub.adjacency).data) for sub in labeled]
    weights = [sub.labeled_mask.astype(np.float64) for sub in labeled]
    opt = Adam(params, lr=lr, weight_decay=weight_decay)
    curve: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(len(labeled))
        total = 0.0
        for idx in order:
            sub = labeled[idx]
            logits = classifier_forward(
                params, sub.features, sub.adjacency, dropout=dropout, rng=rng, norm=norms[idx]
            )
            loss = cross_entropy(logits, sub.labels, weights=weights[idx])
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
            total += float(loss.data)
        curve.append(total)
    return curve


def predict_nodes(
    subgraphs: list[Subgraph], params: dict[str, Tensor], n_nodes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-node class probabilities averaged over containing subgraphs.

    Returns (proba, covered): proba is (n_nodes, C) with NaN rows for nodes
    appearing in no subgraph, covered the boolean membership mask. Uncovered
    nodes trigger a single warning carrying their count.
    """
    if not subgraphs:
        raise ValueError("predict_nodes: empty subgraph set")
    n_classes = 2
    sums = np.zeros((n_nodes, n_classes))
    counts = np.zeros(n_nodes)
    for sub in subgraphs:
        proba = classifier_proba(params, sub.features, sub.adjacency)
        sums[sub.parent_ids] += proba
        counts[sub.parent_ids] += 1.0
    covered = counts > 0
    proba = np.full((n_nodes, n_classes), np.nan)
    proba[covered] = sums[covered] / counts[covered, None]
    if not covered.all():
        missing = int(n_nodes - covered.sum())
        warnings.warn(f"{missing} node(s) appear in no subgraph and are excluded from evaluation")
    return proba, covered


def hard_predictions(proba: np.ndarray) -> np.ndarray:
    """Argmax with ties resolved to class 0."""
    return (proba[:, 1] > proba[:, 0]).astype(np.int64)


def _rate(values: np.ndarray) -> float | None:
    return None if values.size == 0 else float(values.mean())


def _gap(pred: np.ndarray, group: np.ndarray) -> float | None:
    rate0 = _rate(pred[group == 0])
    rate1 = _rate(pred[group == 1])
    if rate0 is None or rate1 is None:
        return None
    return abs(rate0 - rate1)


@dataclass(frozen=True)
class SeedMetrics:
    """Evaluation of one trained classifier on one node split."""

    accuracy: float
    delta_dp: float | None
    delta_eo: float | None
    n_eval: int
    n_excluded: int


def fairness_metrics(
    y_pred: np.ndarray, y_true: np.ndarray, sensitive: np.ndarray, eval_mask: np.ndarray
) -> SeedMetrics:
    """Accuracy plus demographic-parity and equal-opportunity gaps.

    Gaps compare positive-prediction rates between sensitive groups; the
    equal-opportunity gap restricts to truly positive nodes. A metric whose
    group (or group-and-positive cell) is empty is undefined (None), not 0.
    """
    y_pred = np.asarray(y_pred)
    y_true = np.asarray(y_true)
    sensitive = np.asarray(sensitive)
    eval_mask = np.asarray(eval_mask, dtype=bool)
    if not eval_mask.any():
        raise ValueError("fairness_metrics: empty evaluation mask")
    pred = y_pred[eval_mask]
    true = y_true[eval_mask]
    group = sensitive[eval_mask]
    accuracy = float((pred == true).mean())
    delta_dp = _gap(pred, group)
    positive = true == 1
    delta_eo = _gap(pred[positive], group[positive])
    return SeedMetrics(
        accuracy=accuracy,
        delta_dp=delta_dp,
        delta_eo=delta_eo,
        n_eval=int(eval_mask.sum()),
        n_excluded=0,
    )


class SubgraphEnsembleClassifier(BaseEstimator):
    """Trains the node classifier on a subgraph set and evaluates fairness."""

    def __init__(
        self,
        hidden: int = 64,
        dropout: float = 0.3,
        epochs: int = 500,
        lr: float = 1e-3,
        weight_decay: float = 1e-4,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, subgraphs: list[Subgraph]):
        if not subgraphs:
            raise ValueError("fit: empty subgraph set")
        rng = np.random.default_rng(self.seed)
        self.n_features_in_ = subgraphs[0].features.shape[1]
        self.params_ = init_classifier_params(rng, self.n_features_in_, hidden=self.hidden)
        self.loss_curve_ = train_classifier(
            subgraphs,
            self.params_,
            epochs=self.epochs,
            lr=self.lr,
            weight_decay=self.weight_decay,
            dropout=self.dropout,
            rng=rng,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("SubgraphEnsembleClassifier is not fitted; call fit first")

    def predict_proba(self, subgraphs: list[Subgraph], n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        return predict_nodes(subgraphs, self.params_, n_nodes)

    def predict(self, subgraphs: list[Subgraph], n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
        proba, covered = self.predict_proba(subgraphs, n_nodes)
        pred = np.full(n_nodes, -1, dtype=np.int64)
        pred[covered] = hard_predictions(proba[covered])
        return pred, covered

    def evaluate(self, subgraphs: list[Subgraph], graph: Graph, split: int = TEST) -> SeedMetrics:
        """Fairness metrics over the graph's given split (test by default)."""
        self._check_fitted()
        pred, covered = self.predict(subgraphs, graph.n_nodes)
        mask = (graph.split == split) & covered
        excluded = int(((graph.split == split) & ~covered).sum())
        metrics = fairness_metrics(pred, graph.labels, graph.sensitive, mask)
        return SeedMetrics(
            accuracy=metrics.accuracy,
            delta_dp=metrics.delta_dp,
            delta_eo=metrics.delta_eo,
            n_eval=metrics.n_eval,
            n_excluded=excluded,
        )
