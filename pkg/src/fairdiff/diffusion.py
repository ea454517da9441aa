"""Fairness-aware forward diffusion and score-model training.

The forward process perturbs each subgraph with variance-preserving Gaussian
noise plus a deterministic push along the adversary's loss gradients, scaled
so the push never outgrows the noise. Two score networks are trained jointly
to recover the sigma-scaled perturbation targets, one for node features and
one for adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import adversary as adv
from . import autodiff as ad
from .autodiff import Tensor
from .layers import (
    adjacency_power,
    gcn_forward,
    gmh_forward,
    init_gmh,
    init_linear,
    linear_forward,
    normalized_adjacency,
)
from .optim import Adam
from .sampling import Subgraph

__all__ = [
    "KernelParams",
    "DiffusionConfig",
    "ScoreModelParams",
    "PerturbResult",
    "kernel_stats",
    "gamma_coeff",
    "symmetrize_noise",
    "forward_perturb",
    "init_feature_score",
    "init_structure_score",
    "score_features",
    "score_structure",
    "score_losses",
    "train_score_models",
    "DiffusionScoreModels",
]

GRAD_NORM_FLOOR = 1e-12

FEATURE_HIDDEN = 32
N_FEATURE_GCN = 3

STRUCT_HIDDEN = 32
N_STRUCT_GCN = 5
N_ADJ_POWERS = 2
N_HEADS = 4
HEAD_DIM = 8
GMH_OUT = 32


@dataclass(frozen=True)
class KernelParams:
    """Variance-preserving noise schedule over t in [0, horizon]."""

    beta_min: float = 0.1
    beta_max: float = 1.0
    horizon: float = 1.0
    t_floor: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.beta_min < self.beta_max:
            raise ValueError(f"need 0 < beta_min < beta_max, got {self.beta_min}, {self.beta_max}")
        if not 0.0 < self.t_floor < self.horizon:
            raise ValueError(f"need 0 < t_floor < horizon, got {self.t_floor}, {self.horizon}")

    def log_mean_scale(self, t: float) -> float:
        return -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min

    def mean_scale(self, t: float) -> float:
        return float(np.exp(self.log_mean_scale(t)))

    def sigma(self, t: float) -> float:
        return float(np.sqrt(-np.expm1(2.0 * self.log_mean_scale(t))))

    def beta(self, t: float) -> float:
        """Instantaneous rate of the linear schedule."""
        return self.beta_min + t * (self.beta_max - self.beta_min)


def kernel_stats(t: float, beta_min: float, beta_max: float, m0: np.ndarray) -> tuple[np.ndarray, float]:
    """Perturbation-kernel mean and standard deviation at time t."""
    kernel = KernelParams(beta_min=beta_min, beta_max=beta_max)
    if not 0.0 <= t <= kernel.horizon:
        raise ValueError(f"t must lie in [0, {kernel.horizon}], got {t}")
    return kernel.mean_scale(t) * np.asarray(m0, dtype=np.float64), kernel.sigma(t)


def gamma_coeff(noise_term: np.ndarray, grad: np.ndarray, lam: float) -> float:
    """Fairness-perturbation scale: lam * ||noise||^2 / ||grad||^2, 0 on flat gradients."""
    if lam < 0.0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    grad_sq = float(np.sum(np.square(grad)))
    if lam == 0.0 or grad_sq < GRAD_NORM_FLOOR:
        return 0.0
    return lam * float(np.sum(np.square(noise_term))) / grad_sq


def symmetrize_noise(eps: np.ndarray) -> np.ndarray:
    """Project iid Gaussian noise onto symmetric zero-diagonal matrices.

    Off-diagonal variance is preserved by the 1/sqrt(2) factor.
    """
    sym = (eps + eps.T) / np.sqrt(2.0)
    np.fill_diagonal(sym, 0.0)
    return sym


@dataclass(frozen=True)
class DiffusionConfig:
    kernel_x: KernelParams = field(default_factory=KernelParams)
    kernel_a: KernelParams = field(default_factory=KernelParams)
    lambda_x: float = 0.1
    lambda_a: float = 0.1
    maxiters: int = 1000
    lr: float = 1e-2
    weight_decay: float = 1e-4
    # Caps the global gradient norm per step; the quadratic structure head
    # otherwise feeds its own output back into its gradients and can blow up.
    clip_norm: float | None = 100.0

    def __post_init__(self):
        if self.lambda_x < 0.0 or self.lambda_a < 0.0:
            raise ValueError("fairness scales must be nonnegative")
        if self.maxiters < 0:
            raise ValueError(f"maxiters must be nonnegative, got {self.maxiters}")
        if self.lr <= 0.0 or self.weight_decay < 0.0:
            raise ValueError("need lr > 0 and weight_decay >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0.0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")


@dataclass(frozen=True)
class PerturbResult:
    """Everything drawn or derived during one forward perturbation.

    Kept verbatim so losses (and tests) can rebuild the perturbed state
    without re-running the sampler.
    """

    t: float
    x_t: np.ndarray
    a_t: np.ndarray
    eps_x: np.ndarray
    eps_a: np.ndarray
    grad_x: np.ndarray
    grad_a: np.ndarray
    gamma_x: float
    gamma_a: float
    sigma_x: float
    sigma_a: float


def _resolve_grads(
    sub: Subgraph,
    adversary: dict[str, Tensor] | None,
    cfg: DiffusionConfig,
    input_grads: tuple[np.ndarray, np.ndarray] | None,
) -> tuple[np.ndarray, np.ndarray]:
    if input_grads is not None:
        return input_grads
    if adversary is None:
        if cfg.lambda_x != 0.0 or cfg.lambda_a != 0.0:
            raise ValueError("an adversary is required when a fairness scale is nonzero")
        return np.zeros_like(sub.features), np.zeros_like(sub.adjacency)
    return adv.input_gradients(adversary, sub)


def forward_perturb(
    sub: Subgraph,
    t: float,
    adversary: dict[str, Tensor] | None,
    cfg: DiffusionConfig,
    rng: np.random.Generator,
    *,
    input_grads: tuple[np.ndarray, np.ndarray] | None = None,
) -> PerturbResult:
    """Perturb one subgraph to time t.

    X_t = m_t X_0 + sigma_t eps_X - gamma_X grad_X, adjacency analogous with
    symmetrized noise. ``input_grads`` short-circuits the adversary backward
    pass when the gradients were precomputed (they depend only on the clean
    subgraph). Noise is drawn eps_X first, then eps_A.
    """
    if not 0.0 <= t <= cfg.kernel_x.horizon:
        raise ValueError(f"t must lie in [0, {cfg.kernel_x.horizon}], got {t}")
    grad_x, grad_a = _resolve_grads(sub, adversary, cfg, input_grads)

    eps_x = rng.standard_normal(sub.features.shape)
    eps_a = symmetrize_noise(rng.standard_normal(sub.adjacency.shape))

    sigma_x = cfg.kernel_x.sigma(t)
    sigma_a = cfg.kernel_a.sigma(t)
    noise_x = sigma_x * eps_x
    noise_a = sigma_a * eps_a
    gamma_x = gamma_coeff(noise_x, grad_x, cfg.lambda_x)
    gamma_a = gamma_coeff(noise_a, grad_a, cfg.lambda_a)

    x_t = cfg.kernel_x.mean_scale(t) * sub.features + noise_x - gamma_x * grad_x
    a_t = cfg.kernel_a.mean_scale(t) * sub.adjacency + noise_a - gamma_a * grad_a
    return PerturbResult(
        t=t,
        x_t=x_t,
        a_t=a_t,
        eps_x=eps_x,
        eps_a=eps_a,
        grad_x=grad_x,
        grad_a=grad_a,
        gamma_x=gamma_x,
        gamma_a=gamma_a,
        sigma_x=sigma_x,
        sigma_a=sigma_a,
    )


# -- score networks ----------------------------------------------------------


def init_feature_score(rng: np.random.Generator, in_dim: int) -> dict[str, Tensor]:
    """Feature score net: 3 tanh GCN layers, skip-concat, 3-layer relu MLP."""
    params: dict[str, Tensor] = {}
    dim = in_dim
    for layer in range(N_FEATURE_GCN):
        params[f"gcn{layer}.w"], params[f"gcn{layer}.b"] = init_linear(rng, dim, FEATURE_HIDDEN)
        dim = FEATURE_HIDDEN
    concat_dim = in_dim + N_FEATURE_GCN * FEATURE_HIDDEN
    params["mlp0.w"], params["mlp0.b"] = init_linear(rng, concat_dim, FEATURE_HIDDEN)
    params["mlp1.w"], params["mlp1.b"] = init_linear(rng, FEATURE_HIDDEN, FEATURE_HIDDEN)
    params["mlp2.w"], params["mlp2.b"] = init_linear(rng, FEATURE_HIDDEN, in_dim)
    return params


def score_features(params: dict[str, Tensor], x, a, *, norm=None) -> Tensor:
    """Raw (unscaled) feature score; shape matches the feature matrix."""
    if norm is None:
        norm = normalized_adjacency(a)
    h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    outs = [h]
    for layer in range(N_FEATURE_GCN):
        h = ad.tanh(gcn_forward(h, a, params[f"gcn{layer}.w"], params[f"gcn{layer}.b"], norm=norm))
        outs.append(h)
    z = ad.concat(outs, axis=1)
    z = ad.relu(linear_forward(z, params["mlp0.w"], params["mlp0.b"]))
    z = ad.relu(linear_forward(z, params["mlp1.w"], params["mlp1.b"]))
    return linear_forward(z, params["mlp2.w"], params["mlp2.b"])


def init_structure_score(rng: np.random.Generator, in_dim: int) -> dict[str, Tensor]:
    """Structure score net: 5 elu GCN layers, attention over every
    (layer output, adjacency power) pair, an elu MLP, and a symmetric
    bilinear head producing an n x n score."""
    params: dict[str, Tensor] = {}
    dim = in_dim
    for layer in range(N_STRUCT_GCN):
        params[f"gcn{layer}.w"], params[f"gcn{layer}.b"] = init_linear(rng, dim, STRUCT_HIDDEN)
        dim = STRUCT_HIDDEN
    for j in range(N_STRUCT_GCN + 1):
        head_in = in_dim if j == 0 else STRUCT_HIDDEN
        for p in range(1, N_ADJ_POWERS + 1):
            for key, value in init_gmh(rng, head_in, GMH_OUT, N_HEADS, HEAD_DIM).items():
                params[f"gmh{j}p{p}.{key}"] = value
    concat_dim = (N_STRUCT_GCN + 1) * N_ADJ_POWERS * GMH_OUT
    params["mlp0.w"], params["mlp0.b"] = init_linear(rng, concat_dim, STRUCT_HIDDEN)
    params["mlp1.w"], params["mlp1.b"] = init_linear(rng, STRUCT_HIDDEN, STRUCT_HIDDEN)
    params["mlp2.w"], params["mlp2.b"] = init_linear(rng, STRUCT_HIDDEN, STRUCT_HIDDEN)
    return params


def _gmh_subparams(params: dict[str, Tensor], j: int, p: int) -> dict[str, Tensor]:
    prefix = f"gmh{j}p{p}."
    return {key[len(prefix):]: value for key, value in params.items() if key.startswith(prefix)}


def score_structure(params: dict[str, Tensor], x, a, *, norm=None) -> Tensor:
    """Raw (unscaled) structure score; symmetric with a zero diagonal."""
    a_op = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float64))
    if norm is None:
        norm = normalized_adjacency(a_op)
    h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    outs = [h]
    for layer in range(N_STRUCT_GCN):
        h = ad.elu(gcn_forward(h, a_op, params[f"gcn{layer}.w"], params[f"gcn{layer}.b"], norm=norm))
        outs.append(h)

    # Attention masks need nonnegative weights; entries driven negative by the
    # diffusion noise are treated as absent edges.
    a_pos = ad.relu(a_op)
    powers = [adjacency_power(a_pos, p) for p in range(1, N_ADJ_POWERS + 1)]

    cols = []
    for j, h_j in enumerate(outs):
        for p, a_p in enumerate(powers, start=1):
            cols.append(gmh_forward(h_j, a_p, _gmh_subparams(params, j, p), N_HEADS))
    z = ad.concat(cols, axis=1)
    z = ad.elu(linear_forward(z, params["mlp0.w"], params["mlp0.b"]))
    z = ad.elu(linear_forward(z, params["mlp1.w"], params["mlp1.b"]))
    z = linear_forward(z, params["mlp2.w"], params["mlp2.b"])

    half = STRUCT_HIDDEN // 2
    pick_lo = np.vstack([np.eye(half), np.zeros((STRUCT_HIDDEN - half, half))])
    pick_hi = np.vstack([np.zeros((STRUCT_HIDDEN - half, half)), np.eye(half)])
    z1 = ad.matmul(z, Tensor(pick_lo))
    z2 = ad.matmul(z, Tensor(pick_hi))
    score = ad.matmul(z1, z2.T) + ad.matmul(z2, z1.T)
    n = score.data.shape[0]
    return ad.apply_mask(score, 1.0 - np.eye(n))


@dataclass
class ScoreModelParams:
    theta: dict[str, Tensor]
    phi: dict[str, Tensor]


def score_losses(
    models: ScoreModelParams,
    sub: Subgraph,
    t: float,
    perturb: PerturbResult,
    *,
    t_floor: float = 1e-5,
) -> tuple[Tensor, Tensor]:
    """Squared-residual losses for both score nets on one perturbed subgraph.

    The networks see the perturbed state and their raw outputs are scaled by
    sigma_t; the targets are eps + (gamma / sigma_t) grad per channel. With
    both fairness scales at zero this is plain denoising score matching.

    The fairness term deliberately opposes the -gamma grad push applied by
    forward_perturb: the reverse sampler starts at real data and re-applies
    the learned field, so debiasing needs that field to point toward higher
    adversary loss (less recoverable S), not lower.
    """
    if t < t_floor:
        raise ValueError(f"t must be at least {t_floor}, got {t}")
    a_t = Tensor(perturb.a_t)
    norm = normalized_adjacency(a_t)

    raw_x = score_features(models.theta, perturb.x_t, a_t, norm=norm)
    target_x = perturb.eps_x + (perturb.gamma_x / perturb.sigma_x) * perturb.grad_x
    res_x = raw_x * perturb.sigma_x - Tensor(target_x)
    loss_theta = (res_x * res_x).sum()

    raw_a = score_structure(models.phi, perturb.x_t, a_t, norm=norm)
    target_a = perturb.eps_a + (perturb.gamma_a / perturb.sigma_a) * perturb.grad_a
    res_a = raw_a * perturb.sigma_a - Tensor(target_a)
    loss_phi = (res_a * res_a).sum()
    return loss_theta, loss_phi


def train_score_models(
    subgraphs: list[Subgraph],
    adversary: dict[str, Tensor] | None,
    cfg: DiffusionConfig,
    seed: int,
) -> tuple[ScoreModelParams, list[tuple[int, float, float]]]:
    """Jointly train both score nets with per-iteration Monte Carlo sampling.

    Each iteration draws t, a subgraph index, then the perturbation noise,
    and takes one Adam step on each net. Adversary input gradients depend
    only on the clean subgraphs, so they are computed once up front.
    """
    if not subgraphs:
        raise ValueError("train_score_models: empty subgraph set")
    rng = np.random.default_rng(seed)
    in_dim = subgraphs[0].features.shape[1]
    models = ScoreModelParams(
        theta=init_feature_score(rng, in_dim),
        phi=init_structure_score(rng, in_dim),
    )
    grads = [_resolve_grads(sub, adversary, cfg, None) for sub in subgraphs]

    opt_theta = Adam(models.theta, lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    opt_phi = Adam(models.phi, lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    t_floor = cfg.kernel_x.t_floor
    horizon = cfg.kernel_x.horizon

    curve: list[tuple[int, float, float]] = []
    for iteration in range(cfg.maxiters):
        t = rng.uniform(t_floor, horizon)
        idx = int(rng.integers(len(subgraphs)))
        sub = subgraphs[idx]
        perturb = forward_perturb(sub, t, adversary, cfg, rng, input_grads=grads[idx])
        loss_theta, loss_phi = score_losses(models, sub, t, perturb, t_floor=t_floor)
        ad.backward(loss_theta + loss_phi)
        opt_theta.step()
        opt_phi.step()
        opt_theta.zero_grad()
        opt_phi.zero_grad()
        curve.append((iteration, float(loss_theta.data), float(loss_phi.data)))
    return models, curve


class DiffusionScoreModels(BaseEstimator):
    """Trains the pair of score nets and evaluates sigma-scaled scores."""

    def __init__(
        self,
        lambda_x: float = 0.1,
        lambda_a: float = 0.1,
        maxiters: int = 1000,
        lr: float = 1e-2,
        weight_decay: float = 1e-4,
        beta_min: float = 0.1,
        beta_max: float = 1.0,
        seed: int = 0,
    ):
        self.lambda_x = lambda_x
        self.lambda_a = lambda_a
        self.maxiters = maxiters
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.seed = seed

    def _config(self) -> DiffusionConfig:
        kernel = KernelParams(beta_min=self.beta_min, beta_max=self.beta_max)
        return DiffusionConfig(
            kernel_x=kernel,
            kernel_a=kernel,
            lambda_x=self.lambda_x,
            lambda_a=self.lambda_a,
            maxiters=self.maxiters,
            lr=self.lr,
            weight_decay=self.weight_decay,
        )

    def fit(self, subgraphs: list[Subgraph], adversary=None):
        if not subgraphs:
            raise ValueError("fit: empty subgraph set")
        if hasattr(adversary, "params_"):
            adversary = adversary.params_
        cfg = self._config()
        self.n_features_in_ = subgraphs[0].features.shape[1]
        self.models_, curve = train_score_models(subgraphs, adversary, cfg, self.seed)
        self.curve_ = curve
        return self

    def _check_fitted(self):
        if not hasattr(self, "models_"):
            raise RuntimeError("DiffusionScoreModels is not fitted; call fit first")

    def feature_score(self, x: np.ndarray, a: np.ndarray, t: float) -> np.ndarray:
        """sigma_t-scaled feature score at state (x, a)."""
        self._check_fitted()
        raw = score_features(self.models_.theta, x, a)
        return self._config().kernel_x.sigma(t) * raw.data

    def structure_score(self, x: np.ndarray, a: np.ndarray, t: float) -> np.ndarray:
        """sigma_t-scaled structure score at state (x, a)."""
        self._check_fitted()
        raw = score_structure(self.models_.phi, x, a)
        return self._config().kernel_a.sigma(t) * raw.data
