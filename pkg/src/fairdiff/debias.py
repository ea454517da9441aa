"""Predictor-corrector reverse diffusion that rewrites subgraphs in place.

The reverse process starts from the observed (biased) subgraph rather than
pure noise, walks the discretized SDE backwards with the trained score nets,
and finishes with an edge-pruning pass. Weak edges lose their weight; strong
ones keep it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .diffusion import KernelParams, ScoreModelParams, score_features, score_structure, symmetrize_noise
from .sampling import Subgraph, replace_subgraph_tensors

__all__ = [
    "SamplerParams",
    "predictor_step",
    "corrector_step",
    "reverse_diffusion",
    "prune_edges",
    "SubgraphDebiaser",
]

SCORE_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class SamplerParams:
    """Reverse-diffusion discretization and pruning settings."""

    n_steps: int = 5
    r_x: float = 0.05
    r_a: float = 0.05
    tau: float = 0.5
    kernel_x: KernelParams = field(default_factory=KernelParams)
    kernel_a: KernelParams = field(default_factory=KernelParams)

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.r_x <= 0.0 or self.r_a <= 0.0:
            raise ValueError("signal-to-noise ratios must be positive")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")

    def beta_step(self, j: int, kernel: KernelParams) -> float:
        """Discrete schedule value beta_{j+1}, spanning (beta_min, beta_max]."""
        if not 0 <= j < self.n_steps:
            raise ValueError(f"step index must lie in [0, {self.n_steps}), got {j}")
        return kernel.beta((j + 1) / self.n_steps)

    def step_time(self, j: int) -> float:
        """Score-model evaluation time for step j."""
        if not 0 <= j < self.n_steps:
            raise ValueError(f"step index must lie in [0, {self.n_steps}), got {j}")
        return (j + 1) / self.n_steps * self.kernel_x.horizon


def predictor_step(
    x: np.ndarray,
    a: np.ndarray,
    j: int,
    scores: tuple[np.ndarray, np.ndarray],
    params: SamplerParams,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """One Euler-Maruyama step backwards.

    ``scores`` are the sigma-scaled score evaluations at the current state.
    Noise is drawn eps_X first, then eps_A (symmetrized).
    """
    score_x, score_a = scores
    beta_x = params.beta_step(j, params.kernel_x)
    beta_a = params.beta_step(j, params.kernel_a)
    eps_x = rng.standard_normal(x.shape)
    eps_a = symmetrize_noise(rng.standard_normal(a.shape))
    x_next = x + 0.5 * beta_x * x + beta_x * score_x + np.sqrt(beta_x) * eps_x
    a_next = a + 0.5 * beta_a * a + beta_a * score_a + np.sqrt(beta_a) * eps_a
    return x_next, a_next


def _langevin_weight(r: float, eps: np.ndarray, score: np.ndarray) -> float:
    score_norm = float(np.linalg.norm(score))
    if score_norm < SCORE_NORM_FLOOR:
        return 0.0
    return 2.0 * (r * float(np.linalg.norm(eps)) / score_norm) ** 2


def corrector_step(
    x: np.ndarray,
    a: np.ndarray,
    j: int,
    scores: tuple[np.ndarray, np.ndarray],
    params: SamplerParams,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """One Langevin correction with signal-to-noise-matched step sizes.

    omega = 2 (r ||eps|| / ||score||)^2 per channel; a vanishing score norm
    turns the step into a no-op. Same draw order as the predictor.
    """
    if not 0 <= j < params.n_steps:
        raise ValueError(f"step index must lie in [0, {params.n_steps}), got {j}")
    score_x, score_a = scores
    eps_x = rng.standard_normal(x.shape)
    eps_a = symmetrize_noise(rng.standard_normal(a.shape))
    omega_x = _langevin_weight(params.r_x, eps_x, score_x)
    omega_a = _langevin_weight(params.r_a, eps_a, score_a)
    x_next = x + omega_x * score_x + np.sqrt(2.0 * omega_x) * eps_x
    a_next = a + omega_a * score_a + np.sqrt(2.0 * omega_a) * eps_a
    return x_next, a_next


def reverse_diffusion(
    sub: Subgraph,
    models: ScoreModelParams,
    params: SamplerParams,
    rng: np.random.Generator,
) -> Subgraph:
    """Run the full predictor-corrector pass starting from the data.

    Steps j = n_steps-1 down to 0; the predictor consumes scores at the
    current state, the corrector consumes scores re-evaluated at the
    predicted state, both at time (j+1)/n_steps. Returns the debiased
    subgraph with the adjacency clamped to [0, 1] (not yet pruned).
    """
    x = sub.features.copy()
    a = sub.adjacency.copy()
    for j in range(params.n_steps - 1, -1, -1):
        t = params.step_time(j)
        sigma_x = params.kernel_x.sigma(t)
        sigma_a = params.kernel_a.sigma(t)
        scores = (
            sigma_x * score_features(models.theta, x, a).data,
            sigma_a * score_structure(models.phi, x, a).data,
        )
        x, a = predictor_step(x, a, j, scores, params, rng)
        scores = (
            sigma_x * score_features(models.theta, x, a).data,
            sigma_a * score_structure(models.phi, x, a).data,
        )
        x, a = corrector_step(x, a, j, scores, params, rng)
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    np.clip(a, 0.0, 1.0, out=a)
    return replace_subgraph_tensors(sub, x, a)


def prune_edges(a: np.ndarray, tau: float) -> np.ndarray:
    """Zero out entries below tau, keeping the surviving weights as-is."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError("prune_edges expects entries in [0, 1]")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return np.where(a >= tau, a, 0.0)


class SubgraphDebiaser(BaseEstimator):
    """Applies reverse diffusion plus pruning to a full subgraph set.

    Each subgraph gets its own RNG substream keyed by (seed, position), so
    results do not depend on iteration order or subset choice.
    """

    def __init__(
        self,
        n_steps: int = 5,
        r_x: float = 0.05,
        r_a: float = 0.05,
        tau: float = 0.5,
        beta_min: float = 0.1,
        beta_max: float = 1.0,
        seed: int = 0,
    ):
        self.n_steps = n_steps
        self.r_x = r_x
        self.r_a = r_a
        self.tau = tau
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.seed = seed

    def _params(self) -> SamplerParams:
        kernel = KernelParams(beta_min=self.beta_min, beta_max=self.beta_max)
        return SamplerParams(
            n_steps=self.n_steps,
            r_x=self.r_x,
            r_a=self.r_a,
            tau=self.tau,
            kernel_x=kernel,
            kernel_a=kernel,
        )

    def fit(self, models):
        """Accepts trained ScoreModelParams (or a fitted estimator holding them)."""
        if hasattr(models, "models_"):
            models = models.models_
        if not isinstance(models, ScoreModelParams):
            raise TypeError("fit expects ScoreModelParams or a fitted DiffusionScoreModels")
        self.models_ = models
        return self

    def transform(self, subgraphs: list[Subgraph]) -> list[Subgraph]:
        if not hasattr(self, "models_"):
            raise RuntimeError("SubgraphDebiaser is not fitted; call fit first")
        params = self._params()
        out = []
        for index, sub in enumerate(subgraphs):
            rng = np.random.default_rng([self.seed, index])
            debiased = reverse_diffusion(sub, self.models_, params, rng)
            pruned = prune_edges(debiased.adjacency, params.tau)
            out.append(replace_subgraph_tensors(debiased, debiased.features, pruned))
        return out
