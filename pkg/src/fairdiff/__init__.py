"""Fairness-aware subgraph diffusion for debiased node classification."""

from __future__ import annotations

from .autodiff import Tensor, backward, finite_diff_grad, gradients

__all__ = [
    "Tensor",
    "backward",
    "gradients",
    "finite_diff_grad",
]

__version__ = "0.1.0"
