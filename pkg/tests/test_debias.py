"""Reverse diffusion: step oracles, pruning, and the debiaser transform."""

from __future__ import annotations

import numpy as np
import pytest

from fairdiff.debias import (
    SamplerParams,
    SubgraphDebiaser,
    corrector_step,
    predictor_step,
    prune_edges,
    reverse_diffusion,
)
from fairdiff.diffusion import (
    DiffusionConfig,
    KernelParams,
    ScoreModelParams,
    init_feature_score,
    init_structure_score,
    symmetrize_noise,
    train_score_models,
)
from tests.test_adversary import make_subgraphs
from tests.test_diffusion import ZeroNoise, fresh_models


class FakeRng:
    """Returns pre-baked arrays in call order."""

    def __init__(self, *arrays):
        self.arrays = list(arrays)

    def standard_normal(self, shape):
        out = self.arrays.pop(0)
        assert out.shape == tuple(shape)
        return out


def random_state(rng, n=7, d=3):
    x = rng.standard_normal((n, d))
    a = np.abs(symmetrize_noise(rng.standard_normal((n, n))))
    np.fill_diagonal(a, 0.0)
    return x, a


def zero_models(in_dim=3) -> ScoreModelParams:
    models = fresh_models(in_dim=in_dim, seed=0)
    for net in (models.theta, models.phi):
        for key in ("mlp2.w", "mlp2.b"):
            net[key].data = np.zeros_like(net[key].data)
    return models


def test_predictor_step_matches_straight_line_recomputation():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x, a = random_state(rng)
        params = SamplerParams(n_steps=4)
        j = int(rng.integers(4))
        score_x = rng.standard_normal(x.shape)
        score_a = symmetrize_noise(rng.standard_normal(a.shape))

        x_new, a_new = predictor_step(x, a, j, (score_x, score_a), params, np.random.default_rng(seed + 1000))

        replay = np.random.default_rng(seed + 1000)
        eps_x = replay.standard_normal(x.shape)
        eps_a = symmetrize_noise(replay.standard_normal(a.shape))
        beta = 0.1 + (j + 1) / 4 * 0.9
        np.testing.assert_allclose(x_new, x + 0.5 * beta * x + beta * score_x + np.sqrt(beta) * eps_x, atol=1e-12)
        np.testing.assert_allclose(a_new, a + 0.5 * beta * a + beta * score_a + np.sqrt(beta) * eps_a, atol=1e-12)


def test_predictor_drift_only_and_schedule_endpoint():
    rng = np.random.default_rng(0)
    x, a = random_state(rng)
    params = SamplerParams(n_steps=5)
    zeros = (np.zeros_like(x), np.zeros_like(a))
    x_new, a_new = predictor_step(x, a, 4, zeros, params, ZeroNoise())
    beta = params.beta_step(4, params.kernel_x)
    assert beta == pytest.approx(1.0, abs=1e-15)  # j = n_steps-1 hits beta_max
    np.testing.assert_allclose(x_new, (1.0 + beta / 2.0) * x, atol=1e-15)
    np.testing.assert_allclose(a_new, (1.0 + beta / 2.0) * a, atol=1e-15)


def test_step_index_validation():
    rng = np.random.default_rng(0)
    x, a = random_state(rng)
    params = SamplerParams(n_steps=3)
    zeros = (np.zeros_like(x), np.zeros_like(a))
    for j in (-1, 3):
        with pytest.raises(ValueError, match="step index"):
            predictor_step(x, a, j, zeros, params, rng)
        with pytest.raises(ValueError, match="step index"):
            corrector_step(x, a, j, zeros, params, rng)


def test_corrector_omega_worked_example():
    # r=0.05, ||eps||=2, ||score||=1 -> omega = 0.02 exactly.
    x = np.zeros((2, 2))
    a = np.zeros((2, 2))
    eps_x = np.array([[2.0, 0.0], [0.0, 0.0]])
    raw_a = np.zeros((2, 2))
    score_x = np.array([[1.0, 0.0], [0.0, 0.0]])
    score_a = np.zeros((2, 2))
    params = SamplerParams(n_steps=1, r_x=0.05)
    x_new, a_new = corrector_step(x, a, 0, (score_x, score_a), params, FakeRng(eps_x, raw_a))
    omega = 0.02
    np.testing.assert_allclose(x_new, omega * score_x + np.sqrt(2 * omega) * eps_x, atol=1e-15)
    np.testing.assert_array_equal(a_new, a)  # zero score -> guarded no-op


def test_corrector_matches_straight_line_recomputation():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x, a = random_state(rng)
        params = SamplerParams(n_steps=3, r_x=0.05, r_a=0.08)
        score_x = rng.standard_normal(x.shape)
        score_a = symmetrize_noise(rng.standard_normal(a.shape))

        x_new, a_new = corrector_step(x, a, 1, (score_x, score_a), params, np.random.default_rng(seed + 2000))

        replay = np.random.default_rng(seed + 2000)
        eps_x = replay.standard_normal(x.shape)
        eps_a = symmetrize_noise(replay.standard_normal(a.shape))
        omega_x = 2.0 * (0.05 * np.linalg.norm(eps_x) / np.linalg.norm(score_x)) ** 2
        omega_a = 2.0 * (0.08 * np.linalg.norm(eps_a) / np.linalg.norm(score_a)) ** 2
        np.testing.assert_allclose(x_new, x + omega_x * score_x + np.sqrt(2 * omega_x) * eps_x, atol=1e-12)
        np.testing.assert_allclose(a_new, a + omega_a * score_a + np.sqrt(2 * omega_a) * eps_a, atol=1e-12)


def test_corrector_zero_noise_is_identity():
    rng = np.random.default_rng(1)
    x, a = random_state(rng)
    scores = (rng.standard_normal(x.shape), symmetrize_noise(rng.standard_normal(a.shape)))
    x_new, a_new = corrector_step(x, a, 0, scores, SamplerParams(n_steps=1), ZeroNoise())
    np.testing.assert_array_equal(x_new, x)
    np.testing.assert_array_equal(a_new, a)


def test_reverse_diffusion_drift_only_oracle():
    sub = make_subgraphs(seed=30)[0]
    params = SamplerParams(n_steps=4, tau=0.5)
    models = zero_models(in_dim=4)
    out = reverse_diffusion(sub, models, params, ZeroNoise())

    scale = 1.0
    for j in range(params.n_steps):
        scale *= 1.0 + params.beta_step(j, params.kernel_x) / 2.0
    np.testing.assert_allclose(out.features, scale * sub.features, atol=1e-10)
    np.testing.assert_allclose(out.adjacency, np.clip(scale * sub.adjacency, 0.0, 1.0), atol=1e-10)


def test_reverse_diffusion_output_space_and_determinism():
    sub = make_subgraphs(seed=31)[1]
    params = SamplerParams(n_steps=3)
    models = fresh_models(in_dim=4, seed=4)
    out_a = reverse_diffusion(sub, models, params, np.random.default_rng(5))
    out_b = reverse_diffusion(sub, models, params, np.random.default_rng(5))
    out_c = reverse_diffusion(sub, models, params, np.random.default_rng(6))
    adj = out_a.adjacency
    np.testing.assert_array_equal(adj, adj.T)
    np.testing.assert_array_equal(np.diag(adj), np.zeros(adj.shape[0]))
    assert adj.min() >= 0.0 and adj.max() <= 1.0
    assert np.all(np.isfinite(out_a.features))
    np.testing.assert_array_equal(out_a.features, out_b.features)
    np.testing.assert_array_equal(out_a.adjacency, out_b.adjacency)
    assert not np.array_equal(out_a.features, out_c.features)
    # root, ids, labels, masks carry over untouched
    assert out_a.root == sub.root
    np.testing.assert_array_equal(out_a.parent_ids, sub.parent_ids)
    np.testing.assert_array_equal(out_a.labels, sub.labels)


def test_features_remain_finite_over_ten_steps():
    sub = make_subgraphs(seed=32)[0]
    models = fresh_models(in_dim=4, seed=7)
    out = reverse_diffusion(sub, models, SamplerParams(n_steps=10), np.random.default_rng(0))
    assert np.all(np.isfinite(out.features))
    assert np.all(np.isfinite(out.adjacency))


def test_prune_edges_thresholds():
    keep = np.array([[0.0, 0.6], [0.6, 0.0]])
    drop = np.array([[0.0, 0.4], [0.4, 0.0]])
    np.testing.assert_array_equal(prune_edges(keep, 0.5), keep)
    np.testing.assert_array_equal(prune_edges(drop, 0.5), np.zeros((2, 2)))
    boundary = np.array([[0.0, 0.5], [0.5, 0.0]])
    np.testing.assert_array_equal(prune_edges(boundary, 0.5), boundary)  # >= keeps at tau
    just_below = np.array([[0.0, 0.49], [0.49, 0.0]])
    np.testing.assert_array_equal(prune_edges(just_below, 0.5), np.zeros((2, 2)))


def test_prune_edges_properties():
    rng = np.random.default_rng(2)
    a = rng.uniform(size=(8, 8))
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    np.testing.assert_array_equal(prune_edges(a, 0.0), a)
    once = prune_edges(a, 0.37)
    twice = prune_edges(once, 0.37)
    np.testing.assert_array_equal(once, twice)
    assert np.all(once <= a)
    assert np.all((once == 0.0) | (a >= 0.37))
    with pytest.raises(ValueError, match="entries"):
        prune_edges(np.array([[0.0, 1.2], [1.2, 0.0]]), 0.5)
    with pytest.raises(ValueError, match="tau"):
        prune_edges(a, 1.5)


def test_sampler_params_validation():
    with pytest.raises(ValueError):
        SamplerParams(n_steps=0)
    with pytest.raises(ValueError):
        SamplerParams(r_x=0.0)
    with pytest.raises(ValueError):
        SamplerParams(tau=1.2)


def test_debiaser_transform_contract():
    subs = make_subgraphs(seed=33)[:6]
    cfg = DiffusionConfig(lambda_x=0.0, lambda_a=0.0, maxiters=5)
    models, _ = train_score_models(subs, None, cfg, seed=0)

    debiaser = SubgraphDebiaser(n_steps=2, tau=0.5, seed=9).fit(models)
    out = debiaser.transform(subs)
    assert len(out) == len(subs)
    for orig, new in zip(subs, out):
        assert new.adjacency.shape == orig.adjacency.shape
        surviving = new.adjacency[new.adjacency > 0.0]
        assert surviving.size == 0 or surviving.min() >= 0.5
        np.testing.assert_array_equal(new.sensitive, orig.sensitive)

    again = debiaser.transform(subs)
    for first, second in zip(out, again):
        np.testing.assert_array_equal(first.features, second.features)
        np.testing.assert_array_equal(first.adjacency, second.adjacency)

    # per-position substreams: transforming a subset matches the full run
    subset = debiaser.transform(subs[:2])
    np.testing.assert_array_equal(subset[1].features, out[1].features)

    other = SubgraphDebiaser(n_steps=2, tau=0.5, seed=10).fit(models).transform(subs)
    assert not np.array_equal(other[0].features, out[0].features)


def test_debiaser_requires_fit():
    with pytest.raises(RuntimeError, match="not fitted"):
        SubgraphDebiaser().transform(make_subgraphs(seed=34)[:1])
    with pytest.raises(TypeError, match="ScoreModelParams"):
        SubgraphDebiaser().fit({"not": "models"})
