"""Graph loading, the biased SBM generator, and stratified splits."""

from __future__ import annotations

import warnings

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from fairdiff.data import (
    SPLIT_NAMES,
    TEST,
    TRAIN,
    VAL,
    DataError,
    Graph,
    SbmBiasConfig,
    generate_biased_sbm,
    load_graph,
    save_graph,
    split_nodes,
)


def write_csv(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in row) for row in rows) + "\n")


def tiny_files(tmp_path, edges):
    nodes = tmp_path / "nodes.csv"
    edge_file = tmp_path / "edges.csv"
    splits = tmp_path / "splits.csv"
    write_csv(
        nodes,
        [
            ["node_id", "sensitive", "label", "f0", "f1"],
            [0, 0, 1, 0.5, -1.0],
            [1, 1, 0, 1.5, 2.0],
            [2, 0, 0, -0.5, 0.25],
        ],
    )
    write_csv(edge_file, [["src", "dst"]] + edges)
    write_csv(splits, [["node_id", "split"], [0, "train"], [1, "val"], [2, "test"]])
    return nodes, edge_file, splits


def test_load_graph_deduplicates_reversed_edges(tmp_path):
    nodes, edges, splits = tiny_files(tmp_path, [[0, 1], [1, 0], [1, 2]])
    g = load_graph(nodes, edges, splits, standardize=False)
    assert g.n_nodes == 3
    assert int(np.count_nonzero(g.adjacency)) == 4  # 2 undirected edges
    np.testing.assert_array_equal(g.adjacency, g.adjacency.T)
    np.testing.assert_array_equal(g.split, [TRAIN, VAL, TEST])


def test_load_graph_drops_self_loops_with_warning(tmp_path):
    nodes, edges, splits = tiny_files(tmp_path, [[0, 0], [0, 1]])
    with pytest.warns(UserWarning, match="self-loop"):
        g = load_graph(nodes, edges, splits, standardize=False)
    assert np.diag(g.adjacency).sum() == 0.0
    assert int(np.count_nonzero(g.adjacency)) == 2


def test_load_graph_unknown_edge_endpoint_names_id(tmp_path):
    nodes, edges, splits = tiny_files(tmp_path, [[0, 99]])
    with pytest.raises(DataError, match="unknown node id 99"):
        load_graph(nodes, edges, splits)


def test_load_graph_rejects_non_binary_labels(tmp_path):
    nodes, edges, splits = tiny_files(tmp_path, [[0, 1]])
    text = nodes.read_text().replace("0,0,1,", "0,0,3,")
    nodes.write_text(text)
    with pytest.raises(DataError, match="non-binary label"):
        load_graph(nodes, edges, splits)


def test_load_graph_standardizes_and_can_append_sensitive(tmp_path):
    nodes, edges, splits = tiny_files(tmp_path, [[0, 1]])
    g = load_graph(nodes, edges, splits, standardize=True, include_sensitive=True)
    assert g.n_features == 3
    np.testing.assert_allclose(g.features[:, :2].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(g.features[:, :2].std(axis=0), 1.0, atol=1e-12)
    np.testing.assert_array_equal(g.features[:, 2], g.sensitive)


def test_save_load_round_trip_is_identity(tmp_path):
    g = generate_biased_sbm(SbmBiasConfig(n_nodes=24, n_features=3, homophily=0.3, cross_prob=0.1, seed=5))
    g = split_nodes(g, (0.5, 0.25, 0.25), seed=1)
    paths = (tmp_path / "n.csv", tmp_path / "e.csv", tmp_path / "s.csv")
    save_graph(g, *paths)
    back = load_graph(*paths, standardize=False)
    np.testing.assert_array_equal(back.features, g.features)
    np.testing.assert_array_equal(back.adjacency, g.adjacency)
    np.testing.assert_array_equal(back.sensitive, g.sensitive)
    np.testing.assert_array_equal(back.labels, g.labels)
    np.testing.assert_array_equal(back.split, g.split)


def test_graph_validation_rejects_asymmetric_adjacency():
    a = np.zeros((2, 2))
    a[0, 1] = 1.0
    with pytest.raises(ValueError, match="symmetric"):
        Graph(np.zeros((2, 1)), a, [0, 1], [0, 1])


def test_sbm_is_deterministic_for_config():
    cfg = SbmBiasConfig(n_nodes=40, homophily=0.2, cross_prob=0.05, label_bias=0.3, feature_leak=1.0, seed=9)
    g1, g2 = generate_biased_sbm(cfg), generate_biased_sbm(cfg)
    np.testing.assert_array_equal(g1.features, g2.features)
    np.testing.assert_array_equal(g1.adjacency, g2.adjacency)
    np.testing.assert_array_equal(g1.labels, g2.labels)


def test_sbm_group_sizes_within_one_node():
    for frac in (0.3, 0.5, 0.71):
        g = generate_biased_sbm(SbmBiasConfig(n_nodes=101, group_fraction=frac, seed=2))
        assert abs(int(g.sensitive.sum()) - frac * 101) <= 1.0


def test_sbm_edge_counts_within_three_sigma():
    cfg = SbmBiasConfig(n_nodes=200, homophily=0.1, cross_prob=0.02, seed=3)
    g = generate_biased_sbm(cfg)
    same = g.sensitive[:, None] == g.sensitive[None, :]
    for mask, p in ((same, cfg.homophily), (~same, cfg.cross_prob)):
        pairs = int(np.triu(mask, k=1).sum())
        edges = int((np.triu(g.adjacency, k=1) > 0)[np.triu(mask, k=1)].sum())
        sigma = np.sqrt(pairs * p * (1 - p))
        assert abs(edges - pairs * p) <= 3 * sigma


def test_sbm_label_bias_shows_up_in_conditional_rates():
    g = generate_biased_sbm(SbmBiasConfig(n_nodes=4000, label_bias=0.4, seed=4))
    rate1 = g.labels[g.sensitive == 1].mean()
    rate0 = g.labels[g.sensitive == 0].mean()
    assert abs((rate1 - rate0) - 0.4) < 0.05


def test_sbm_leak_probe_accuracy():
    # with no leak and no label bias a linear probe cannot recover S ...
    g0 = generate_biased_sbm(SbmBiasConfig(n_nodes=600, feature_leak=0.0, label_bias=0.0, seed=6))
    half = g0.n_nodes // 2
    probe = LogisticRegression(max_iter=500).fit(g0.features[:half], g0.sensitive[:half])
    acc0 = probe.score(g0.features[half:], g0.sensitive[half:])
    assert 0.4 <= acc0 <= 0.6
    # ... while a strong leak makes S trivially separable
    g3 = generate_biased_sbm(SbmBiasConfig(n_nodes=600, feature_leak=3.0, seed=6))
    probe = LogisticRegression(max_iter=500).fit(g3.features[:half], g3.sensitive[:half])
    assert probe.score(g3.features[half:], g3.sensitive[half:]) > 0.95


def test_sbm_rejects_invalid_probabilities():
    with pytest.raises(ValueError, match="homophily"):
        SbmBiasConfig(homophily=1.5)
    with pytest.raises(DataError, match="label_bias"):
        SbmBiasConfig(label_bias=2.0)


def test_split_totals_exact_and_cells_within_one():
    g = generate_biased_sbm(SbmBiasConfig(n_nodes=100, label_bias=0.2, seed=7))
    out = split_nodes(g, (0.2, 0.35, 0.45), seed=0)
    sizes = [int((out.split == code).sum()) for code in (TRAIN, VAL, TEST)]
    assert sizes == [20, 35, 45]
    for s in (0, 1):
        for y in (0, 1):
            cell = (out.sensitive == s) & (out.labels == y)
            for code, frac in zip((TRAIN, VAL, TEST), (0.2, 0.35, 0.45)):
                got = int(((out.split == code) & cell).sum())
                assert abs(got - frac * cell.sum()) <= 1.0


def test_split_is_deterministic_and_seed_sensitive():
    g = generate_biased_sbm(SbmBiasConfig(n_nodes=80, label_bias=0.2, seed=8))
    a = split_nodes(g, (0.5, 0.0, 0.5), seed=3).split
    b = split_nodes(g, (0.5, 0.0, 0.5), seed=3).split
    c = split_nodes(g, (0.5, 0.0, 0.5), seed=4).split
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_split_all_train_fraction():
    g = generate_biased_sbm(SbmBiasConfig(n_nodes=30, seed=1))
    out = split_nodes(g, (1.0, 0.0, 0.0), seed=0)
    assert np.all(out.split == TRAIN)


def test_split_empty_stratum_falls_back_with_warning():
    g = generate_biased_sbm(SbmBiasConfig(n_nodes=30, label_bias=1.0, seed=2))
    # label_bias=1 makes Y == S, so the (0,1) and (1,0) cells are empty
    with pytest.warns(UserWarning, match="stratum"):
        out = split_nodes(g, (0.5, 0.0, 0.5), seed=0)
    assert int((out.split == TRAIN).sum()) == 15


def test_split_rejects_bad_fractions():
    g = generate_biased_sbm(SbmBiasConfig(n_nodes=20, seed=3))
    with pytest.raises(DataError, match="fractions"):
        split_nodes(g, (0.5, 0.5, 0.5), seed=0)


def test_nba_format_sized_fixture_loads(tmp_path):
    rng = np.random.default_rng(0)
    n = 403
    x = rng.normal(size=(n, 5))
    upper = np.triu(rng.random((n, n)) < 0.01, k=1)
    g = Graph(
        x,
        (upper | upper.T).astype(np.float64),
        rng.integers(0, 2, n),
        rng.integers(0, 2, n),
    )
    g = split_nodes(g, (0.2, 0.35, 0.45), seed=0)
    paths = (tmp_path / "nodes.csv", tmp_path / "edges.csv", tmp_path / "splits.csv")
    save_graph(g, *paths)
    back = load_graph(*paths)
    assert back.n_nodes == 403
    assert {int((back.split == c).sum()) for c in (TRAIN, VAL, TEST)} == {81, 141, 181}
    assert SPLIT_NAMES == ("train", "val", "test")
