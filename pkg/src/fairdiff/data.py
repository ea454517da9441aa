"""Attributed graphs: CSV ingestion, a biased SBM generator, and node splits.

A graph bundles dense float64 features and adjacency with binary sensitive
attributes, binary labels, and a train/val/test split code per node. File
formats are plain CSV so fixtures can be written by hand:

* nodes:  ``node_id,sensitive,label,f0,...,f{D-1}``
* edges:  ``src,dst`` (undirected; duplicates tolerated, self-loops dropped)
* splits: ``node_id,split`` with split in {train, val, test}
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .validation import check_binary, check_probability, check_symmetric_zero_diag

__all__ = [
    "TRAIN",
    "VAL",
    "TEST",
    "SPLIT_NAMES",
    "DataError",
    "Graph",
    "SbmBiasConfig",
    "load_graph",
    "save_graph",
    "generate_biased_sbm",
    "split_nodes",
]

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass
class Graph:
    """An undirected attributed graph with binary sensitive attribute and label."""

    features: np.ndarray  # (n, d) float64
    adjacency: np.ndarray  # (n, n) float64, symmetric, zero diagonal
    sensitive: np.ndarray  # (n,) int64 in {0, 1}
    labels: np.ndarray  # (n,) int64 in {0, 1}
    split: np.ndarray = field(default=None)  # (n,) int8 codes TRAIN/VAL/TEST

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError(f"features: expected 2-d array, got ndim={self.features.ndim}")
        n = self.features.shape[0]
        self.adjacency = check_symmetric_zero_diag(self.adjacency, "adjacency")
        if self.adjacency.shape[0] != n:
            raise DataError(
                f"adjacency has {self.adjacency.shape[0]} rows for {n} feature rows"
            )
        if np.any(self.adjacency < 0.0):
            raise DataError("adjacency: negative edge weights")
        self.sensitive = check_binary(self.sensitive, "sensitive")
        self.labels = check_binary(self.labels, "labels")
        if self.split is None:
            self.split = np.full(n, TRAIN, dtype=np.int8)
        self.split = np.asarray(self.split, dtype=np.int8)
        for name, arr in (("sensitive", self.sensitive), ("labels", self.labels), ("split", self.split)):
            if arr.shape != (n,):
                raise DataError(f"{name}: expected shape ({n},), got {arr.shape}")
        if not np.all(np.isin(self.split, (TRAIN, VAL, TEST))):
            raise DataError("split: codes must be train/val/test")

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def split_mask(self, code: int) -> np.ndarray:
        return self.split == code

    def neighbors(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[node] > 0.0)


def _read_rows(path: Path, expected_header: list[str] | None, name: str) -> list[list[str]]:
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise DataError(f"{name} file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{name} file {path}: empty")
    rows[0] = [c.strip() for c in rows[0]]
    if expected_header is not None and rows[0][: len(expected_header)] != expected_header:
        raise DataError(f"{name} file {path}: header {rows[0]} does not start with {expected_header}")
    return rows


def load_graph(
    nodes_path,
    edges_path,
    splits_path,
    *,
    standardize: bool = True,
    include_sensitive: bool = False,
) -> Graph:
    """Load a graph from node/edge/split CSV files.

    Features are standardized per column by default. The sensitive attribute
    is kept out of the feature matrix unless ``include_sensitive`` is set, in
    which case the raw 0/1 column is appended after standardization. With
    ``splits_path=None`` every node lands in the train split; callers that
    want fractions instead should follow up with :func:`split_nodes`.
    """
    node_rows = _read_rows(Path(nodes_path), ["node_id", "sensitive", "label"], "nodes")
    header = node_rows[0]
    d = len(header) - 3
    if d < 1 or header[3:] != [f"f{i}" for i in range(d)]:
        raise DataError(f"nodes file: expected feature columns f0..f{{D-1}}, got {header[3:]}")

    ids: list[int] = []
    sens, labels, feats = [], [], []
    for row in node_rows[1:]:
        if len(row) != len(header):
            raise DataError(f"nodes file: row for id {row[0]!r} has {len(row)} fields, expected {len(header)}")
        try:
            ids.append(int(row[0]))
            sens.append(int(row[1]))
            labels.append(int(row[2]))
            feats.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise DataError(f"nodes file: bad row for id {row[0]!r}: {exc}") from exc
    if len(set(ids)) != len(ids):
        raise DataError("nodes file: duplicate node ids")
    index = {node_id: i for i, node_id in enumerate(ids)}
    n = len(ids)

    x = np.asarray(feats, dtype=np.float64)
    sensitive = np.asarray(sens, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    for name, arr in (("sensitive", sensitive), ("label", y)):
        bad = np.setdiff1d(np.unique(arr), [0, 1])
        if bad.size:
            raise DataError(f"nodes file: non-binary {name} values {bad.tolist()}")

    adjacency = np.zeros((n, n), dtype=np.float64)
    dropped_self_loops = 0
    for row in _read_rows(Path(edges_path), ["src", "dst"], "edges")[1:]:
        try:
            src, dst = int(row[0]), int(row[1])
        except ValueError as exc:
            raise DataError(f"edges file: bad row {row!r}") from exc
        for endpoint in (src, dst):
            if endpoint not in index:
                raise DataError(f"edges file: edge references unknown node id {endpoint}")
        if src == dst:
            dropped_self_loops += 1
            continue
        adjacency[index[src], index[dst]] = 1.0
        adjacency[index[dst], index[src]] = 1.0
    if dropped_self_loops:
        warnings.warn(f"dropped {dropped_self_loops} self-loop edge(s)", stacklevel=2)

    if splits_path is None:
        split = np.full(n, TRAIN, dtype=np.int8)
    else:
        split = np.full(n, -1, dtype=np.int8)
        for row in _read_rows(Path(splits_path), ["node_id", "split"], "splits")[1:]:
            try:
                node_id = int(row[0])
            except ValueError as exc:
                raise DataError(f"splits file: bad row {row!r}") from exc
            if node_id not in index:
                raise DataError(f"splits file: unknown node id {node_id}")
            name = row[1].strip()
            if name not in SPLIT_NAMES:
                raise DataError(f"splits file: unknown split {name!r} for node {node_id}")
            split[index[node_id]] = SPLIT_NAMES.index(name)
        if np.any(split < 0):
            missing = ids[int(np.flatnonzero(split < 0)[0])]
            raise DataError(f"splits file: node id {missing} has no split assignment")

    if standardize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std[std < 1e-12] = 1.0
        x = (x - mean) / std
    if include_sensitive:
        x = np.concatenate([x, sensitive[:, None].astype(np.float64)], axis=1)

    return Graph(x, adjacency, sensitive, y, split)


def save_graph(graph: Graph, nodes_path, edges_path, splits_path) -> None:
    """Write a graph back to the three-file CSV layout (node ids 0..n-1).

    Round-trips exactly with ``load_graph(standardize=False)``.
    """
    with open(nodes_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "sensitive", "label"] + [f"f{i}" for i in range(graph.n_features)])
        for i in range(graph.n_nodes):
            writer.writerow(
                [i, int(graph.sensitive[i]), int(graph.labels[i])]
                + [repr(float(v)) for v in graph.features[i]]
            )
    with open(edges_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        rows, cols = np.nonzero(np.triu(graph.adjacency, k=1))
        for u, v in zip(rows.tolist(), cols.tolist()):
            writer.writerow([u, v])
    with open(splits_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "split"])
        for i in range(graph.n_nodes):
            writer.writerow([i, SPLIT_NAMES[graph.split[i]]])


@dataclass(frozen=True)
class SbmBiasConfig:
    """Two-group stochastic block model with controllable bias knobs.

    ``label_bias`` is the difference P(Y=1 | S=1) - P(Y=1 | S=0) around a 0.5
    base rate. ``feature_leak`` shifts the first half of the feature columns
    for the S=1 group; a fixed unit shift on the remaining columns carries the
    label signal so labels stay learnable independently of the leak.
    """

    n_nodes: int = 300
    n_features: int = 8
    group_fraction: float = 0.5
    homophily: float = 0.05
    cross_prob: float = 0.05
    label_bias: float = 0.0
    feature_leak: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 4:
            raise DataError(f"n_nodes must be at least 4, got {self.n_nodes}")
        if self.n_features < 1:
            raise DataError(f"n_features must be positive, got {self.n_features}")
        check_probability(self.group_fraction, "group_fraction")
        check_probability(self.homophily, "homophily")
        check_probability(self.cross_prob, "cross_prob")
        if not -1.0 <= self.label_bias <= 1.0:
            raise DataError(f"label_bias must be in [-1, 1], got {self.label_bias}")


LABEL_SIGNAL_SHIFT = 1.0


def generate_biased_sbm(cfg: SbmBiasConfig) -> Graph:
    """Sample a biased SBM graph; deterministic for a given config."""
    rng = np.random.default_rng(cfg.seed)
    n, d = cfg.n_nodes, cfg.n_features

    n_group1 = int(round(cfg.group_fraction * n))
    sensitive = np.zeros(n, dtype=np.int64)
    sensitive[rng.permutation(n)[:n_group1]] = 1

    p_y1 = np.clip(0.5 + np.where(sensitive == 1, cfg.label_bias, -cfg.label_bias) / 2.0, 0.0, 1.0)
    labels = (rng.random(n) < p_y1).astype(np.int64)

    x = rng.standard_normal((n, d))
    leak_cols = (d + 1) // 2
    x[sensitive == 1, :leak_cols] += cfg.feature_leak
    x[labels == 1, leak_cols:] += LABEL_SIGNAL_SHIFT

    same = sensitive[:, None] == sensitive[None, :]
    prob = np.where(same, cfg.homophily, cfg.cross_prob)
    draw = rng.random((n, n))
    upper = np.triu(draw < prob, k=1)
    adjacency = (upper | upper.T).astype(np.float64)

    return Graph(x, adjacency, sensitive, labels)


def _largest_remainder(total: int, fractions: tuple[float, ...]) -> list[int]:
    quotas = [total * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    remainders = sorted(
        range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _assign_leftovers(
    leftover: list[int], deficits: list[int], remainders: list[list[float]]
) -> list[list[int]]:
    """Distribute per-cell leftover nodes so split totals hit their quotas.

    Each cell may give at most one extra node to a split, which keeps every
    cell within one node of its ideal proportions. Cells and splits are few,
    so the feasible assignment maximizing the matched fractional remainders
    is found by enumeration.
    """
    n_splits = len(deficits)
    options_per_cell = [
        list(itertools.combinations(range(n_splits), count)) for count in leftover
    ]
    best, best_score = None, -np.inf
    for combo in itertools.product(*options_per_cell):
        totals = [0] * n_splits
        for splits in combo:
            for s in splits:
                totals[s] += 1
        if totals != deficits:
            continue
        score = sum(remainders[c][s] for c, splits in enumerate(combo) for s in splits)
        if score > best_score:
            best, best_score = combo, score
    if best is None:  # pragma: no cover - quotas always admit an assignment
        raise DataError("split_nodes: could not balance stratified quotas")
    extra = [[0] * n_splits for _ in leftover]
    for c, splits in enumerate(best):
        for s in splits:
            extra[c][s] = 1
    return extra


def split_nodes(graph: Graph, fractions: tuple[float, float, float], seed: int) -> Graph:
    """Assign train/val/test splits, stratified over (sensitive, label) cells.

    Split totals match ``fractions`` exactly (largest remainder); each
    nonempty stratum stays within one node of its proportional share. If any
    stratum is empty the split falls back to unstratified with a warning.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must be three nonnegative values summing to 1, got {fractions}")

    n = graph.n_nodes
    cells = [
        np.flatnonzero((graph.sensitive == s) & (graph.labels == y))
        for s, y in itertools.product((0, 1), repeat=2)
    ]
    if any(cell.size == 0 for cell in cells):
        warnings.warn("empty (sensitive, label) stratum; falling back to unstratified split", stacklevel=2)
        cells = [np.arange(n)]

    totals = _largest_remainder(n, fractions)
    base = [[int(np.floor(cell.size * f)) for f in fractions] for cell in cells]
    leftover = [cell.size - sum(counts) for cell, counts in zip(cells, base)]
    deficits = [totals[s] - sum(counts[s] for counts in base) for s in range(3)]
    remainders = [
        [cell.size * f - b for f, b in zip(fractions, counts)]
        for cell, counts in zip(cells, base)
    ]
    extra = _assign_leftovers(leftover, deficits, remainders)

    rng = np.random.default_rng(seed)
    split = np.full(n, -1, dtype=np.int8)
    for cell, counts, extras in zip(cells, base, extra):
        order = rng.permutation(cell)
        sizes = [c + e for c, e in zip(counts, extras)]
        offsets = np.cumsum(sizes)
        split[order[: offsets[0]]] = TRAIN
        split[order[offsets[0] : offsets[1]]] = VAL
        split[order[offsets[1] : offsets[2]]] = TEST
    return replace(graph, split=split)
