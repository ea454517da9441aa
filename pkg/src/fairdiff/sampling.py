"""Rooted subgraph sampling by breadth-first neighbor expansion.

One subgraph is drawn per root node: BFS from the root, keeping at most
``fanout`` uniformly chosen neighbors per expanded node, with expansion
capped at ``depth`` hops from the root. Edges are the traversed ones unless
``induced`` asks for the full parent-induced edge set. Each root gets its own
RNG substream keyed by (seed, root), so results do not depend on the order
roots are processed in.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .data import TRAIN, Graph
from .validation import check_symmetric_zero_diag

__all__ = [
    "Subgraph",
    "sample_subgraph",
    "build_subgraph_set",
    "dump_subgraph_set",
    "load_subgraph_dump",
    "replace_subgraph_tensors",
]


@dataclass
class Subgraph:
    """A rooted subgraph instance; exists in sampled and debiased variants.

    ``parent_ids`` maps local indices to parent-graph node ids, with the root
    at local index 0. ``labeled_mask`` marks nodes from the parent train split.
    """

    root: int
    parent_ids: np.ndarray  # (n,) int64
    features: np.ndarray  # (n, d) float64
    adjacency: np.ndarray  # (n, n) float64, symmetric, zero diagonal
    sensitive: np.ndarray  # (n,) int64
    labels: np.ndarray  # (n,) int64
    labeled_mask: np.ndarray  # (n,) bool

    def __post_init__(self):
        self.parent_ids = np.asarray(self.parent_ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.adjacency = check_symmetric_zero_diag(self.adjacency, "subgraph adjacency")
        self.labeled_mask = np.asarray(self.labeled_mask, dtype=bool)
        n = self.parent_ids.shape[0]
        if self.features.shape[0] != n or self.adjacency.shape[0] != n:
            raise ValueError("subgraph arrays disagree on node count")
        if n == 0:
            raise ValueError("subgraph must contain at least the root")
        if int(self.parent_ids[0]) != self.root:
            raise ValueError("root must be local node 0")

    @property
    def n_nodes(self) -> int:
        return self.parent_ids.shape[0]


def sample_subgraph(
    graph: Graph,
    root: int,
    depth: int,
    fanout: int,
    rng: np.random.Generator,
    *,
    induced: bool = False,
    depth_mode: str = "hops",
) -> Subgraph:
    """Sample one rooted subgraph.

    ``depth_mode="hops"`` (default) expands every node closer than ``depth``
    hops to the root. ``"budget"`` instead decrements a single shared depth
    counter per expanded node, which makes the reach order-dependent but
    matches a literal queue-with-budget traversal.
    """
    if not 0 <= root < graph.n_nodes:
        raise ValueError(f"root {root} out of range for {graph.n_nodes} nodes")
    if depth < 0:
        raise ValueError(f"depth must be nonnegative, got {depth}")
    if fanout < 1:
        raise ValueError(f"fanout must be at least 1, got {fanout}")
    if depth_mode not in ("hops", "budget"):
        raise ValueError(f"unknown depth_mode {depth_mode!r}")

    hop = {root: 0}
    order = [root]
    queue = deque([root])
    expanded: set[int] = set()
    edges: set[tuple[int, int]] = set()
    budget = depth

    while queue:
        v = queue.popleft()
        if v in expanded:
            continue
        if depth_mode == "hops":
            if hop[v] >= depth:
                continue
        elif budget <= 0:
            break
        expanded.add(v)
        if depth_mode == "budget":
            budget -= 1
        neighbors = graph.neighbors(v)
        if neighbors.size == 0:
            continue
        take = min(fanout, neighbors.size)
        chosen = neighbors if take == neighbors.size else rng.choice(neighbors, size=take, replace=False)
        for w in sorted(int(w) for w in chosen):
            edges.add((min(v, w), max(v, w)))
            if w not in hop:
                hop[w] = hop[v] + 1
                order.append(w)
                queue.append(w)

    parent_ids = np.asarray(order, dtype=np.int64)
    local = {g: i for i, g in enumerate(order)}
    n = len(order)
    adjacency = np.zeros((n, n), dtype=np.float64)
    if induced:
        sub = graph.adjacency[np.ix_(parent_ids, parent_ids)]
        adjacency[:] = sub
        np.fill_diagonal(adjacency, 0.0)
    else:
        for u, w in edges:
            adjacency[local[u], local[w]] = graph.adjacency[u, w]
            adjacency[local[w], local[u]] = graph.adjacency[w, u]

    return Subgraph(
        root=root,
        parent_ids=parent_ids,
        features=graph.features[parent_ids].copy(),
        adjacency=adjacency,
        sensitive=graph.sensitive[parent_ids].copy(),
        labels=graph.labels[parent_ids].copy(),
        labeled_mask=graph.split[parent_ids] == TRAIN,
    )


def build_subgraph_set(
    graph: Graph,
    depth: int,
    fanout: int,
    seed: int,
    *,
    induced: bool = False,
    depth_mode: str = "hops",
    roots=None,
) -> list[Subgraph]:
    """One subgraph per root (default: every node), with per-root RNG streams.

    The stream for a root is keyed by (seed, root), so the result for a root
    is independent of which other roots are sampled and in what order.
    """
    if roots is None:
        roots = range(graph.n_nodes)
    out = []
    for root in roots:
        rng = np.random.default_rng([seed, int(root)])
        out.append(
            sample_subgraph(
                graph, int(root), depth, fanout, rng, induced=induced, depth_mode=depth_mode
            )
        )
    return out


def dump_subgraph_set(subgraphs: list[Subgraph], path) -> None:
    """Write one JSON object per line: root, member nodes, weighted edges."""
    with open(path, "w") as fh:
        for sub in subgraphs:
            rows, cols = np.nonzero(np.triu(sub.adjacency, k=1))
            record = {
                "root": int(sub.root),
                "nodes": sub.parent_ids.tolist(),
                "edges": [
                    [int(sub.parent_ids[u]), int(sub.parent_ids[v]), float(sub.adjacency[u, v])]
                    for u, v in zip(rows.tolist(), cols.tolist())
                ],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_subgraph_dump(path, graph: Graph) -> list[Subgraph]:
    """Rebuild subgraphs from a dump, pulling node attributes from the graph."""
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            parent_ids = np.asarray(record["nodes"], dtype=np.int64)
            local = {int(g): i for i, g in enumerate(parent_ids)}
            n = parent_ids.shape[0]
            adjacency = np.zeros((n, n), dtype=np.float64)
            for u, v, w in record["edges"]:
                adjacency[local[int(u)], local[int(v)]] = float(w)
                adjacency[local[int(v)], local[int(u)]] = float(w)
            out.append(
                Subgraph(
                    root=int(record["root"]),
                    parent_ids=parent_ids,
                    features=graph.features[parent_ids].copy(),
                    adjacency=adjacency,
                    sensitive=graph.sensitive[parent_ids].copy(),
                    labels=graph.labels[parent_ids].copy(),
                    labeled_mask=graph.split[parent_ids] == TRAIN,
                )
            )
    return out


def replace_subgraph_tensors(sub: Subgraph, features: np.ndarray, adjacency: np.ndarray) -> Subgraph:
    """A copy of ``sub`` with new features/adjacency (the debiased variant)."""
    return replace(sub, features=np.asarray(features, dtype=np.float64), adjacency=np.asarray(adjacency, dtype=np.float64))
