"""Per-window directed multigraphs.

Each time window becomes a graph over the full node id space: parallel
arrays of edge sources, destinations, and timestamps.  Repeated calls stay
repeated (multigraph).  Node features are the identity matrix by convention,
kept implicit: with X = I the first-layer transform XW is just W, so no
n_nodes x n_nodes array is ever materialized.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GraphError
from .preprocess import TimeWindow


@dataclass
class WindowedGraph:
    """Directed multigraph for one window, over ids 0..n_nodes-1."""

    n_nodes: int
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_ts: np.ndarray
    window: tuple[int, int]

    @property
    def n_edges(self) -> int:
        return int(self.edge_src.shape[0])


def build_graph(window: TimeWindow, n_nodes: int) -> WindowedGraph:
    """Stack the window's events into edge arrays; ids must be in range."""
    if n_nodes <= 0:
        raise GraphError(f"graph needs a positive node count, got {n_nodes}")
    src = np.fromiter((e.src for e in window.events), dtype=np.int64, count=len(window.events))
    dst = np.fromiter((e.dst for e in window.events), dtype=np.int64, count=len(window.events))
    ts = np.fromiter((e.timestamp for e in window.events), dtype=np.int64, count=len(window.events))
    if src.size:
        low = min(src.min(), dst.min())
        high = max(src.max(), dst.max())
        if low < 0 or high >= n_nodes:
            bad = high if high >= n_nodes else low
            raise GraphError(
                f"edge references node id {bad} outside the known range [0, {n_nodes})"
            )
    return WindowedGraph(n_nodes, src, dst, ts, (window.start, window.end))


def unique_edge_set(graph: WindowedGraph) -> set[tuple[int, int]]:
    """Distinct (src, dst) pairs; multiplicity collapsed."""
    return {(int(s), int(d)) for s, d in zip(graph.edge_src, graph.edge_dst)}


def degree_counts(graph: WindowedGraph) -> np.ndarray:
    """Total degree (in + out, multiplicity counted) per node id.

    Sums to exactly twice the edge count.
    """
    out_deg = np.bincount(graph.edge_src, minlength=graph.n_nodes)
    in_deg = np.bincount(graph.edge_dst, minlength=graph.n_nodes)
    return (out_deg + in_deg).astype(np.int64)


def write_edge_list(graph: WindowedGraph, path: str | Path) -> None:
    """Debug dump: one `src,dst,timestamp` line per edge instance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("src,dst,timestamp\n")
        for s, d, t in zip(graph.edge_src, graph.edge_dst, graph.edge_ts):
            handle.write(f"{s},{d},{t}\n")
