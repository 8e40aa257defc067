"""Per-window multigraph construction."""
from __future__ import annotations

import numpy as np
import pytest

from tracelink.errors import GraphError
from tracelink.graph import (
    WindowedGraph,
    build_graph,
    degree_counts,
    unique_edge_set,
    write_edge_list,
)
from tracelink.preprocess import MappedEvent, TimeWindow


def make_window(triples, start=0, end=100, index=0):
    return TimeWindow(index, start, end, [MappedEvent(*t) for t in triples])


def test_build_graph_keeps_parallel_edges():
    w = make_window([(0, 1, 5), (0, 1, 9), (1, 2, 12)])
    g = build_graph(w, n_nodes=3)
    assert g.n_edges == 3
    assert g.edge_src.tolist() == [0, 0, 1]
    assert g.edge_dst.tolist() == [1, 1, 2]
    assert g.edge_ts.tolist() == [5, 9, 12]
    assert g.window == (0, 100)


def test_build_graph_empty_window():
    g = build_graph(make_window([]), n_nodes=4)
    assert g.n_edges == 0
    assert g.edge_src.dtype == np.int64


def test_build_graph_rejects_out_of_range_ids():
    with pytest.raises(GraphError):
        build_graph(make_window([(0, 3, 1)]), n_nodes=3)
    with pytest.raises(GraphError):
        build_graph(make_window([(-1, 0, 1)]), n_nodes=3)


def test_unique_edge_set_collapses_duplicates():
    g = build_graph(make_window([(0, 1, 5), (0, 1, 9), (2, 0, 1)]), n_nodes=3)
    assert unique_edge_set(g) == {(0, 1), (2, 0)}


def test_degree_counts_sum_to_twice_edges():
    g = build_graph(make_window([(0, 1, 1), (0, 1, 2), (1, 2, 3)]), n_nodes=4)
    deg = degree_counts(g)
    # node 0: two outgoing; node 1: two incoming + one outgoing; node 2: one in
    assert deg.tolist() == [2, 3, 1, 0]
    assert deg.sum() == 2 * g.n_edges


def test_self_loop_counts_twice_in_degree():
    g = build_graph(make_window([(1, 1, 0)]), n_nodes=2)
    assert degree_counts(g).tolist() == [0, 2]


def test_write_edge_list(tmp_path):
    g = build_graph(make_window([(0, 1, 5), (2, 0, 7)]), n_nodes=3)
    path = tmp_path / "edges.csv"
    write_edge_list(g, path)
    assert path.read_text() == "src,dst,timestamp\n0,1,5\n2,0,7\n"


def test_graph_is_plain_dataclass():
    g = WindowedGraph(
        n_nodes=2,
        edge_src=np.array([0], dtype=np.int64),
        edge_dst=np.array([1], dtype=np.int64),
        edge_ts=np.array([3], dtype=np.int64),
        window=(0, 10),
    )
    assert g.n_edges == 1
