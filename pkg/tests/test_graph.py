
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdagar.errors import (
    AdjacencyFormatError,
    DuplicateEdgeError,
    EmptyGraphError,
    SelfLoopError,
    UnknownLabelError,
)
from mdagar.graph import (
    ArealGraph,
    directed_neighbor_sets,
    grid_coordinates,
    grid_graph,
    load_adjacency,
    write_adjacency,
)


def write(tmp_path, text):
    p = tmp_path / "g.adj"
    p.write_text(text, encoding="utf-8")
    return p


def random_graphs(max_k=12):
    @st.composite
    def build(draw):
        k = draw(st.integers(1, max_k))
        pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
        keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
        return ArealGraph.from_pairs(range(k), [p for p, t in zip(pairs, keep) if t])
    return build()


def test_load_path_graph(tmp_path):
    g = load_adjacency(write(tmp_path, "regions: A,B,C\nA,B\nB,C\n"))
    assert g.k == 3 and g.n_edges == 2
    assert g.labels == ("A", "B", "C")


def test_load_comments_and_blank_lines(tmp_path):
    g = load_adjacency(write(tmp_path, "# map\n\nregions: A,B  # header\nB,A # edge\n"))
    assert g.edges == ((0, 1),)


@pytest.mark.parametrize("text, err", [
    ("regions: A,B\nA,A\n", SelfLoopError),
    ("regions: A,B\nA,B\nB,A\n", DuplicateEdgeError),
    ("regions: A,B\nA,C\n", UnknownLabelError),
    ("# nothing\n", EmptyGraphError),
    ("regions:\n", EmptyGraphError),
    ("A,B\n", AdjacencyFormatError),
    ("regions: A,B\nA;B\n", AdjacencyFormatError),
])
def test_load_errors_are_distinct(tmp_path, text, err):
    with pytest.raises(err):
        load_adjacency(write(tmp_path, text))


def test_error_classes_are_distinct():
    classes = {SelfLoopError, DuplicateEdgeError, UnknownLabelError, EmptyGraphError}
    assert len(classes) == 4
    for a in classes:
        for b in classes - {a}:
            assert not issubclass(a, b)


def test_duplicate_error_reports_first_line(tmp_path):
    with pytest.raises(DuplicateEdgeError, match="first on line 2"):
        load_adjacency(write(tmp_path, "regions: A,B\nA,B\nB,A\n"))


def test_disconnected_graph_warns(tmp_path):
    with pytest.warns(UserWarning, match="2 connected components"):
        g = load_adjacency(write(tmp_path, "regions: A,B,C\nA,B\n"))
    ns = directed_neighbor_sets(g)
    assert ns.neighbors[2] == ()


def test_round_trip(tmp_path):
    g = grid_graph(3, 4)
    p = tmp_path / "grid.adj"
    write_adjacency(g, p)
    h = load_adjacency(p)
    assert h.labels == g.labels and h.edges == g.edges


def test_neighbor_sets_path():
    ns = directed_neighbor_sets(ArealGraph.from_pairs("123", [(0, 1), (1, 2)]))
    assert ns.neighbors == ((), (0,), (1,))
    np.testing.assert_array_equal(ns.n_before, [0, 1, 1])


def test_neighbor_sets_four_cycle():
    ns = directed_neighbor_sets(ArealGraph.from_pairs("1234", [(0, 1), (1, 2), (2, 3), (3, 0)]))
    assert ns.neighbors[3] == (0, 2)
    assert ns.n_before[3] == 2


def test_neighbor_sets_single_vertex():
    ns = directed_neighbor_sets(ArealGraph.from_pairs(["a"], []))
    assert ns.neighbors == ((),)
    assert ns.lower.shape == (1, 1) and ns.lower.nnz == 0


@pytest.mark.parametrize("rows, cols, nodes, edges", [(2, 2, 4, 4), (1, 3, 3, 2), (7, 7, 49, 84)])
def test_grid_sizes(rows, cols, nodes, edges):
    g = grid_graph(rows, cols)
    assert (g.k, g.n_edges) == (nodes, edges)
    assert g.n_edges == 2 * rows * cols - rows - cols


def test_grid_path_and_corner_drop():
    assert grid_graph(1, 3).edges == ((0, 1), (1, 2))
    g = grid_graph(7, 7, drop=[(6, 6)])
    assert g.k == 48 and g.n_edges == 82
    assert grid_coordinates(7, 7, drop=[(6, 6)]).shape == (48, 2)


def test_grid_zero_dimension():
    with pytest.raises(ValueError):
        grid_graph(0, 3)


def test_adjacency_matrix_properties():
    g = grid_graph(3, 3)
    M = g.adjacency_dense()
    np.testing.assert_array_equal(M, M.T)
    np.testing.assert_array_equal(np.diag(M), 0)
    np.testing.assert_array_equal(M.sum(axis=1), g.degrees)


@settings(max_examples=60, deadline=None)
@given(random_graphs())
def test_neighbor_sets_rebuild_adjacency(g):
    ns = directed_neighbor_sets(g)
    L = ns.lower.toarray()
    np.testing.assert_array_equal(L + L.T, g.adjacency_dense())
    assert ns.n_before.sum() == g.n_edges
    assert ns.neighbors[0] == ()
    for j, nb in enumerate(ns.neighbors):
        assert all(jp < j and L[j, jp] == 1 for jp in nb)
    np.testing.assert_array_equal(np.bincount(ns.dst, minlength=g.k), ns.n_before)


@settings(max_examples=40, deadline=None)
@given(random_graphs(), st.randoms(use_true_random=False))
def test_reorder_keeps_edge_set(g, rnd):
    perm = list(range(g.k))
    rnd.shuffle(perm)
    h = g.reorder(perm)
    as_labels = lambda gr: {frozenset((gr.labels[a], gr.labels[b])) for a, b in gr.edges}  # noqa: E731
    assert as_labels(h) == as_labels(g)
    assert directed_neighbor_sets(h).n_before.sum() == g.n_edges
