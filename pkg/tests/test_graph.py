import numpy as np
import pandas as pd
import pytest

from model.graph import GcnStack, build_graph, gcn_forward, gcn_layer, write_graph_tsv
from shared.errors import ShapeError
from shared.gradcheck import check_gradients
from shared import tensor as T
from shared.tensor import Parameter, Tensor


# ------------------------
# Graph construction
# ------------------------


def test_repeated_transitions_add_up():
    graph = build_graph([[0, 1], [0, 1]], 2)
    assert graph.adjacency[0, 1] == 2
    assert graph.out_degree[0] == 2


def test_consecutive_repeat_is_a_self_edge():
    graph = build_graph([[0, 0]], 1)
    assert graph.adjacency[0, 0] == 1


def test_chain_edges_and_degrees():
    graph = build_graph([[0, 1, 2]], 3)
    rows, cols = graph.adjacency.nonzero()
    assert sorted(zip(rows.tolist(), cols.tolist())) == [(0, 1), (1, 2)]
    assert graph.out_degree.tolist() == [1, 1, 0]
    assert graph.edge_count == 2


def test_session_order_does_not_change_the_graph(rng):
    sessions = [list(rng.integers(0, 6, size=int(rng.integers(1, 5)))) for _ in range(30)]
    graph = build_graph(sessions, 6)
    reordered = build_graph([sessions[i] for i in rng.permutation(len(sessions))], 6)
    np.testing.assert_array_equal(reordered.adjacency.toarray(), graph.adjacency.toarray())
    np.testing.assert_array_equal(reordered.out_degree, graph.out_degree)


def test_transition_rows_are_normalised():
    graph = build_graph([[0, 1], [0, 2], [0, 1]], 3)
    P = graph.transition().toarray()
    np.testing.assert_allclose(P[0], [0.0, 2 / 3, 1 / 3])
    np.testing.assert_array_equal(P[1], [0.0, 0.0, 0.0])


def test_self_loops_fill_dangling_rows():
    graph = build_graph([[0, 1]], 2)
    np.testing.assert_array_equal(graph.transition(self_loops=True).toarray(), [[0.0, 1.0], [0.0, 1.0]])
    np.testing.assert_array_equal(graph.transition().toarray(), [[0.0, 1.0], [0.0, 0.0]])


def test_graph_tsv_uses_external_ids(tmp_path):
    path = write_graph_tsv(build_graph([[1, 0], [1, 0], [0, 2]], 3), tmp_path / "graph.tsv", ["a", "b", "c"])
    frame = pd.read_csv(path, sep="\t", header=None, names=["src", "dst", "weight"])
    assert frame.values.tolist() == [["a", "c", 1], ["b", "a", 2]]


# ------------------------
# Convolution
# ------------------------


def test_single_edge_layer_output():
    graph = build_graph([[0, 1]], 2)
    X = Tensor([[1.0, 1.0], [3.0, 4.0]])
    out = gcn_layer(X, graph, Tensor(np.eye(2)))
    np.testing.assert_allclose(out.data[0], [0.6, 0.8])
    np.testing.assert_array_equal(out.data[1], [0.0, 0.0])


def test_empty_graph_layer_is_zero(rng):
    graph = build_graph([], 3)
    out = gcn_layer(Tensor(rng.standard_normal((3, 2))), graph, Tensor(np.eye(2)))
    assert not out.data.any()


@pytest.mark.parametrize("layers", [1, 2, 4])
def test_empty_graph_forward_scales_input(rng, layers):
    graph = build_graph([], 3)
    X0 = Tensor(rng.standard_normal((3, 2)))
    out = gcn_forward(X0, graph, GcnStack(2, layers, rng, "g"))
    np.testing.assert_allclose(out.data, X0.data / (layers + 1))


def test_one_layer_forward_averages_input_and_layer(rng):
    graph = build_graph([[0, 1, 2]], 3)
    X0 = Tensor(rng.standard_normal((3, 2)))
    stack = GcnStack(2, 1, rng, "g")
    expected = (X0.data + gcn_layer(X0, graph, stack.weights[0]).data) / 2
    np.testing.assert_allclose(gcn_forward(X0, graph, stack).data, expected)


def test_forward_matches_dense_reference(rng):
    graph = build_graph([[0, 1, 2], [1, 2], [0, 2]], 3)
    X0 = rng.standard_normal((3, 4))
    stack = GcnStack(4, 2, rng, "g")

    A = np.zeros((3, 3))
    for a, b in [(0, 1), (1, 2), (1, 2), (0, 2)]:
        A[a, b] += 1
    deg = A.sum(axis=1, keepdims=True)
    P = np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)
    outputs = [X0]
    for W in stack.weights:
        H = P @ outputs[-1] @ W.data
        norms = np.linalg.norm(H, axis=1, keepdims=True)
        outputs.append(np.divide(H, norms, out=np.zeros_like(H), where=norms > 0))

    np.testing.assert_allclose(gcn_forward(Tensor(X0), graph, stack).data, np.mean(outputs, axis=0), atol=1e-10)


def test_dimension_mismatch_raises():
    graph = build_graph([[0, 1]], 2)
    with pytest.raises(ShapeError):
        gcn_layer(Tensor(np.ones((3, 2))), graph, Tensor(np.eye(2)))


def test_layer_weights_are_named_per_channel(rng):
    assert list(GcnStack(2, 3, rng, "gcn_id").parameters()) == ["gcn_id.0", "gcn_id.1", "gcn_id.2"]


def test_gcn_gradients_match_finite_differences(rng):
    graph = build_graph([[0, 1, 2], [2, 0], [1, 3]], 4)
    X0 = Parameter(rng.standard_normal((4, 3)))
    stack = GcnStack(3, 2, rng, "g")
    probe = Tensor(rng.standard_normal((4, 3)))
    error = check_gradients(
        lambda: T.sum(T.mul(gcn_forward(X0, graph, stack, self_loops=True), probe)),
        [X0, *stack.weights],
    )
    assert error < 1e-4
