import numpy as np
import pytest

from fedsheafhn.client import (
    PARAM_NAMES,
    _gcn_on_tape,
    accuracy,
    delta,
    gcn_forward,
    gcn_loss,
    graph_embedding,
    init_gcn,
    local_train,
    make_client,
    mean_embedding,
    normalized_adjacency,
)
from fedsheafhn.errors import ContractError
from fedsheafhn.graphdata import Graph, SubgraphDataset
from fedsheafhn.hypernet import make_layout, pack
from fedsheafhn.numerics import check, ops


def dataset(graph, features, labels, num_classes, train=None):
    n = graph.n
    train = np.ones(n, dtype=bool) if train is None else np.asarray(train)
    test = ~train
    return SubgraphDataset(graph, np.asarray(features, float), np.asarray(labels), num_classes, train, np.zeros(n, bool), test)


def random_dataset(rng, n=6, f=3, c=3, p=0.5):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    labels = rng.integers(0, c, size=n)
    train = np.zeros(n, dtype=bool)
    train[: max(1, n // 2)] = True
    return dataset(Graph(n, edges), rng.normal(size=(n, f)), labels, c, train)


def test_isolated_node_forward():
    rng = np.random.default_rng(0)
    g = Graph(1)
    assert np.array_equal(normalized_adjacency(g), [[1.0]])
    p = init_gcn(3, 4, 2, rng)
    p["b1"] = rng.normal(size=(1, 4))
    p["b2"] = rng.normal(size=(1, 2))
    v = rng.normal(size=(1, 3))
    _, logits = gcn_forward(p, normalized_adjacency(g), v)
    assert np.allclose(logits, np.maximum(v @ p["W1"] + p["b1"], 0) @ p["W2"] + p["b2"], rtol=0, atol=1e-15)


def test_zero_weights_give_bias_logits():
    rng = np.random.default_rng(1)
    g = Graph(4, [(0, 1), (1, 2)])
    p = {"W1": np.zeros((3, 5)), "b1": rng.normal(size=(1, 5)), "W2": np.zeros((5, 2)), "b2": rng.normal(size=(1, 2))}
    _, logits = gcn_forward(p, normalized_adjacency(g), rng.normal(size=(4, 3)))
    assert np.array_equal(logits, np.tile(p["b2"], (4, 1)))


def test_k2_hand_propagation():
    a_hat = normalized_adjacency(Graph(2, [(0, 1)]))
    assert np.max(np.abs(a_hat - 0.5)) <= 1e-15
    rng = np.random.default_rng(2)
    p = init_gcn(2, 3, 2, rng)
    v = np.ones((2, 2))
    hidden, logits = gcn_forward(p, a_hat, v)
    h_row = np.maximum(np.ones(2) @ p["W1"] + p["b1"][0], 0)  # mean of two identical rows
    assert np.max(np.abs(hidden - h_row)) <= 1e-12
    assert np.max(np.abs(logits - (h_row @ p["W2"] + p["b2"][0]))) <= 1e-12


def test_adjacency_symmetric_and_isolated_rows():
    g = Graph(4, [(0, 1), (1, 2)])
    a = normalized_adjacency(g)
    assert np.array_equal(a, a.T)
    assert np.array_equal(a[3], [0, 0, 0, 1])


def test_zero_lr_leaves_params_unchanged():
    rng = np.random.default_rng(3)
    state = make_client(0, random_dataset(rng), hidden=4, seed=3)
    before = {k: v.copy() for k, v in state.params.items()}
    local_train(state, epochs=3, lr=0.0)
    assert all(np.array_equal(before[k], state.params[k]) for k in PARAM_NAMES)
    layout = make_layout(3, 4, 3)
    assert not delta(before, state.params, layout).any()


def test_single_node_fits():
    state = make_client(0, dataset(Graph(1), [[1.0, -0.5]], [1], 2), hidden=4, seed=0)
    _, trace = local_train(state, epochs=50, lr=0.05)
    assert len(trace) == 50
    assert float(gcn_loss(state)[2].value[0, 0]) < 0.1


@pytest.mark.parametrize("seed", range(3))
def test_training_descends(seed):
    rng = np.random.default_rng(seed)
    state = make_client(0, random_dataset(rng, n=8), hidden=6, seed=seed)
    _, trace = local_train(state, epochs=10, lr=0.01)
    final = float(gcn_loss(state)[2].value[0, 0])
    assert np.all(np.isfinite(trace)) and final <= trace[0]


def test_empty_train_mask_skips(caplog):
    ds = dataset(Graph(2), np.ones((2, 2)), [0, 1], 2, train=[False, False])
    state = make_client(7, ds, hidden=3, seed=0)
    before = {k: v.copy() for k, v in state.params.items()}
    _, trace = local_train(state, epochs=2, lr=0.1)
    assert trace == [] and "no training nodes" in caplog.text
    assert all(np.array_equal(before[k], state.params[k]) for k in PARAM_NAMES)


def test_local_train_rejects_zero_epochs():
    state = make_client(0, random_dataset(np.random.default_rng(0)), hidden=3, seed=0)
    with pytest.raises(ContractError):
        local_train(state, epochs=0, lr=0.1)


def test_local_train_deterministic():
    rng = np.random.default_rng(4)
    ds = random_dataset(rng)
    a, b = make_client(0, ds, 4, seed=9), make_client(0, ds, 4, seed=9)
    local_train(a, 5, 0.02)
    local_train(b, 5, 0.02)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in PARAM_NAMES)


def test_embedding_examples():
    state = make_client(0, dataset(Graph(1), [[0.3, 2.0]], [0], 2), hidden=5, seed=1)
    hidden, _ = gcn_forward(state.params, state.a_hat, state.dataset.features)
    assert np.array_equal(graph_embedding(state), hidden[0])
    v = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(mean_embedding(np.stack([v, -v])), np.zeros(3))
    rng = np.random.default_rng(5)
    state = make_client(0, random_dataset(rng, n=4), hidden=5, seed=5)
    hidden, _ = gcn_forward(state.params, state.a_hat, state.dataset.features)
    oracle = np.array([sum(hidden[i, j] for i in range(4)) / 4 for j in range(5)])
    assert np.max(np.abs(graph_embedding(state) - oracle)) <= 1e-12


def test_embedding_permutation_invariant():
    rng = np.random.default_rng(6)
    ds = random_dataset(rng, n=7)
    perm = rng.permutation(7)
    inv = np.argsort(perm)
    edges = [(inv[u], inv[v]) for u, v in ds.graph.edges]
    ds2 = dataset(Graph(7, edges), ds.features[perm], ds.labels[perm], 3)
    a, b = make_client(0, ds, 4, seed=1), make_client(0, ds2, 4, seed=1)
    assert np.allclose(graph_embedding(a), graph_embedding(b), rtol=0, atol=1e-12)


def test_delta_definition():
    rng = np.random.default_rng(7)
    layout = make_layout(3, 4, 2)
    w = init_gcn(3, 4, 2, rng)
    e = {"W1": rng.normal(size=(3, 4)), "W2": rng.normal(size=(4, 2))}
    trained = dict(w, W1=w["W1"] + e["W1"], W2=w["W2"] + e["W2"])
    assert np.allclose(delta(w, trained, layout), pack(e, layout), rtol=0, atol=1e-15)
    with pytest.raises(ContractError):
        delta(w, dict(w, W2=np.zeros((3, 2))), layout)


def test_delta_after_training():
    rng = np.random.default_rng(8)
    state = make_client(0, random_dataset(rng), 4, seed=8)
    before = {k: v.copy() for k, v in state.params.items()}
    local_train(state, 3, 0.05)
    layout = make_layout(3, 4, 3)
    d = delta(before, state.params, layout)
    assert np.linalg.norm(d) > 0
    direct = np.concatenate([(state.params["W1"] - before["W1"]).ravel(), (state.params["W2"] - before["W2"]).ravel()])
    assert np.array_equal(d, direct)


def test_accuracy_argmax_ties_to_lowest():
    ds = dataset(Graph(2), np.ones((2, 1)), [0, 1], 2, train=[False, False])
    state = make_client(0, ds, 2, seed=0)
    state.params = {"W1": np.zeros((1, 2)), "b1": np.zeros((1, 2)), "W2": np.zeros((2, 2)), "b2": np.zeros((1, 2))}
    assert accuracy(state, "test") == 0.5
    assert accuracy(state, "val") is None


@pytest.mark.parametrize("seed", range(5))
def test_gcn_loss_gradients(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n=int(rng.integers(2, 7)))
    state = make_client(0, ds, 4, seed=seed)
    state.params = {k: v + 0.2 * rng.normal(size=v.shape) for k, v in state.params.items()}

    def build(tape, *values):
        _, logits = _gcn_on_tape(tape, dict(zip(PARAM_NAMES, values)), state)
        return ops.cross_entropy(logits, ds.labels, ds.train_mask)

    assert check(build, [state.params[k] for k in PARAM_NAMES]) < 1e-5
