"""Client-side two-layer GCN: local training, graph-level embedding, deltas."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .graphdata import Graph, SubgraphDataset
from .hypernet import pack
from .numerics import AdamState, Tape, glorot, ops

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2")


def normalized_adjacency(graph: Graph):
    """D^{-1/2} (A + I) D^{-1/2}."""
    a = graph.adjacency() + np.eye(graph.n)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


def init_gcn(in_dim, hidden, num_classes, rng):
    return {
        "W1": glorot(rng, in_dim, hidden),
        "b1": np.zeros((1, hidden)),
        "W2": glorot(rng, hidden, num_classes),
        "b2": np.zeros((1, num_classes)),
    }


@dataclass
class ClientState:
    cid: int
    dataset: SubgraphDataset
    params: dict
    a_hat: np.ndarray = None
    ax: np.ndarray = None
    embedding: np.ndarray = None
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.a_hat is None:
            self.a_hat = normalized_adjacency(self.dataset.graph)
        # A_hat @ V never changes, so it is folded once.
        self.ax = self.a_hat @ self.dataset.features


def make_client(cid, dataset: SubgraphDataset, hidden, seed, init=None):
    """Client with its own random stream; ``init`` overrides the random start."""
    rng = np.random.default_rng(seed)
    if init is None:
        params = init_gcn(dataset.features.shape[1], hidden, dataset.num_classes, rng)
    else:
        params = {k: np.array(init[k], dtype=np.float64, copy=True) for k in PARAM_NAMES}
    return ClientState(cid=cid, dataset=dataset, params=params, rng=rng)


def gcn_forward(params, a_hat, features):
    """Plain forward pass: returns (hidden, logits)."""
    hidden = np.maximum(a_hat @ features @ params["W1"] + params["b1"], 0.0)
    logits = a_hat @ hidden @ params["W2"] + params["b2"]
    return hidden, logits


def _gcn_on_tape(tape, nodes, state):
    a_hat = tape.const(state.a_hat, "a_hat")
    ax = tape.const(state.ax, "ax")
    hidden = ops.relu(ops.add_bias(ops.matmul(ax, nodes["W1"]), nodes["b1"]))
    logits = ops.add_bias(ops.matmul(ops.matmul(a_hat, hidden), nodes["W2"]), nodes["b2"])
    return hidden, logits


def gcn_loss(state: ClientState, params=None):
    """(tape, param nodes, loss node) for the mean train cross-entropy."""
    params = state.params if params is None else params
    tape = Tape()
    nodes = {k: tape.param(params[k], k) for k in PARAM_NAMES}
    _, logits = _gcn_on_tape(tape, nodes, state)
    loss = ops.cross_entropy(logits, state.dataset.labels, state.dataset.train_mask)
    return tape, nodes, loss


def local_train(state: ClientState, epochs, lr, adam_betas=(0.9, 0.999)):
    """Full-batch Adam on the train-mask cross-entropy.

    A fresh optimiser state is used on every call.  Updates ``state.params``
    in place and returns ``(params, loss_trace)``; the trace holds the loss
    evaluated before each step.
    """
    if epochs < 1:
        raise ContractError("epochs must be >= 1")
    if not state.dataset.train_mask.any():
        log.warning("client %d has no training nodes; skipping local update", state.cid)
        return state.params, []
    adam = AdamState(lr=lr, beta1=adam_betas[0], beta2=adam_betas[1])
    params = {k: v.copy() for k, v in state.params.items()}
    trace = []
    for _ in range(epochs):
        tape, nodes, loss = gcn_loss(state, params)
        grads = tape.backward(loss, [nodes[k] for k in PARAM_NAMES])
        trace.append(float(loss.value[0, 0]))
        adam.update(params, dict(zip(PARAM_NAMES, grads)))
    state.params = params
    return params, trace


def graph_embedding(state: ClientState):
    """Mean hidden-layer representation over all of the client's nodes."""
    hidden, _ = gcn_forward(state.params, state.a_hat, state.dataset.features)
    return mean_embedding(hidden)


def mean_embedding(hidden):
    return np.asarray(hidden).mean(axis=0)


def refresh_embedding(state: ClientState):
    if state.dataset.train_mask.any() or state.embedding is None:
        state.embedding = graph_embedding(state)
    return state.embedding


def predict(state: ClientState):
    _, logits = gcn_forward(state.params, state.a_hat, state.dataset.features)
    return np.argmax(logits, axis=1)


def accuracy(state: ClientState, split="test"):
    """Fraction of correctly classified nodes in ``split``; None when empty."""
    mask = getattr(state.dataset, f"{split}_mask")
    if not mask.any():
        return None
    return float(np.mean(predict(state)[mask] == state.dataset.labels[mask]))


def train_loss(state: ClientState):
    if not state.dataset.train_mask.any():
        return float("nan")
    return float(gcn_loss(state)[2].value[0, 0])


def delta(initial, trained, layout):
    """Flattened ``trained - initial`` over the generated tensors in ``layout``."""
    for name, shape in layout:
        if initial[name].shape != tuple(shape) or trained[name].shape != tuple(shape):
            raise ContractError(f"delta: {name} shape mismatch")
    return pack(trained, layout) - pack(initial, layout)
