"""Attention hypernetwork mapping client embeddings to generated GCN weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numerics import Tape, glorot, ops


def make_layout(in_dim, hidden, num_classes, generated="weights"):
    """Ordered (name, shape) list of the generated tensors of one client."""
    layout = [("W1", (in_dim, hidden)), ("W2", (hidden, num_classes))]
    if generated == "all":
        layout += [("b1", (1, hidden)), ("b2", (1, num_classes))]
    elif generated != "weights":
        raise ValueError(f"generated must be 'weights' or 'all', got {generated!r}")
    return layout


def layout_size(layout):
    return sum(int(np.prod(shape)) for _, shape in layout)


def pack(params, layout):
    """Concatenate the layout's tensors, each row-major, into one vector."""
    return np.concatenate([np.asarray(params[name]).reshape(-1) for name, _ in layout])


def unpack(row, layout):
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    if row.size != layout_size(layout):
        raise ContractError(f"unpack: got {row.size} values for a layout of size {layout_size(layout)}")
    out, start = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape))
        out[name] = row[start : start + size].reshape(shape).copy()
        start += size
    return out


@dataclass
class HyperNetConfig:
    hidden: int = 128
    attention: bool = True
    out_scale: float = 0.1


def init_hypernet(d, out_dim, config: HyperNetConfig, rng):
    """phi.  The output layer is shrunk so initial generated weights are small."""
    h = config.hidden
    params = {}
    if config.attention:
        params.update(Wq=glorot(rng, d, d), Wk=glorot(rng, d, d), Wv=glorot(rng, d, d))
    params.update(
        H1=glorot(rng, d, h),
        c1=np.zeros((1, h)),
        H2=glorot(rng, h, h),
        c2=np.zeros((1, h)),
        Hout=glorot(rng, h, out_dim, gain=config.out_scale),
        cout=np.zeros((1, out_dim)),
    )
    return params


def attention_scores(x, params):
    """Row-stochastic attention matrix softmax(Q K^T / sqrt(d))."""
    q = ops.matmul(x, params["Wq"])
    k = ops.matmul(x, params["Wk"])
    return ops.softmax_rows(ops.scaled_dot_scores(q, k))


def attention(x, params):
    return ops.matmul(attention_scores(x, params), ops.matmul(x, params["Wv"]))


def hypernet_forward(x, params, config: HyperNetConfig):
    """Generated parameter matrix (one row per client) on the tape of ``x``."""
    if params["H1"].shape[0] != x.shape[1]:
        raise ContractError(f"hypernet expects input dim {params['H1'].shape[0]}, got {x.shape[1]}")
    z = attention(x, params) if config.attention else x
    z = ops.elu(ops.add_bias(ops.matmul(z, params["H1"]), params["c1"]))
    z = ops.elu(ops.add_bias(ops.matmul(z, params["H2"]), params["c2"]))
    return ops.add_bias(ops.matmul(z, params["Hout"]), params["cout"])


def hypernet_values(x, params, config: HyperNetConfig):
    tape = Tape()
    nodes = {k: tape.const(v, k) for k, v in params.items()}
    return hypernet_forward(tape.const(x), nodes, config).value
