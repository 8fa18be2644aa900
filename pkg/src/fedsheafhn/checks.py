"""Finite-difference gradient suites used by ``fedsheafhn gradcheck``."""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import client as cl
from .graphdata import Graph, SubgraphDataset
from .hypernet import HyperNetConfig, hypernet_forward, init_hypernet
from .numerics import check, ops
from .sheaf import SheafConfig, collab_gcn, complete_edges, diffuse, init_collab_gcn, init_sheaf

TOLERANCE = 1e-5


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return x + np.sign(x) * margin


def _probe(tape, out, rng):
    """Random linear functional so every output entry reaches the loss."""
    return ops.inner(out, rng.normal(size=out.shape))


def _op_cases():
    """(name, input shapes, builder) for every differentiable primitive."""
    idx = np.array([2, 0, 2, 1])
    src, dst = complete_edges(3)
    return [
        ("matmul", [(3, 4), (4, 2)], lambda a, b: ops.matmul(a, b)),
        ("transpose", [(3, 2)], lambda a: ops.transpose(a)),
        ("reshape", [(4, 3)], lambda a: ops.reshape(a, 6, 2)),
        ("slice_rows", [(5, 2)], lambda a: ops.slice_rows(a, 1, 4)),
        ("gather_rows", [(3, 2)], lambda a: ops.gather_rows(a, idx)),
        ("kron_eye", [(2, 2)], lambda w: ops.kron_eye(w, 3)),
        ("add", [(2, 3), (2, 3)], lambda a, b: ops.add(a, b)),
        ("sub", [(2, 3), (2, 3)], lambda a, b: ops.sub(a, b)),
        ("mul", [(2, 3), (2, 3)], lambda a, b: ops.mul(a, b)),
        ("scale", [(2, 3)], lambda a: ops.scale(a, -1.7)),
        ("add_bias", [(3, 2), (1, 2)], lambda a, b: ops.add_bias(a, b)),
        ("add_scalar_row", [(3, 2)], lambda a: ops.add_scalar_row(a, [0.5, -0.5])),
        ("elu", [(3, 3)], lambda a: ops.elu(a)),
        ("tanh", [(3, 3)], lambda a: ops.tanh(a)),
        ("relu", [(3, 3)], lambda a: ops.relu(a)),
        ("identity", [(2, 2)], lambda a: ops.identity(a)),
        ("sum", [(3, 2)], lambda a: ops.sum_all(a)),
        ("mean_rows", [(4, 3)], lambda a: ops.mean_rows(a)),
        ("softmax_rows", [(3, 4)], lambda a: ops.softmax_rows(a)),
        ("cross_entropy", [(4, 3)],
         lambda a: ops.cross_entropy(a, np.array([0, 2, 1, 2]), np.array([True, True, False, True]))),
        ("sheaf_laplacian", [(3, 2), (3, 2)], lambda fs, fd: ops.sheaf_laplacian(fs, fd, src, dst, 3)),
        ("normalize_laplacian", [(3, 2), (3, 2)],
         lambda fs, fd: ops.normalize_laplacian(ops.sheaf_laplacian(fs, fd, src, dst, 3))),
        ("scaled_dot_scores", [(3, 4), (2, 4)], lambda q, k: ops.scaled_dot_scores(q, k)),
    ]


def suite_numerics(seed):
    """Max error per primitive; returns ``{op: rel_err}``."""
    rng = np.random.default_rng(seed)
    errors = {}
    for name, shapes, fn in _op_cases():
        inputs = [_away_from_zero(rng, s) for s in shapes]
        probe = rng.normal(size=(1, 1))
        weights = {}

        def build(tape, *nodes, fn=fn):
            out = fn(*nodes)
            if out.shape not in weights:
                weights[out.shape] = np.random.default_rng(seed + 1).normal(size=out.shape)
            return ops.scale(ops.inner(out, weights[out.shape]), float(probe[0, 0]))

        errors[name] = check(build, inputs)
    return errors


def _tiny_client(rng):
    n, f, c = 5, 3, 3
    edges = [(0, 1), (1, 2), (2, 3), (1, 4)]
    labels = rng.integers(0, c, size=n)
    masks = np.array([True, True, True, False, False])
    ds = SubgraphDataset(Graph(n, edges), rng.normal(size=(n, f)), labels, c, masks, ~masks & (np.arange(n) == 3),
                         np.arange(n) == 4, np.arange(n))
    return cl.make_client(0, ds, 4, int(rng.integers(1 << 30)))


def suite_gcn(seed):
    rng = np.random.default_rng(seed)
    state = _tiny_client(rng)
    names = list(cl.PARAM_NAMES)
    # Nudge the hidden pre-activations away from the ReLU kink.
    state.params["b1"] = state.params["b1"] + 0.05

    def build(tape, *nodes):
        _, logits = cl._gcn_on_tape(tape, dict(zip(names, nodes)), state)
        return ops.cross_entropy(logits, state.dataset.labels, state.dataset.train_mask)

    return check(build, [state.params[k] for k in names])


def suite_sheaf(seed):
    rng = np.random.default_rng(seed)
    cfg = SheafConfig(stalk_dim=2, steps=2, sigma="elu")
    theta = init_sheaf(4, cfg, rng)
    theta = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in theta.items()}
    names = list(theta)
    x0 = rng.normal(size=(3, 4))
    weights = rng.normal(size=(3, 4))

    def build(tape, x, *nodes):
        return ops.inner(diffuse(x, dict(zip(names, nodes)), cfg), weights)

    return check(build, [x0] + [theta[k] for k in names])


def suite_hypernet(seed):
    rng = np.random.default_rng(seed)
    cfg = HyperNetConfig(hidden=5, attention=True, out_scale=1.0)
    phi = init_hypernet(4, 6, cfg, rng)
    phi = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in phi.items()}
    names = list(phi)
    x = rng.normal(size=(3, 4))
    weights = rng.normal(size=(3, 6))

    def build(tape, xn, *nodes):
        return ops.inner(hypernet_forward(xn, dict(zip(names, nodes)), cfg), weights)

    return check(build, [x] + [phi[k] for k in names])


def suite_server(seed):
    """Surrogate <G, Omega(theta, phi)> with G = -Delta, through sheaf and hypernet."""
    rng = np.random.default_rng(seed)
    scfg = SheafConfig(stalk_dim=2, steps=2)
    hcfg = HyperNetConfig(hidden=5, attention=True, out_scale=1.0)
    theta = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in init_sheaf(4, scfg, rng).items()}
    phi = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in init_hypernet(4, 8, hcfg, rng).items()}
    names = list(theta) + list(phi)
    x0 = rng.normal(size=(3, 4))
    upstream = -rng.normal(size=(3, 8))

    def build(tape, *nodes):
        params = dict(zip(names, nodes))
        xts = diffuse(tape.const(x0), {k: params[k] for k in theta}, scfg)
        return ops.inner(hypernet_forward(xts, {k: params[k] for k in phi}, hcfg), upstream)

    return check(build, [theta[k] for k in theta] + [phi[k] for k in phi])


def suite_collab_gcn(seed):
    rng = np.random.default_rng(seed)
    params = init_collab_gcn(4, rng)
    x0 = rng.normal(size=(3, 4))
    weights = rng.normal(size=(3, 4))

    def build(tape, x, wa, wb):
        return ops.inner(collab_gcn(x, {"Wa": wa, "Wb": wb}), weights)

    return check(build, [x0, params["Wa"], params["Wb"]])


SUITES = {
    "numerics": suite_numerics,
    "gcn_loss": suite_gcn,
    "sheaf_diffuse": suite_sheaf,
    "hypernet": suite_hypernet,
    "server_surrogate": suite_server,
    "collab_gcn": suite_collab_gcn,
}


@dataclass
class SuiteResult:
    name: str
    max_error: float
    worst: str = ""
    failing: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_error < TOLERANCE


def run_suites(seeds=5, names=None):
    """Run every suite over ``seeds`` seeds; returns (results, seconds)."""
    start = time.perf_counter()
    results = []
    for name in names or SUITES:
        fn = SUITES[name]
        worst, where, failing = 0.0, "", set()
        for seed in range(seeds):
            out = fn(seed)
            per_op = out if isinstance(out, dict) else {name: out}
            for op, err in per_op.items():
                if err >= TOLERANCE:
                    failing.add(op)
                if err > worst or not where:
                    worst, where = max(worst, err), op
        results.append(SuiteResult(name, worst, where, sorted(failing)))
    return results, time.perf_counter() - start


@contextlib.contextmanager
def corrupted(op_name, factor=1.5):
    """Temporarily scale the backward rule of ``ops.<op_name>`` (negative control)."""
    attr = {"sum": "sum_all"}.get(op_name, op_name)
    original = getattr(ops, attr)

    def wrapped(*args, **kwargs):
        node = original(*args, **kwargs)
        rule = node.backward_fn
        if rule is not None and node.op == op_name:
            node.backward_fn = lambda g: tuple(None if p is None else factor * p for p in rule(g))
        return node

    setattr(ops, attr, wrapped)
    try:
        yield
    finally:
        setattr(ops, attr, original)
