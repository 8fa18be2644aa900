"""Server-side collaboration graph and learnable diagonal sheaf diffusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import Tape, glorot, ops


@dataclass
class SheafConfig:
    stalk_dim: int = 2
    steps: int = 2
    sigma: str = "elu"
    laplacian_eps: float = 1e-8
    share_weights: bool = False

    def __post_init__(self):
        if self.stalk_dim < 1 or self.steps < 1:
            raise ConfigError("stalk_dim and steps must be >= 1")
        if self.sigma not in ops.ACTIVATIONS:
            raise ConfigError(f"unknown sigma {self.sigma!r}")

    def channels(self, d):
        if d % self.stalk_dim:
            raise ConfigError(f"embedding dim {d} not divisible by stalk_dim {self.stalk_dim}")
        return d // self.stalk_dim


def complete_edges(n):
    """Both endpoint arrays of the complete graph on ``n`` nodes (u < v)."""
    src, dst = np.triu_indices(n, k=1)
    return src.astype(np.int64), dst.astype(np.int64)


def _orthogonal(rng, k):
    q, r = np.linalg.qr(rng.normal(size=(k, k)))
    return q * np.sign(np.diag(r))


def init_sheaf(d, config: SheafConfig, rng):
    """theta: restriction-map generator plus (W1, W2) per diffusion step."""
    ds, fc = config.stalk_dim, config.channels(d)
    params = {}
    for t in range(config.steps):
        params[f"map_gen_{t}"] = glorot(rng, 2 * d, ds)
        params[f"map_bias_{t}"] = np.zeros((1, ds))
        if t == 0 or not config.share_weights:
            params[f"W1_{t}"] = np.eye(ds)
            params[f"W2_{t}"] = _orthogonal(rng, fc)
    return params


def _weight(params, name, t, config):
    return params[f"{name}_{0 if config.share_weights else t}"]


def restriction_maps(x, gen, bias, src, dst):
    """Diagonal maps for both incidences of each edge.

    The map of ``u <| (u, v)`` is ``tanh([x_u ; x_v] @ gen + bias)``; the
    concatenation order makes it orientation-sensitive.
    """
    d = x.shape[1]
    p = ops.matmul(x, ops.slice_rows(gen, 0, d))
    q = ops.matmul(x, ops.slice_rows(gen, d, 2 * d))
    f_src = ops.tanh(ops.add_bias(ops.add(ops.gather_rows(p, src), ops.gather_rows(q, dst)), bias))
    f_dst = ops.tanh(ops.add_bias(ops.add(ops.gather_rows(p, dst), ops.gather_rows(q, src)), bias))
    return f_src, f_dst


def diffusion_step(x, params, t, config: SheafConfig, src, dst):
    """X_t = X_{t-1} - sigma(Delta_F (I (x) W1) X_{t-1} W2) in stalk layout."""
    n, d = x.shape
    ds, fc = config.stalk_dim, config.channels(d)
    f_src, f_dst = restriction_maps(x, params[f"map_gen_{t}"], params[f"map_bias_{t}"], src, dst)
    lap = ops.normalize_laplacian(ops.sheaf_laplacian(f_src, f_dst, src, dst, n), config.laplacian_eps)
    xs = ops.reshape(x, n * ds, fc)
    w1 = ops.kron_eye(_weight(params, "W1", t, config), n)
    z = ops.matmul(ops.matmul(lap, ops.matmul(w1, xs)), _weight(params, "W2", t, config))
    return ops.reshape(ops.sub(xs, ops.activation(config.sigma, z)), n, d)


def diffuse(x0, params, config: SheafConfig):
    """S(X0; theta) on the tape of ``x0``; ``params`` maps names to nodes."""
    src, dst = complete_edges(x0.shape[0])
    config.channels(x0.shape[1])
    x = x0
    for t in range(config.steps):
        x = diffusion_step(x, params, t, config, src, dst)
    return x


def diffuse_values(x0, params, config: SheafConfig):
    """Numpy-in, numpy-out convenience wrapper around :func:`diffuse`."""
    tape = Tape()
    nodes = {k: tape.const(v, k) for k, v in params.items()}
    return diffuse(tape.const(x0), nodes, config).value


# Plain GCN over the complete collaboration graph, used as an ablation.

def init_collab_gcn(d, rng):
    return {"Wa": glorot(rng, d, d), "Wb": glorot(rng, d, d) * 0.1}


def collab_gcn(x0, params):
    """X0 + A ELU(A X0 Wa) Wb with A the normalised complete graph plus self-loops."""
    n = x0.shape[0]
    a = x0.tape.const(np.full((n, n), 1.0 / n), "a_collab")
    h = ops.elu(ops.matmul(ops.matmul(a, x0), params["Wa"]))
    return ops.add(x0, ops.matmul(ops.matmul(a, h), params["Wb"]))


def build_laplacian(f_src, f_dst, src, dst, n):
    """Numpy wrapper: dense sheaf Laplacian from per-incidence diagonals."""
    tape = Tape()
    return ops.sheaf_laplacian(tape.const(f_src), tape.const(f_dst), src, dst, n).value


def normalize(lap, eps=1e-8):
    """Numpy wrapper: D^{-1/2} L D^{-1/2}."""
    return ops.normalize_laplacian(Tape().const(lap), eps).value
