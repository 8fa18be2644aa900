"""Central finite-difference checks for the tape."""
from __future__ import annotations

import numpy as np

from .tape import Tape


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(fn, inputs, h=1e-6):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. every input."""
    grads = []
    for i, x in enumerate(inputs):
        g = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp = [a.copy() for a in inputs]
            xm = [a.copy() for a in inputs]
            xp[i][idx] += h
            xm[i][idx] -= h
            g[idx] = (fn(*xp) - fn(*xm)) / (2.0 * h)
        grads.append(g)
    return grads


def check(build, inputs, h=1e-6):
    """Compare tape gradients with central differences.

    ``build(tape, *nodes)`` must return a 1x1 node.  Returns the maximum
    relative error over all inputs.
    """
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]

    def value(*arrays):
        tape = Tape()
        nodes = [tape.param(a) for a in arrays]
        return float(build(tape, *nodes).value[0, 0])

    tape = Tape()
    nodes = [tape.param(a) for a in inputs]
    analytic = tape.backward(build(tape, *nodes), nodes)
    numeric = numeric_grad(value, inputs, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
