import numpy as np


def glorot(rng, fan_in, fan_out, gain=1.0):
    """Glorot-uniform matrix of shape (fan_in, fan_out)."""
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
