import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsheafhn.errors import ContractError
from fedsheafhn.hypernet import (
    HyperNetConfig,
    attention,
    attention_scores,
    hypernet_forward,
    hypernet_values,
    init_hypernet,
    layout_size,
    make_layout,
    pack,
    unpack,
)
from fedsheafhn.numerics import Tape, check, ops


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def softmax(z):
    z = np.exp(z - z.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def oracle(x, p, attend=True):
    """Layer-by-layer evaluation written out longhand."""
    if attend:
        d = x.shape[1]
        a = softmax((x @ p["Wq"]) @ (x @ p["Wk"]).T / np.sqrt(d))
        x = a @ (x @ p["Wv"])
    h = elu(x @ p["H1"] + p["c1"])
    h = elu(h @ p["H2"] + p["c2"])
    return h @ p["Hout"] + p["cout"]


def on_tape(fn, x, params):
    t = Tape()
    return fn(t.const(x), {k: t.const(v) for k, v in params.items()}).value


def randomized(params, rng, scale=0.3):
    return {k: v + scale * rng.normal(size=v.shape) for k, v in params.items()}


def test_single_client_attention():
    rng = np.random.default_rng(0)
    p = init_hypernet(4, 6, HyperNetConfig(hidden=8), rng)
    x = rng.normal(size=(1, 4))
    assert np.array_equal(on_tape(attention_scores, x, p), [[1.0]])
    assert np.allclose(on_tape(attention, x, p), x @ p["Wv"], rtol=0, atol=1e-15)


def test_zero_query_key_gives_uniform_attention():
    rng = np.random.default_rng(1)
    p = init_hypernet(4, 6, HyperNetConfig(hidden=8), rng)
    p["Wq"] = np.zeros((4, 4))
    p["Wk"] = np.zeros((4, 4))
    x = rng.normal(size=(5, 4))
    assert np.allclose(on_tape(attention_scores, x, p), 0.2, rtol=0, atol=1e-15)
    out = on_tape(attention, x, p)
    assert np.allclose(out, np.tile((x @ p["Wv"]).mean(axis=0), (5, 1)), rtol=0, atol=1e-14)


def test_attention_formula_oracle():
    rng = np.random.default_rng(2)
    p = randomized(init_hypernet(4, 6, HyperNetConfig(hidden=8), rng), rng)
    x = rng.normal(size=(3, 4))
    a = on_tape(attention_scores, x, p)
    assert np.max(np.abs(a.sum(axis=1) - 1)) <= 1e-12
    expected = softmax((x @ p["Wq"]) @ (x @ p["Wk"]).T / 2.0) @ (x @ p["Wv"])
    assert np.max(np.abs(on_tape(attention, x, p) - expected)) <= 1e-12


def test_constant_head():
    rng = np.random.default_rng(3)
    cfg = HyperNetConfig(hidden=8)
    p = init_hypernet(4, 6, cfg, rng)
    p["Hout"] = np.zeros_like(p["Hout"])
    p["cout"] = rng.normal(size=(1, 6))
    out = hypernet_values(rng.normal(size=(4, 4)), p, cfg)
    assert np.array_equal(out, np.tile(p["cout"], (4, 1)))


@pytest.mark.parametrize("attend", [True, False])
def test_forward_matches_layer_oracle(attend):
    rng = np.random.default_rng(4)
    cfg = HyperNetConfig(hidden=5, attention=attend)
    p = randomized(init_hypernet(4, 6, cfg, rng), rng)
    x = rng.normal(size=(2, 4))
    assert np.max(np.abs(hypernet_values(x, p, cfg) - oracle(x, p, attend))) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 100_000))
def test_row_permutation_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    cfg = HyperNetConfig(hidden=8)
    p = randomized(init_hypernet(4, 6, cfg, rng), rng)
    x = rng.normal(size=(n, 4))
    perm = rng.permutation(n)
    assert np.max(np.abs(hypernet_values(x[perm], p, cfg) - hypernet_values(x, p, cfg)[perm])) <= 1e-10


def test_input_dim_mismatch():
    rng = np.random.default_rng(5)
    cfg = HyperNetConfig(hidden=8)
    p = init_hypernet(4, 6, cfg, rng)
    with pytest.raises(ContractError):
        hypernet_values(np.ones((2, 3)), p, cfg)


def test_pack_unpack():
    layout = make_layout(3, 4, 2)
    assert layout_size(layout) == 3 * 4 + 4 * 2
    rng = np.random.default_rng(6)
    w = {"W1": rng.normal(size=(3, 4)), "W2": rng.normal(size=(4, 2))}
    back = unpack(pack(w, layout), layout)
    assert all(np.array_equal(back[k], w[k]) for k in w)
    row = pack(w, layout)
    assert np.array_equal(row[:12], w["W1"].reshape(-1))
    zero = unpack(np.zeros(20), layout)
    assert not zero["W1"].any() and not zero["W2"].any()
    with pytest.raises(ContractError):
        unpack(np.zeros(19), layout)
    full = make_layout(3, 4, 2, generated="all")
    assert layout_size(full) == 20 + 4 + 2
    with pytest.raises(ValueError):
        make_layout(3, 4, 2, generated="some")


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("attend", [True, False])
def test_hypernet_gradients(seed, attend):
    rng = np.random.default_rng(seed)
    cfg = HyperNetConfig(hidden=5, attention=attend)
    init = randomized(init_hypernet(4, 6, cfg, rng), rng)
    names = sorted(init)
    n = int(rng.integers(1, 4))
    upstream = rng.normal(size=(n, 6))

    def build(tape, x, *phi):
        return ops.inner(hypernet_forward(x, dict(zip(names, phi)), cfg), upstream)

    assert check(build, [rng.normal(size=(n, 4))] + [init[k] for k in names]) < 1e-5
