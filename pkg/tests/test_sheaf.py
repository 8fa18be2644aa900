
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsheafhn.errors import ConfigError
from fedsheafhn.numerics import Tape, check, ops
from fedsheafhn.sheaf import (
    SheafConfig,
    build_laplacian,
    complete_edges,
    diffuse,
    diffuse_values,
    init_sheaf,
    normalize,
    restriction_maps,
)

SATURATED = 20.0  # tanh(20.0) == 1.0 in float64


def maps_for(x, gen, bias):
    t = Tape()
    src, dst = complete_edges(x.shape[0])
    fs, fd = restriction_maps(t.const(x), t.const(gen), t.const(bias), src, dst)
    return fs.value, fd.value


def random_instance(rng, n, ds, edges=None):
    src, dst = complete_edges(n) if edges is None else edges
    fs = rng.uniform(-1, 1, size=(len(src), ds))
    fd = rng.uniform(-1, 1, size=(len(src), ds))
    return fs, fd, src, dst


def quadratic_oracle(x, fs, fd, src, dst, ds):
    xs = x.reshape(-1, ds)
    return sum(np.sum((fs[e] * xs[src[e]] - fd[e] * xs[dst[e]]) ** 2) for e in range(len(src)))


def graph_laplacian(n, src, dst):
    a = np.zeros((n, n))
    a[src, dst] = a[dst, src] = 1.0
    return np.diag(a.sum(axis=1)) - a


def test_restriction_map_examples():
    x = np.random.default_rng(0).normal(size=(3, 4))
    fs, fd = maps_for(x, np.zeros((8, 2)), np.zeros((1, 2)))
    assert not fs.any() and not fd.any()
    fs, fd = maps_for(x, np.zeros((8, 2)), np.full((1, 2), SATURATED))
    assert np.array_equal(fs, np.ones_like(fs)) and np.array_equal(fd, np.ones_like(fd))
    rng = np.random.default_rng(1)
    fs, fd = maps_for(x, rng.normal(size=(8, 2)), rng.normal(size=(1, 2)))
    assert np.all(np.abs(fs) < 1) and np.all(np.abs(fd) < 1)


def test_restriction_maps_are_orientation_sensitive():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 2))
    gen = rng.normal(size=(4, 1))
    fs, fd = maps_for(x, gen, np.zeros((1, 1)))
    assert np.isclose(fs[0, 0], np.tanh(np.concatenate([x[0], x[1]]) @ gen[:, 0]))
    assert np.isclose(fd[0, 0], np.tanh(np.concatenate([x[1], x[0]]) @ gen[:, 0]))
    assert fs[0, 0] != fd[0, 0]


def test_laplacian_k2_examples():
    src, dst = complete_edges(2)
    assert np.array_equal(build_laplacian([[1.0]], [[1.0]], src, dst, 2), [[1, -1], [-1, 1]])
    assert np.array_equal(build_laplacian([[2.0]], [[1.0]], src, dst, 2), [[4, -2], [-2, 1]])


@pytest.mark.parametrize("seed", range(5))
def test_laplacian_quadratic_form_on_triangle(seed):
    rng = np.random.default_rng(seed)
    fs, fd, src, dst = random_instance(rng, 3, 2)
    lap = build_laplacian(fs, fd, src, dst, 3)
    x = rng.normal(size=6)
    assert abs(x @ lap @ x - quadratic_oracle(x, fs, fd, src, dst, 2)) <= 1e-10


def test_laplacian_blocks_match_definition():
    rng = np.random.default_rng(3)
    fs, fd, src, dst = random_instance(rng, 4, 3)
    lap = build_laplacian(fs, fd, src, dst, 4).reshape(4, 3, 4, 3)
    for e, (u, v) in enumerate(zip(src, dst)):
        assert np.allclose(lap[u, :, v, :], -np.diag(fs[e] * fd[e]), atol=1e-15)
    for u in range(4):
        expected = sum(fs[e] ** 2 for e in range(len(src)) if src[e] == u)
        expected = expected + sum(fd[e] ** 2 for e in range(len(src)) if dst[e] == u)
        assert np.allclose(lap[u, :, u, :], np.diag(expected), atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 100_000))
def test_laplacian_symmetric_psd_and_quadratic_identity(n, ds, seed):
    rng = np.random.default_rng(seed)
    fs, fd, src, dst = random_instance(rng, n, ds)
    lap = build_laplacian(fs, fd, src, dst, n)
    assert np.max(np.abs(lap - lap.T)) <= 1e-12
    for _ in range(3):
        x = rng.normal(size=n * ds)
        q = x @ lap @ x
        assert q >= -1e-10
        assert abs(q - quadratic_oracle(x, fs, fd, src, dst, ds)) <= 1e-10
    spectrum = np.linalg.eigvalsh(normalize(lap))
    assert spectrum.min() >= -1e-9 and spectrum.max() <= 2 + 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_identity_maps_reduce_to_graph_laplacian(seed):
    rng = np.random.default_rng(seed)
    n = 6
    src, dst = complete_edges(n)
    keep = rng.random(len(src)) < 0.6
    keep[0] = True
    src, dst = src[keep], dst[keep]
    ones = np.ones((len(src), 1))
    lap = build_laplacian(ones, ones, src, dst, n)
    expected = graph_laplacian(n, src, dst)
    assert np.max(np.abs(lap - expected)) <= 1e-12
    deg = np.diag(expected)
    d = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 1.0 / np.sqrt(1e-8))
    sym = d[:, None] * expected * d[None, :]
    assert np.max(np.abs(normalize(lap) - sym)) <= 1e-12


def test_normalize_examples():
    src, dst = complete_edges(2)
    delta = normalize(build_laplacian([[1.0]], [[1.0]], src, dst, 2))
    assert np.array_equal(delta, [[1, -1], [-1, 1]])
    assert np.allclose(np.linalg.eigvalsh(delta), [0, 2], atol=1e-15)
    degenerate = normalize(np.array([[0.0, 0.0], [0.0, 1.0]]))
    assert np.all(np.isfinite(degenerate))


def test_diffusion_hand_case():
    cfg = SheafConfig(stalk_dim=1, steps=1, sigma="identity")
    params = {"map_gen_0": np.zeros((2, 1)), "map_bias_0": [[SATURATED]], "W1_0": [[1.0]], "W2_0": [[1.0]]}
    x1 = diffuse_values(np.array([[1.0], [0.0]]), params, cfg)
    assert np.max(np.abs(x1 - [[0.0], [1.0]])) <= 1e-12


@pytest.mark.parametrize("sigma", ["elu", "tanh", "identity"])
def test_zero_maps_freeze_diffusion(sigma):
    rng = np.random.default_rng(4)
    cfg = SheafConfig(stalk_dim=2, steps=3, sigma=sigma)
    params = init_sheaf(4, cfg, rng)
    for t in range(3):
        params[f"map_gen_{t}"] = np.zeros((8, 2))
        params[f"map_bias_{t}"] = np.zeros((1, 2))
    x0 = rng.normal(size=(5, 4))
    assert np.array_equal(diffuse_values(x0, params, cfg), x0)


@pytest.mark.parametrize("seed", range(3))
def test_two_steps_equal_composed_single_steps(seed):
    rng = np.random.default_rng(seed)
    cfg2 = SheafConfig(stalk_dim=2, steps=2)
    params = init_sheaf(6, cfg2, rng)
    params = {k: v + 0.3 * rng.normal(size=v.shape) for k, v in params.items()}
    x0 = rng.normal(size=(4, 6))
    one = SheafConfig(stalk_dim=2, steps=1)
    step0 = {k[:-1] + "0": v for k, v in params.items() if k.endswith("_0")}
    step1 = {k[:-1] + "0": v for k, v in params.items() if k.endswith("_1")}
    composed = diffuse_values(diffuse_values(x0, step0, one), step1, one)
    assert np.max(np.abs(diffuse_values(x0, params, cfg2) - composed)) <= 1e-12


def test_shared_weights_variant_and_divisibility():
    rng = np.random.default_rng(5)
    cfg = SheafConfig(stalk_dim=2, steps=3, share_weights=True)
    params = init_sheaf(4, cfg, rng)
    assert "W1_1" not in params and "W2_0" in params
    diffuse_values(rng.normal(size=(3, 4)), params, cfg)
    with pytest.raises(ConfigError):
        init_sheaf(5, SheafConfig(stalk_dim=2), rng)
    with pytest.raises(ConfigError):
        SheafConfig(steps=0)


def test_single_client_is_fixed_point():
    rng = np.random.default_rng(6)
    cfg = SheafConfig()
    x0 = rng.normal(size=(1, 4))
    assert np.array_equal(diffuse_values(x0, init_sheaf(4, cfg, rng), cfg), x0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("sigma", ["elu", "tanh"])
def test_diffusion_gradients(seed, sigma):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 5)), 4
    cfg = SheafConfig(stalk_dim=2, steps=2, sigma=sigma)
    init = init_sheaf(d, cfg, rng)
    names = sorted(init)
    values = [init[k] + 0.3 * rng.normal(size=init[k].shape) for k in names]
    weights = rng.normal(size=(n, d))

    def build(tape, x0, *theta):
        return ops.inner(diffuse(x0, dict(zip(names, theta)), cfg), weights)

    assert check(build, [rng.normal(size=(n, d))] + values) < 1e-5


def test_laplacian_op_gradients():
    rng = np.random.default_rng(7)
    fs, fd, src, dst = random_instance(rng, 4, 2)
    w = rng.normal(size=(8, 8))

    def build(tape, a, b):
        return ops.inner(ops.normalize_laplacian(ops.sheaf_laplacian(a, b, src, dst, 4)), w)

    assert check(build, [fs, fd]) < 1e-5
