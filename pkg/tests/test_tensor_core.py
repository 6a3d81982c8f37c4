import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invsplit.tensor import Graph, GraphError, LayerSpec, gradient_check, pixel_shuffle, pixel_unshuffle
from invsplit.tensor.gradcheck import half_sum_squares, weighted_sum
from invsplit.tensor.graph import conv, conv_transpose
from invsplit.tensor.ops import same_padding


def rng(seed=0):
    return np.random.default_rng(seed)


def test_tanh_of_zeros_is_zero():
    g = Graph([LayerSpec("t", "tanh")], {"x": (3, 3, 2)})
    out = g.forward(np.zeros((1, 3, 3, 2)))
    assert np.array_equal(out, np.zeros((1, 3, 3, 2)))


def test_identity_convolution():
    g = Graph([conv("c", 3, 3, 2, 2)], {"x": (5, 5, 2)})
    w = np.zeros((3, 3, 2, 2))
    w[1, 1] = np.eye(2)
    g.params["c.w"] = w
    x = rng().normal(size=(2, 5, 5, 2))
    assert np.array_equal(g.forward(x), x)


def test_conv_weight_gradient_matches_hand_correlation():
    g = Graph([conv("c", 3, 3, 2, 3, bias=False)], {"x": (4, 5, 2)}, init_std=0.5)
    x = rng(1).normal(size=(2, 4, 5, 2))
    out = g.forward(x)
    pg, _ = g.backward(out)  # L = 0.5 ||out||^2
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    expect = np.zeros((3, 3, 2, 3))
    for a in range(3):
        for b in range(3):
            for ci in range(2):
                for co in range(3):
                    expect[a, b, ci, co] = np.sum(xp[:, a : a + 4, b : b + 5, ci] * out[..., co])
    np.testing.assert_allclose(pg["c.w"], expect, rtol=1e-12, atol=1e-12)


def test_constant_output_graph_has_zero_gradient():
    g = Graph([conv("c", 3, 3, 1, 2), LayerSpec("r", "relu")], {"x": (4, 4, 1)})
    g.params["c.w"] = -np.abs(g.params["c.w"]) - 0.1
    g.params["c.b"] = np.full(2, -0.5)
    x = np.abs(rng().normal(size=(2, 4, 4, 1)))
    out = g.forward(x)
    assert np.all(out == 0)
    pg, ig = g.backward(np.ones_like(out))
    assert all(np.all(v == 0) for v in pg.values())
    assert np.all(ig["x"] == 0)


def test_tiny_graph_matches_finite_differences():
    layers = [
        conv("c1", 3, 3, 2, 3, bias=False),
        LayerSpec("bn", "batch_norm"),
        LayerSpec("act", "leaky_relu", alpha=0.2),
        conv("c2", 3, 3, 3, 2),
    ]
    g = Graph(layers, {"x": (4, 4, 2)}, seed=3, init_std=0.5)
    x = rng(2).normal(size=(2, 4, 4, 2))
    assert gradient_check(g, x, loss=weighted_sum(1), step=1e-5) < 1e-4


def test_linear_graph_quadratic_loss_is_near_exact():
    g = Graph([conv("c", 3, 3, 2, 2)], {"x": (4, 4, 2)}, seed=1, init_std=0.5)
    x = rng(3).normal(size=(1, 4, 4, 2))
    assert gradient_check(g, x, loss=half_sum_squares) < 1e-8


LAYER_CASES = {
    "conv": ([conv("l", 4, 4, 2, 3, stride=2)], (4, 4, 2)),
    "conv_stride1": ([conv("l", 4, 4, 2, 3, stride=1)], (4, 4, 2)),
    "conv_transpose": ([conv_transpose("l", 4, 4, 2, 3, stride=2)], (2, 2, 2)),
    "batch_norm": ([LayerSpec("l", "batch_norm")], (3, 3, 2)),
    "leaky_relu": ([LayerSpec("l", "leaky_relu", alpha=0.2)], (3, 3, 2)),
    "relu": ([LayerSpec("l", "relu")], (3, 3, 2)),
    "tanh": ([LayerSpec("l", "tanh")], (3, 3, 2)),
    "sigmoid": ([LayerSpec("l", "sigmoid")], (3, 3, 2)),
    "concat": ([LayerSpec("a", "tanh"), LayerSpec("l", "concat", concat_source="x")], (3, 3, 2)),
    "pixel_unshuffle": ([LayerSpec("l", "pixel_unshuffle", r=2)], (4, 4, 2)),
    "pixel_shuffle": ([LayerSpec("l", "pixel_shuffle", r=2)], (2, 2, 8)),
    "dense": ([LayerSpec("l", "dense", units=3, use_bias=True)], (2, 2, 2)),
    "clamp": ([LayerSpec("l", "clamp", lo=-0.5, hi=0.5)], (3, 3, 2)),
}


@pytest.mark.parametrize("case", sorted(LAYER_CASES))
def test_every_layer_kind_passes_gradient_check(case):
    layers, shape = LAYER_CASES[case]
    g = Graph(layers, {"x": shape}, seed=5, init_std=0.5)
    x = rng(7).normal(size=(2,) + shape)
    assert gradient_check(g, x, loss=weighted_sum(2)) < 1e-4


def test_batch_norm_infer_mode_gradient():
    g = Graph([LayerSpec("l", "batch_norm")], {"x": (3, 3, 2)})
    g.buffers["l.mean"] = np.array([0.3, -0.2])
    g.buffers["l.var"] = np.array([2.0, 0.5])
    x = rng(1).normal(size=(2, 3, 3, 2))
    assert gradient_check(g, x, loss=weighted_sum(3), mode="infer") < 1e-4


def test_batch_norm_normalizes_batch():
    g = Graph([LayerSpec("bn", "batch_norm")], {"x": (5, 5, 3)})
    x = rng(4).normal(loc=3.0, scale=2.0, size=(4, 5, 5, 3))
    out = g.forward(x)
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0.0, atol=1e-8)
    var = x.var(axis=(0, 1, 2))
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), var / (var + 1e-5), atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), 1.0, atol=1e-5)


def test_batch_norm_running_statistics_momentum():
    g = Graph([LayerSpec("bn", "batch_norm")], {"x": (2, 2, 1)})
    x = rng().normal(size=(3, 2, 2, 1))
    g.forward(x)
    np.testing.assert_allclose(g.buffers["bn.mean"], 0.1 * x.mean(axis=(0, 1, 2)), rtol=1e-12)
    np.testing.assert_allclose(g.buffers["bn.var"], 0.9 + 0.1 * x.var(axis=(0, 1, 2)), rtol=1e-12)
    # infer mode reads, never writes, the running statistics
    before = g.buffers["bn.mean"].copy()
    g.forward(x, mode="infer")
    assert np.array_equal(before, g.buffers["bn.mean"])


def test_pixel_unshuffle_reference_shape():
    assert pixel_unshuffle(np.zeros((1, 256, 256, 3)), 4).shape == (1, 64, 64, 48)
    assert pixel_shuffle(np.zeros((1, 64, 64, 48)), 4).shape == (1, 256, 256, 3)


def test_pixel_unshuffle_channel_order():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert pixel_unshuffle(x, 2).ravel().tolist() == [1.0, 2.0, 3.0, 4.0]


def test_pixel_shuffle_matches_index_formula():
    x = rng().normal(size=(2, 4, 4, 8))
    r = 2
    expect = np.zeros((2, 8, 8, 2))
    for n in range(2):
        for i in range(4):
            for j in range(4):
                for c in range(2):
                    for di in range(r):
                        for dj in range(r):
                            expect[n, i * r + di, j * r + dj, c] = x[n, i, j, c * r * r + di * r + dj]
    assert np.array_equal(pixel_shuffle(x, r), expect)


def test_shuffle_errors():
    with pytest.raises(ValueError):
        pixel_unshuffle(np.zeros((1, 3, 4, 1)), 2)
    with pytest.raises(ValueError):
        pixel_shuffle(np.zeros((1, 2, 2, 3)), 2)


def test_shuffle_roundtrip_exhaustive_small():
    for r in (1, 2, 3):
        for c in (1, 2):
            x = np.arange(2 * 6 * 6 * c, dtype=float).reshape(2, 6, 6, c)
            assert np.array_equal(pixel_shuffle(pixel_unshuffle(x, r), r), x)
            y = np.arange(2 * 2 * 2 * c * r * r, dtype=float).reshape(2, 2, 2, c * r * r)
            assert np.array_equal(pixel_unshuffle(pixel_shuffle(y, r), r), y)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_shuffle_roundtrip_random(r, hb, wb, c, seed):
    x = rng(seed).normal(size=(2, hb * r, wb * r, c))
    assert np.array_equal(pixel_shuffle(pixel_unshuffle(x, r), r), x)


@pytest.mark.parametrize("size,s", [(256, 2), (7, 2), (5, 1), (9, 3), (1, 2)])
def test_same_conv_shape_law(size, s):
    out, lo, hi = same_padding(size, 4, s)
    assert out == -(-size // s)
    g = Graph([conv("c", 4, 4, 1, 1, stride=s)], {"x": (size, size, 1)})
    assert g.output_shape == (out, out, 1)
    assert g.forward(np.ones((1, size, size, 1))).shape == (1, out, out, 1)


def test_conv_transpose_is_adjoint_of_conv():
    from invsplit.tensor import ops

    w = rng(1).normal(size=(4, 4, 3, 2))
    x = rng(2).normal(size=(2, 8, 8, 3))
    t = rng(3).normal(size=(2, 4, 4, 2))
    lhs = np.sum(ops.conv2d(x, w, 2) * t)
    rhs = np.sum(x * ops.conv2d_transpose(t, w.transpose(0, 1, 3, 2), 2))
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_shape_mismatch_names_layer():
    with pytest.raises(GraphError, match=r"\[c2\]"):
        Graph([conv("c1", 3, 3, 1, 4), conv("c2", 3, 3, 5, 1)], {"x": (4, 4, 1)})


def test_input_shape_mismatch():
    g = Graph([LayerSpec("t", "tanh")], {"x": (4, 4, 1)})
    with pytest.raises(GraphError, match="expected input"):
        g.forward(np.zeros((1, 4, 5, 1)))


def test_non_finite_activation_names_layer():
    g = Graph([conv("c", 3, 3, 1, 1)], {"x": (3, 3, 1)})
    g.params["c.w"][:] = 1e300
    with pytest.raises(GraphError, match=r"\[c\] non-finite"):
        g.forward(np.full((1, 3, 3, 1), 1e300))


def test_backward_without_forward():
    g = Graph([LayerSpec("t", "tanh")], {"x": (2, 2, 1)})
    with pytest.raises(RuntimeError):
        g.backward(np.zeros((1, 2, 2, 1)))


def test_layer_spec_field_discipline():
    with pytest.raises(GraphError):
        LayerSpec("a", "relu", alpha=0.2)
    with pytest.raises(GraphError):
        LayerSpec("a", "leaky_relu")
    with pytest.raises(GraphError):
        LayerSpec("a", "pooling")


def test_concat_source_must_exist():
    with pytest.raises(GraphError, match="concat source"):
        Graph([LayerSpec("c", "concat", concat_source="later"), LayerSpec("later", "tanh")], {"x": (2, 2, 1)})


def test_determinism_same_seed():
    layers = [conv("c1", 3, 3, 2, 4, bias=False), LayerSpec("bn", "batch_norm"), LayerSpec("r", "relu")]
    x = rng(9).normal(size=(3, 6, 6, 2))
    a = Graph(layers, {"x": (6, 6, 2)}, seed=11)
    b = Graph(layers, {"x": (6, 6, 2)}, seed=11)
    oa, ob = a.forward(x), b.forward(x)
    assert np.array_equal(oa, ob)
    ga, gb = a.backward(oa)[0], b.backward(ob)[0]
    assert all(np.array_equal(ga[k], gb[k]) for k in ga)


def test_truncated_normal_init():
    g = Graph([conv("c", 4, 4, 16, 16)], {"x": (4, 4, 16)}, seed=0)
    w = g.params["c.w"]
    assert np.abs(w).max() <= 0.04
    assert abs(w.std() - 0.02) < 0.004
    assert np.all(g.params["c.b"] == 0)
