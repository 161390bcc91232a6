import math

import numpy as np
import pytest

from snowgraph.errors import ShapeError
from snowgraph.layers import (
    gru_cell,
    gru_cell_t,
    gru_group,
    mlp_apply,
    mlp_apply_t,
    mlp_group,
    vector_group,
)
from snowgraph.params import Param, ParameterGroup


def zeroed(group):
    for p in group.params:
        p.tensor.value[...] = 0.0
    return group


def test_mlp_zero_weights_gives_zero():
    g = zeroed(mlp_group("m", [3, 4, 2], np.random.default_rng(0)))
    assert np.array_equal(mlp_apply(g, np.array([1.0, -2.0, 0.5])), np.zeros(2))


def test_mlp_identity_single_layer():
    g = ParameterGroup("m", [Param.create("w", np.eye(3)), Param.create("b", np.zeros(3))])
    x = np.array([0.3, -1.2, 4.0])
    assert np.array_equal(mlp_apply(g, x), x)


def test_mlp_one_hidden_closed_form():
    g = ParameterGroup("m", [
        Param.create("w0", np.array([[1.0]])),
        Param.create("b0", np.array([0.0])),
        Param.create("w1", np.array([[1.0]])),
        Param.create("b1", np.array([0.0])),
    ])
    out = mlp_apply(g, np.array([0.5]))
    assert out[0] == pytest.approx(math.tanh(0.5), abs=1e-12)


def test_mlp_width_mismatch():
    g = mlp_group("m", [3, 4, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        mlp_apply(g, np.zeros(5))


def test_gru_zero_parameters_halve_state():
    g = zeroed(gru_group("u", 4, 4, np.random.default_rng(0)))
    h = np.array([1.0, -2.0, 0.5, 3.0])
    out = gru_cell(g, h, np.zeros(4))
    assert np.allclose(out, 0.5 * h, atol=1e-12)


def test_gru_update_gate_saturation():
    g = zeroed(gru_group("u", 2, 2, np.random.default_rng(0)))
    h = np.array([1.0, -1.0])
    m = np.zeros(2)
    # huge positive update-gate bias: z ~ 1, new state ~ candidate = tanh(0) = 0
    g.params[5].tensor.value[...] = 500.0  # b_z
    assert np.allclose(gru_cell(g, h, m), 0.0, atol=1e-12)
    # huge negative: z ~ 0, state passes through
    g.params[5].tensor.value[...] = -500.0
    assert np.allclose(gru_cell(g, h, m), h, atol=1e-12)


def test_gru_width_mismatch():
    g = gru_group("u", 4, 4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        gru_cell(g, np.zeros(4), np.zeros(3))


def test_taped_variants_match_plain_bitwise():
    rng = np.random.default_rng(7)
    mg = mlp_group("m", [6, 8, 3], rng)
    x = rng.standard_normal((5, 6))
    assert np.array_equal(mlp_apply(mg, x), mlp_apply_t(mg, x).value)

    gg = gru_group("u", 8, 8, rng)
    h = rng.standard_normal((5, 8))
    m = rng.standard_normal((5, 8))
    assert np.array_equal(gru_cell(gg, h, m), gru_cell_t(gg, h, m).value)


def test_vector_group_starts_at_zero():
    g = vector_group("log_std", 3)
    assert np.array_equal(g.tensors[0], np.zeros(3))


def test_mlp_group_biases_zero_weights_orthogonal():
    g = mlp_group("m", [4, 4, 4], np.random.default_rng(3))
    w0, b0, w1, b1 = g.tensors
    assert np.allclose(w0.T @ w0, np.eye(4), atol=1e-10)
    assert np.allclose(w1.T @ w1, np.eye(4), atol=1e-10)
    assert np.all(b0 == 0) and np.all(b1 == 0)
