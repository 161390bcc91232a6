"""Dense MLP and GRU building blocks.

Each block exists in two forms that share the same arithmetic, term for
term: a plain-numpy form used on the sampling path (no gradient bookkeeping)
and a taped form used during optimization. ``tests/test_layers.py`` pins the
two forms to bit-identical outputs.

Weight convention is row-vector times matrix: x @ W + b, with W shaped
(fan_in, fan_out). Matrices are initialised orthogonally with gain 1 (tanh
nonlinearities), vectors to zero.
"""

from __future__ import annotations

import numpy as np

from . import tape
from .errors import ShapeError
from .params import Param, ParameterGroup, orthogonal_init
from .tape import Tensor, sigmoid_values


def mlp_group(
    name: str,
    sizes: list[int],
    rng: np.random.Generator,
    frozen: bool = False,
) -> ParameterGroup:
    """Affine stack [in, hidden..., out]; tanh between layers, linear output."""
    params = []
    for i in range(len(sizes) - 1):
        params.append(Param.create(f"w{i}", orthogonal_init(sizes[i], sizes[i + 1], 1.0, rng)))
        params.append(Param.create(f"b{i}", np.zeros(sizes[i + 1])))
    return ParameterGroup(name, params, frozen=frozen)


def gru_group(name: str, input_width: int, hidden_width: int, rng: np.random.Generator, frozen: bool = False) -> ParameterGroup:
    params = []
    for gate in ("r", "z", "h"):
        params.append(Param.create(f"w_{gate}", orthogonal_init(input_width, hidden_width, 1.0, rng)))
        params.append(Param.create(f"u_{gate}", orthogonal_init(hidden_width, hidden_width, 1.0, rng)))
        params.append(Param.create(f"b_{gate}", np.zeros(hidden_width)))
    return ParameterGroup(name, params, frozen=frozen)


def vector_group(name: str, width: int, frozen: bool = False) -> ParameterGroup:
    return ParameterGroup(name, [Param.create("v", np.zeros(width))], frozen=frozen)


def _check_width(x, expected: int, what: str) -> None:
    if x.shape[-1] != expected:
        raise ShapeError(f"{what}: input width {x.shape[-1]} != expected {expected}")


def mlp_apply(group: ParameterGroup, x: np.ndarray) -> np.ndarray:
    """tanh hidden layers, linear output. Accepts a vector or a row batch."""
    arrays = group.tensors
    _check_width(x, arrays[0].shape[0], f"mlp {group.name!r}")
    h = x
    for i in range(0, len(arrays) - 2, 2):
        h = np.tanh(h @ arrays[i] + arrays[i + 1])
    return h @ arrays[-2] + arrays[-1]


def mlp_apply_t(group: ParameterGroup, x) -> Tensor:
    """Taped twin of mlp_apply; 2-D row batches only."""
    leaves = group.leaves
    _check_width(_shape_of(x), leaves[0].value.shape[0], f"mlp {group.name!r}")
    h = x
    for i in range(0, len(leaves) - 2, 2):
        h = tape.tanh_linear(h, leaves[i], leaves[i + 1])
    return tape.linear(h, leaves[-2], leaves[-1])


def gru_cell(group: ParameterGroup, h: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Gated update of hidden state h from incoming message m:

        r  = sigmoid(m W_r + h U_r + b_r)
        z  = sigmoid(m W_z + h U_z + b_z)
        c  = tanh(m W_h + (r*h) U_h + b_h)
        h' = (1 - z)*h + z*c

    Accepts vectors or row batches.
    """
    w_r, u_r, b_r, w_z, u_z, b_z, w_h, u_h, b_h = group.tensors
    _check_width(m, w_r.shape[0], f"gru {group.name!r} message")
    _check_width(h, u_r.shape[0], f"gru {group.name!r} state")
    r = sigmoid_values(m @ w_r + h @ u_r + b_r)
    z = sigmoid_values(m @ w_z + h @ u_z + b_z)
    c = np.tanh(m @ w_h + (r * h) @ u_h + b_h)
    return (1.0 - z) * h + z * c


def gru_cell_t(group: ParameterGroup, h, m) -> Tensor:
    """Taped twin of gru_cell; 2-D row batches only."""
    w_r, u_r, b_r, w_z, u_z, b_z, w_h, u_h, b_h = group.leaves
    r = tape.sigmoid_affine(m, w_r, h, u_r, b_r)
    z = tape.sigmoid_affine(m, w_z, h, u_z, b_z)
    c = tape.tanh_affine(m, w_h, tape.mul(r, h), u_h, b_h)
    return tape.gate_blend(h, c, z)


def _shape_of(x):
    return x.value if isinstance(x, Tensor) else x
