"""Named parameter groups with per-group freezing, learning-rate multipliers
and Adam state.

A group is the unit of freezing: either all of its tensors update or none
do. Frozen groups (and groups with a zero learning-rate multiplier) are
skipped entirely by :func:`adam_step` -- their tensors, moments and step
counter stay bit-identical for the lifetime of the run, while gradients
still flow through them during backpropagation.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tape import Tensor

STORE_FORMAT_VERSION = 1


@dataclass
class Param:
    name: str
    tensor: Tensor
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def create(cls, name: str, value: np.ndarray) -> "Param":
        value = np.ascontiguousarray(value, dtype=np.float64)
        return cls(name, Tensor(value), np.zeros_like(value), np.zeros_like(value))


@dataclass
class ParameterGroup:
    name: str
    params: list[Param]
    frozen: bool = False
    lr_multiplier: float = 1.0
    step: int = 0

    def __post_init__(self):
        if self.lr_multiplier < 0:
            raise ConfigError(f"group {self.name!r}: lr_multiplier must be >= 0")

    @property
    def tensors(self) -> list[np.ndarray]:
        return [p.tensor.value for p in self.params]

    @property
    def leaves(self) -> list[Tensor]:
        return [p.tensor for p in self.params]

    def num_values(self) -> int:
        return sum(p.tensor.value.size for p in self.params)


class ParameterStore:
    """Ordered collection of uniquely named parameter groups."""

    def __init__(self):
        self._groups: dict[str, ParameterGroup] = {}

    def add_group(self, group: ParameterGroup) -> ParameterGroup:
        if group.name in self._groups:
            raise ConfigError(f"duplicate parameter group {group.name!r}")
        self._groups[group.name] = group
        return group

    def __contains__(self, name: str) -> bool:
        return name in self._groups

    def __getitem__(self, name: str) -> ParameterGroup:
        return self._groups[name]

    def groups(self) -> list[ParameterGroup]:
        return list(self._groups.values())

    def zero_grad(self) -> None:
        for group in self._groups.values():
            for p in group.params:
                p.tensor.grad = None

    def collect_grads(self) -> dict[str, list[np.ndarray]]:
        """Gradients accumulated on the leaves; absent gradients read as zero."""
        out = {}
        for group in self._groups.values():
            out[group.name] = [
                p.tensor.grad if p.tensor.grad is not None else np.zeros_like(p.tensor.value)
                for p in group.params
            ]
        return out

    def copy_values(self) -> dict[str, list[np.ndarray]]:
        return {g.name: [p.tensor.value.copy() for p in g.params] for g in self._groups.values()}

    def set_values(self, values: dict[str, list[np.ndarray]]) -> None:
        for name, arrays in values.items():
            group = self._groups[name]
            if len(arrays) != len(group.params):
                raise ShapeError(f"group {name!r}: expected {len(group.params)} tensors, got {len(arrays)}")
            for p, a in zip(group.params, arrays):
                if a.shape != p.tensor.value.shape:
                    raise ShapeError(f"group {name!r}/{p.name}: shape {a.shape} != {p.tensor.value.shape}")
                p.tensor.value = np.ascontiguousarray(a, dtype=np.float64)

    @contextlib.contextmanager
    def temporarily(self, values: dict[str, list[np.ndarray]]):
        """Evaluate forward passes under a different set of parameter values."""
        saved = self.copy_values()
        self.set_values(values)
        try:
            yield self
        finally:
            self.set_values(saved)

    # -- serialization: JSON header plus little-endian float64 payload --

    def to_bytes(self) -> bytes:
        header = {
            "format_version": STORE_FORMAT_VERSION,
            "groups": [
                {
                    "name": g.name,
                    "frozen": g.frozen,
                    "lr_multiplier": g.lr_multiplier,
                    "step": g.step,
                    "tensors": [{"name": p.name, "shape": list(p.tensor.value.shape)} for p in g.params],
                }
                for g in self._groups.values()
            ],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        chunks = [len(blob).to_bytes(8, "little"), blob]
        for g in self._groups.values():
            for p in g.params:
                for arr in (p.tensor.value, p.m, p.v):
                    chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParameterStore":
        hlen = int.from_bytes(data[:8], "little")
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
        if header.get("format_version") != STORE_FORMAT_VERSION:
            raise ShapeError(f"unsupported parameter payload version {header.get('format_version')!r}")
        store = cls()
        off = 8 + hlen
        for gh in header["groups"]:
            params = []
            for th in gh["tensors"]:
                shape = tuple(th["shape"])
                n = int(np.prod(shape)) if shape else 1
                arrays = []
                for _ in range(3):
                    arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).copy()
                    arrays.append(arr)
                    off += n * 8
                p = Param.create(th["name"], arrays[0])
                p.m, p.v = arrays[1], arrays[2]
                params.append(p)
            store.add_group(
                ParameterGroup(
                    gh["name"],
                    params,
                    frozen=bool(gh["frozen"]),
                    lr_multiplier=float(gh["lr_multiplier"]),
                    step=int(gh["step"]),
                )
            )
        return store


def orthogonal_init(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    """gain * Q with orthonormal rows when rows <= cols, else orthonormal
    columns. Signs are fixed from the QR factor so the result is a
    deterministic function of the generator state."""
    if rows < 1 or cols < 1:
        raise ConfigError(f"orthogonal_init needs positive dims, got {rows}x{cols}")
    a = rng.standard_normal((rows, cols))
    if rows < cols:
        q, r = np.linalg.qr(a.T)
        d = np.sign(np.diag(r))
        d[d == 0] = 1.0
        mat = (q * d).T
    else:
        q, r = np.linalg.qr(a)
        d = np.sign(np.diag(r))
        d[d == 0] = 1.0
        mat = q * d
    return gain * mat


def adam_step(
    store: ParameterStore,
    grads: dict[str, list[np.ndarray]],
    base_lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam, applied per tensor at base_lr * group multiplier.

    Frozen groups and groups with lr_multiplier == 0 are skipped outright:
    no tensor update, no moment update, no step increment.
    """
    for group in store.groups():
        if group.frozen or group.lr_multiplier == 0.0:
            continue
        try:
            glist = grads[group.name]
        except KeyError:
            raise ShapeError(f"no gradients supplied for group {group.name!r}") from None
        if len(glist) != len(group.params):
            raise ShapeError(
                f"group {group.name!r}: {len(glist)} gradients for {len(group.params)} tensors"
            )
        lr = base_lr * group.lr_multiplier
        group.step += 1
        bc1 = 1.0 - beta1**group.step
        bc2 = 1.0 - beta2**group.step
        for p, g in zip(group.params, glist):
            if g.shape != p.tensor.value.shape:
                raise ShapeError(
                    f"group {group.name!r}/{p.name}: gradient shape {g.shape} != {p.tensor.value.shape}"
                )
            p.m *= beta1
            p.m += (1.0 - beta1) * g
            p.v *= beta2
            p.v += (1.0 - beta2) * (g * g)
            p.tensor.value -= lr * (p.m / bc1) / (np.sqrt(p.v / bc2) + eps)


def l2_penalty(group: ParameterGroup, lam: float) -> tuple[float, list[np.ndarray]]:
    """Quadratic weight penalty for one group: loss term lam * sum(theta^2)
    and its per-tensor gradient contribution 2 * lam * theta."""
    if lam < 0:
        raise ConfigError(f"l2 coefficient must be >= 0, got {lam}")
    loss = 0.0
    grads = []
    for p in group.params:
        v = p.tensor.value
        loss += lam * float((v * v).sum())
        grads.append(2.0 * lam * v)
    return loss, grads
