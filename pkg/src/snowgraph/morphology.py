"""Agent morphology graphs and the mapping between flat environment
observations/actions and per-node data.

A morphology is a connected directed graph with exactly one root node and
any number of joint nodes; every edge is present in both directions so that
information can propagate both ways along the body. ``joint_order`` fixes
how per-node outputs line up with the environment's action vector.

Node features are a fixed-width layout so one shared encoder serves every
node type: six payload slots (zero-padded) followed by a two-slot node-type
one-hot.

    joint:  (angle, angular_velocity, 0, 0, 0, 0, 0, 1)
    root :  (forward_velocity, mean_angle, mean_angular_velocity, 1, 0, 0, 1, 0)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import MorphologyError, ShapeError

FEATURE_WIDTH = 8
_PAYLOAD_WIDTH = 6
_ROOT_ONE_HOT = (1.0, 0.0)
_JOINT_ONE_HOT = (0.0, 1.0)


class NodeType(enum.Enum):
    ROOT = "root"
    JOINT = "joint"


@dataclass(frozen=True)
class MorphologyGraph:
    """Immutable node/edge structure; shareable across rollout workers."""

    nodes: tuple[tuple[int, NodeType], ...]
    edges: tuple[tuple[int, int], ...]
    joint_order: tuple[int, ...]

    def __post_init__(self):
        ids = [nid for nid, _ in self.nodes]
        if len(set(ids)) != len(ids):
            raise MorphologyError("duplicate node ids")
        roots = [nid for nid, t in self.nodes if t is NodeType.ROOT]
        if len(roots) != 1:
            raise MorphologyError(f"expected exactly one root node, found {len(roots)}")
        id_set = set(ids)
        edge_set = set(self.edges)
        if len(edge_set) != len(self.edges):
            raise MorphologyError("duplicate edges")
        for u, v in self.edges:
            if u not in id_set or v not in id_set:
                raise MorphologyError(f"edge ({u}, {v}) references unknown node")
            if u == v:
                raise MorphologyError(f"self-loop on node {u}")
            if (v, u) not in edge_set:
                raise MorphologyError(f"edge ({u}, {v}) has no reverse edge")
        joints = {nid for nid, t in self.nodes if t is NodeType.JOINT}
        if set(self.joint_order) != joints or len(self.joint_order) != len(joints):
            raise MorphologyError("joint_order must be a permutation of the joint node ids")
        if not self._connected():
            raise MorphologyError("graph is not connected")

    def _connected(self) -> bool:
        if len(self.nodes) <= 1:
            return True
        adj: dict[int, list[int]] = {nid: [] for nid, _ in self.nodes}
        for u, v in self.edges:
            adj[u].append(v)
        seen = {self.nodes[0][0]}
        frontier = [self.nodes[0][0]]
        while frontier:
            nxt = []
            for n in frontier:
                for m in adj[n]:
                    if m not in seen:
                        seen.add(m)
                        nxt.append(m)
            frontier = nxt
        return len(seen) == len(self.nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_joints(self) -> int:
        return len(self.joint_order)

    def node_row(self, node_id: int) -> int:
        return self._row_index()[node_id]

    def _row_index(self) -> dict[int, int]:
        cached = getattr(self, "_rows", None)
        if cached is None:
            cached = {nid: i for i, (nid, _) in enumerate(self.nodes)}
            object.__setattr__(self, "_rows", cached)
        return cached

    def joint_rows(self) -> np.ndarray:
        """Row indices of joint nodes, in action order."""
        cached = getattr(self, "_joint_rows", None)
        if cached is None:
            rows = self._row_index()
            cached = np.array([rows[j] for j in self.joint_order], dtype=np.intp)
            object.__setattr__(self, "_joint_rows", cached)
        return cached

    def adjacency(self) -> np.ndarray:
        """Dense receiver-by-sender aggregation matrix: A[v, u] = 1 iff
        there is a directed edge u -> v."""
        cached = getattr(self, "_adjacency", None)
        if cached is None:
            rows = self._row_index()
            cached = np.zeros((self.n_nodes, self.n_nodes))
            for u, v in self.edges:
                cached[rows[v], rows[u]] = 1.0
            object.__setattr__(self, "_adjacency", cached)
        return cached


@dataclass(frozen=True)
class EnvObservation:
    """Flat sensor readout: per-joint angles/velocities plus body forward
    velocity."""

    angles: np.ndarray
    velocities: np.ndarray
    forward_velocity: float

    def __post_init__(self):
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=np.float64))
        object.__setattr__(self, "velocities", np.asarray(self.velocities, dtype=np.float64))
        if self.angles.shape != self.velocities.shape or self.angles.ndim != 1:
            raise ShapeError(
                f"observation angles {self.angles.shape} and velocities {self.velocities.shape} must be equal-length vectors"
            )

    @property
    def n_joints(self) -> int:
        return self.angles.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.angles, self.velocities, [self.forward_velocity]])


def build_chain_graph(n_links: int) -> MorphologyGraph:
    """Chain morphology: root node followed by n_links - 1 joint nodes,
    consecutive nodes linked in both directions."""
    if n_links < 1:
        raise MorphologyError(f"n_links must be >= 1, got {n_links}")
    nodes = [(0, NodeType.ROOT)] + [(i, NodeType.JOINT) for i in range(1, n_links)]
    edges = []
    for i in range(n_links - 1):
        edges.append((i, i + 1))
        edges.append((i + 1, i))
    return MorphologyGraph(tuple(nodes), tuple(edges), tuple(range(1, n_links)))


def factor_observation(graph: MorphologyGraph, obs: EnvObservation) -> np.ndarray:
    """Split a flat observation into per-node input rows, aligned with
    graph.nodes. Joint i (in joint_order) receives (angle_i, velocity_i);
    the root receives the body aggregates and a constant bias slot."""
    if obs.n_joints != graph.n_joints:
        raise ShapeError(
            f"observation has {obs.n_joints} joints but morphology expects {graph.n_joints}"
        )
    feats = np.zeros((graph.n_nodes, FEATURE_WIDTH))
    rows = graph.joint_rows()
    feats[rows, 0] = obs.angles
    feats[rows, 1] = obs.velocities
    feats[rows, _PAYLOAD_WIDTH:] = _JOINT_ONE_HOT
    root_row = graph.node_row(next(nid for nid, t in graph.nodes if t is NodeType.ROOT))
    mean_angle = float(obs.angles.mean()) if obs.n_joints else 0.0
    mean_vel = float(obs.velocities.mean()) if obs.n_joints else 0.0
    feats[root_row, 0:4] = (obs.forward_velocity, mean_angle, mean_vel, 1.0)
    feats[root_row, _PAYLOAD_WIDTH:] = _ROOT_ONE_HOT
    return feats


def assemble_action(graph: MorphologyGraph, node_outputs: dict[int, float]) -> np.ndarray:
    """Order per-node scalars into the environment's action vector; output
    for the root (if any) is discarded."""
    try:
        return np.array([node_outputs[j] for j in graph.joint_order], dtype=np.float64)
    except KeyError as e:
        raise MorphologyError(f"missing output for joint node {e.args[0]}") from None
