"""Versioned checkpoint files: a JSON header (config snapshot, morphology,
generator states, store layout) followed by the raw little-endian float64
parameter payloads. Loading reproduces every parameter array and generator
state bit-exactly; a version mismatch is rejected outright.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from ..morphology import MorphologyGraph, NodeType
from ..params import ParameterStore
from .config import ExperimentConfig, config_from_dict, config_hash, config_to_dict

MAGIC = b"SNOWCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: ExperimentConfig
    seed: int
    update_index: int
    env_timesteps: int
    graph: MorphologyGraph
    policy_store: ParameterStore
    value_store: ParameterStore
    rng_state: dict


def _graph_to_dict(graph: MorphologyGraph) -> dict:
    return {
        "nodes": [[nid, t.value] for nid, t in graph.nodes],
        "edges": [[u, v] for u, v in graph.edges],
        "joint_order": list(graph.joint_order),
    }


def _graph_from_dict(d: dict) -> MorphologyGraph:
    return MorphologyGraph(
        tuple((int(nid), NodeType(t)) for nid, t in d["nodes"]),
        tuple((int(u), int(v)) for u, v in d["edges"]),
        tuple(int(j) for j in d["joint_order"]),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    policy_blob = ckpt.policy_store.to_bytes()
    value_blob = ckpt.value_store.to_bytes()
    header = {
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(ckpt.config),
        "config_hash": config_hash(ckpt.config),
        "seed": ckpt.seed,
        "update_index": ckpt.update_index,
        "env_timesteps": ckpt.env_timesteps,
        "morphology": _graph_to_dict(ckpt.graph),
        "rng_state": ckpt.rng_state,
        "policy_bytes": len(policy_blob),
        "value_bytes": len(value_blob),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            fh.write(policy_blob)
            fh.write(value_blob)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from None


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    hlen = int.from_bytes(data[off : off + 8], "little")
    off += 8
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from None
    off += hlen
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version!r} not supported (expected {FORMAT_VERSION})"
        )
    policy_blob = data[off : off + header["policy_bytes"]]
    off += header["policy_bytes"]
    value_blob = data[off : off + header["value_bytes"]]
    return Checkpoint(
        config=config_from_dict(header["config"]),
        seed=int(header["seed"]),
        update_index=int(header["update_index"]),
        env_timesteps=int(header["env_timesteps"]),
        graph=_graph_from_dict(header["morphology"]),
        policy_store=ParameterStore.from_bytes(policy_blob),
        value_store=ParameterStore.from_bytes(value_blob),
        rng_state=header["rng_state"],
    )
