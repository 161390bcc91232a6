"""Message-passing policy over a morphology graph, plus a dense MLP baseline.

The graph network computes, for every node v with input row x_v:

    h_v^0   = encoder(x_v)
    m_v^t+1 = sum over senders u of v of message(h_u^t)
    h_v^t+1 = gru(h_v^t, m_v^t+1)          (shared message/gru across layers)
    out_v   = decoder(h_v^T)               (scalar per node)

Joint-node outputs, read in joint_order, are the mean of a diagonal Gaussian
over torques; the log standard deviation is a single learned scalar per
joint-type class (one class for chains) broadcast over joints, which is what
lets a trained policy drop onto a different-size morphology unchanged.

Parameter count is independent of graph size: the same four parameter
groups (encoder, message, update, decoder) are reused at every node and
every propagation layer. Freezing any subset of those groups pins them to
their orthogonal initialisation for the whole run while gradients keep
flowing through them.

Forward passes exist in a plain-numpy form (sampling path, one observation)
and a taped form (optimization path, whole minibatch, node-major layout);
both follow the same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tape
from .errors import ConfigError, MorphologyError, ShapeError
from .layers import gru_cell, gru_cell_t, mlp_apply, mlp_apply_t, mlp_group, gru_group, vector_group
from .morphology import FEATURE_WIDTH, EnvObservation, MorphologyGraph, factor_observation
from .params import ParameterStore
from .tape import Tensor

GNN_GROUPS = ("encoder", "message", "update", "decoder")
SNOWFLAKE_FROZEN = frozenset({"encoder", "message", "decoder"})

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GnnConfig:
    layers: int = 4
    hidden_width: int = 64
    encoder_hidden: int = 64
    message_hidden: int = 64
    decoder_hidden: int = 64
    freeze: frozenset = frozenset()

    def __post_init__(self):
        if self.layers < 0:
            raise ConfigError(f"propagation layer count must be >= 0, got {self.layers}")
        if min(self.hidden_width, self.encoder_hidden, self.message_hidden, self.decoder_hidden) < 1:
            raise ConfigError("all widths must be >= 1")
        unknown = set(self.freeze) - set(GNN_GROUPS)
        if unknown:
            raise ConfigError(f"freeze spec names unknown groups: {sorted(unknown)}")
        object.__setattr__(self, "freeze", frozenset(self.freeze))


@dataclass(frozen=True)
class ActionDistribution:
    """Diagonal Gaussian over the action vector."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "log_std", np.asarray(self.log_std, dtype=np.float64))
        if self.mean.shape != self.log_std.shape or self.mean.ndim != 1:
            raise ShapeError(
                f"distribution mean {self.mean.shape} and log_std {self.log_std.shape} must be equal-length vectors"
            )
        if not (np.isfinite(self.mean).all() and np.isfinite(self.log_std).all()):
            raise ShapeError("distribution parameters must be finite")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def log_prob(dist: ActionDistribution, action: np.ndarray) -> float:
    action = np.asarray(action, dtype=np.float64)
    if action.shape != dist.mean.shape:
        raise ShapeError(f"action shape {action.shape} != distribution shape {dist.mean.shape}")
    inv_std = np.exp(-dist.log_std)
    z = (action - dist.mean) * inv_std
    return float(-0.5 * (z * z).sum() - dist.log_std.sum() - 0.5 * dist.dim * _LOG_2PI)


def sample(dist: ActionDistribution, rng: np.random.Generator) -> np.ndarray:
    return dist.mean + np.exp(dist.log_std) * rng.standard_normal(dist.dim)


def kl_divergence(old: ActionDistribution, new: ActionDistribution) -> float:
    """KL(old || new) for diagonal Gaussians."""
    if old.dim != new.dim:
        raise ShapeError(f"distribution dims differ: {old.dim} vs {new.dim}")
    var_old = np.exp(2.0 * old.log_std)
    var_new = np.exp(2.0 * new.log_std)
    return float(
        (
            new.log_std
            - old.log_std
            + (var_old + (old.mean - new.mean) ** 2) / (2.0 * var_new)
            - 0.5
        ).sum()
    )


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new) -> np.ndarray:
    """Batched KL(old || new): means are (B, J); log stds broadcast."""
    var_old = np.exp(2.0 * log_std_old)
    var_new = np.exp(2.0 * log_std_new)
    per_dim = log_std_new - log_std_old + (var_old + (mean_old - mean_new) ** 2) / (2.0 * var_new) - 0.5
    return per_dim.sum(axis=-1)


class GnnPolicy:
    """Size-independent graph-network policy. A policy is built once and can
    then be evaluated on any morphology via an actor binding."""

    kind = "gnn"

    def __init__(self, config: GnnConfig, rng: np.random.Generator):
        self.config = config
        h = config.hidden_width
        store = ParameterStore()
        store.add_group(mlp_group("encoder", [FEATURE_WIDTH, config.encoder_hidden, h], rng,
                                  frozen="encoder" in config.freeze))
        store.add_group(mlp_group("message", [h, config.message_hidden, h], rng,
                                  frozen="message" in config.freeze))
        store.add_group(gru_group("update", h, h, rng, frozen="update" in config.freeze))
        store.add_group(mlp_group("decoder", [h, config.decoder_hidden, 1], rng,
                                  frozen="decoder" in config.freeze))
        store.add_group(vector_group("log_std", 1))
        self.store = store

    def log_std_for(self, n_joints: int) -> np.ndarray:
        # one joint-type class for chain agents; broadcast over joints
        return np.broadcast_to(self.store["log_std"].tensors[0], (n_joints,)).copy() if n_joints else np.zeros(0)


def gnn_forward(policy: GnnPolicy, graph: MorphologyGraph, features: np.ndarray) -> np.ndarray:
    """Per-node scalar outputs for one observation; features is the
    (n_nodes, FEATURE_WIDTH) row layout from factor_observation."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (graph.n_nodes, FEATURE_WIDTH):
        raise ShapeError(
            f"features shape {features.shape} != ({graph.n_nodes}, {FEATURE_WIDTH})"
        )
    store = policy.store
    adj = graph.adjacency()
    h = mlp_apply(store["encoder"], features)
    for _ in range(policy.config.layers):
        msg = mlp_apply(store["message"], h)
        h = gru_cell(store["update"], h, adj @ msg)
    return mlp_apply(store["decoder"], h)[:, 0]


def gnn_forward_batch(policy: GnnPolicy, graph: MorphologyGraph, features_nm: np.ndarray) -> np.ndarray:
    """Batched plain-numpy forward. features_nm is node-major
    (n_nodes, batch, FEATURE_WIDTH); returns joint means (batch, n_joints)."""
    n, b, _ = features_nm.shape
    store = policy.store
    adj = graph.adjacency()
    hw = policy.config.hidden_width
    h = mlp_apply(store["encoder"], features_nm.reshape(n * b, FEATURE_WIDTH))
    for _ in range(policy.config.layers):
        msg = mlp_apply(store["message"], h)
        agg = (adj @ msg.reshape(n, b * hw)).reshape(n * b, hw)
        h = gru_cell(store["update"], h, agg)
    out = mlp_apply(store["decoder"], h).reshape(n, b)
    return out[graph.joint_rows()].T


def gnn_forward_batch_t(policy: GnnPolicy, graph: MorphologyGraph, features_nm: np.ndarray) -> Tensor:
    """Taped twin of gnn_forward_batch."""
    n, b, _ = features_nm.shape
    store = policy.store
    adj = graph.adjacency()
    hw = policy.config.hidden_width
    h = mlp_apply_t(store["encoder"], features_nm.reshape(n * b, FEATURE_WIDTH))
    for _ in range(policy.config.layers):
        msg = mlp_apply_t(store["message"], h)
        agg = tape.reshape(tape.matmul(adj, tape.reshape(msg, (n, b * hw))), (n * b, hw))
        h = gru_cell_t(store["update"], h, agg)
    out = tape.reshape(mlp_apply_t(store["decoder"], h), (n, b))
    return tape.transpose(tape.take_rows(out, graph.joint_rows()))


def distribution(policy: GnnPolicy, graph: MorphologyGraph, features: np.ndarray) -> ActionDistribution:
    outs = gnn_forward(policy, graph, features)
    mean = outs[graph.joint_rows()]
    return ActionDistribution(mean, policy.log_std_for(graph.n_joints))


class MlpPolicy:
    """Dense baseline: flat observation through two tanh hidden layers to a
    per-joint mean, with a per-dimension log std. Parameter count grows with
    the observation width, so it cannot transfer across sizes."""

    kind = "mlp"

    def __init__(self, obs_dim: int, n_joints: int, rng: np.random.Generator, hidden: int = 64):
        if obs_dim < 1:
            raise ConfigError(f"obs_dim must be >= 1, got {obs_dim}")
        self.obs_dim = obs_dim
        self.n_joints = n_joints
        store = ParameterStore()
        store.add_group(mlp_group("policy", [obs_dim, hidden, hidden, max(n_joints, 1)], rng))
        store.add_group(vector_group("log_std", max(n_joints, 1)))
        self.store = store


def mlp_policy_forward(policy: MlpPolicy, flat_obs: np.ndarray) -> ActionDistribution:
    flat_obs = np.asarray(flat_obs, dtype=np.float64)
    if flat_obs.shape != (policy.obs_dim,):
        raise ShapeError(f"flat observation shape {flat_obs.shape} != ({policy.obs_dim},)")
    mean = mlp_apply(policy.store["policy"], flat_obs)[: policy.n_joints]
    log_std = policy.store["log_std"].tensors[0][: policy.n_joints]
    return ActionDistribution(mean, log_std)


class ValueFunction:
    """Per-size state-value MLP on the flat observation."""

    def __init__(self, obs_dim: int, rng: np.random.Generator, hidden: int = 64):
        self.obs_dim = obs_dim
        store = ParameterStore()
        store.add_group(mlp_group("value", [obs_dim, hidden, hidden, 1], rng))
        self.store = store

    def predict(self, flat_obs: np.ndarray) -> float:
        return float(mlp_apply(self.store["value"], flat_obs)[0])

    def predict_batch(self, flat_obs: np.ndarray) -> np.ndarray:
        return mlp_apply(self.store["value"], flat_obs)[:, 0]

    def predict_batch_t(self, flat_obs: np.ndarray) -> Tensor:
        return tape.reshape(mlp_apply_t(self.store["value"], flat_obs), (flat_obs.shape[0],))


@dataclass(frozen=True)
class ActStep:
    action: np.ndarray
    log_prob: float
    mean: np.ndarray
    node_features: np.ndarray | None


class GnnActor:
    """Binds a size-independent policy to one morphology for rollouts and
    training. A policy trained through one actor can be re-bound to a
    different-size graph for zero-shot evaluation."""

    def __init__(self, policy: GnnPolicy, graph: MorphologyGraph):
        self.policy = policy
        self.graph = graph

    @property
    def store(self) -> ParameterStore:
        return self.policy.store

    @property
    def n_joints(self) -> int:
        return self.graph.n_joints

    def act(self, obs: EnvObservation, rng: np.random.Generator | None = None,
            deterministic: bool = False) -> ActStep:
        feats = factor_observation(self.graph, obs)
        dist = distribution(self.policy, self.graph, feats)
        if deterministic or rng is None:
            action = dist.mean.copy()
        else:
            action = sample(dist, rng)
        return ActStep(action, log_prob(dist, action), dist.mean, feats)

    def dist_batch(self, node_features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(means (B, J), log_std (J,)) for a (B, n_nodes, W) feature stack."""
        nm = np.ascontiguousarray(node_features.transpose(1, 0, 2))
        means = gnn_forward_batch(self.policy, self.graph, nm)
        return means, self.policy.log_std_for(self.n_joints)

    def dist_batch_t(self, node_features: np.ndarray, flat_obs: np.ndarray) -> tuple[Tensor, Tensor]:
        nm = np.ascontiguousarray(node_features.transpose(1, 0, 2))
        means = gnn_forward_batch_t(self.policy, self.graph, nm)
        return means, self.store["log_std"].leaves[0]


class MlpActor:
    """Same interface as GnnActor for the dense baseline. Rejects
    observations whose width differs from the training morphology -- a
    dense policy has no way to consume them."""

    def __init__(self, policy: MlpPolicy, graph: MorphologyGraph):
        expected = 2 * graph.n_joints + 1
        if expected != policy.obs_dim or graph.n_joints != policy.n_joints:
            raise MorphologyError(
                f"mlp policy trained for obs width {policy.obs_dim} / {policy.n_joints} joints "
                f"cannot drive a morphology with obs width {expected} / {graph.n_joints} joints"
            )
        self.policy = policy
        self.graph = graph

    @property
    def store(self) -> ParameterStore:
        return self.policy.store

    @property
    def n_joints(self) -> int:
        return self.policy.n_joints

    def act(self, obs: EnvObservation, rng: np.random.Generator | None = None,
            deterministic: bool = False) -> ActStep:
        if obs.n_joints != self.n_joints:
            raise MorphologyError(
                f"mlp policy expects {self.n_joints} joints, observation has {obs.n_joints}"
            )
        dist = mlp_policy_forward(self.policy, obs.flat())
        if deterministic or rng is None:
            action = dist.mean.copy()
        else:
            action = sample(dist, rng)
        return ActStep(action, log_prob(dist, action), dist.mean, None)

    def dist_batch(self, flat_obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        means = mlp_apply(self.policy.store["policy"], flat_obs)[:, : self.n_joints]
        return means, self.policy.store["log_std"].tensors[0][: self.n_joints]

    def dist_batch_t(self, node_features, flat_obs: np.ndarray) -> tuple[Tensor, Tensor]:
        means = mlp_apply_t(self.policy.store["policy"], flat_obs)
        return means, self.policy.store["log_std"].leaves[0]
