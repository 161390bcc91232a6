"""Clipped-surrogate policy optimization with GAE and update diagnostics.

One update consumes a fixed-size on-policy batch, runs a fixed number of
epochs over shuffled minibatches, and reports two stability diagnostics
alongside the losses: the analytic mean KL from the pre-update policy to
the post-update policy over the whole batch, and the fraction of
state-action pairs whose surrogate term was actively clipped during the
final epoch.

Batches are collected from independent rollout streams, one per seed in an
ordered seed list. Each stream owns its environment and generator and
produces a fixed number of timesteps, so the merged batch is a function of
the seed list alone -- worker threads only decide who executes which
stream, never what the stream computes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EnvError, NumericalError, ShapeError, TrainerError
from . import tape
from .params import adam_step, l2_penalty
from .policy import ValueFunction, gaussian_kl
from .tape import Tensor, workspace

_LOG_2PI = math.log(2.0 * math.pi)

WORKER_ENV_VAR = "SNOWGRAPH_THREADS"


@dataclass(frozen=True)
class PpoConfig:
    epsilon: float = 0.1
    batch_size: int = 2048
    minibatches: int = 8
    epochs: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    base_lr: float = 3e-4
    value_lr: float = 3e-4
    l2_lambda: float = 0.0
    entropy_coef: float = 0.0
    advantage_norm: bool = True
    per_epoch_kl: bool = True

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ConfigError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.batch_size < 1 or self.minibatches < 1 or self.batch_size % self.minibatches != 0:
            raise ConfigError(
                f"batch_size {self.batch_size} must be a positive multiple of minibatches {self.minibatches}"
            )
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError("gamma and gae_lambda must lie in [0, 1]")
        if self.base_lr < 0 or self.value_lr < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.l2_lambda < 0:
            raise ConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")


@dataclass
class TrajectoryBatch:
    """On-policy data, stream segments concatenated in seed order.

    node_features is None for flat (MLP) policies. segment_starts marks
    where each stream's contiguous run of timesteps begins; each segment
    carries the value estimate used to bootstrap past its truncated end.
    """

    flat_obs: np.ndarray
    node_features: np.ndarray | None
    actions: np.ndarray
    old_log_probs: np.ndarray
    old_means: np.ndarray
    old_log_std: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    segment_starts: list[int]
    segment_bootstraps: list[float]
    episode_returns: list[float]

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True)
class UpdateStats:
    mean_kl: float
    clip_fraction: float
    policy_loss: float
    value_loss: float
    l2_loss: float
    per_epoch_kl: tuple[float, ...] | None = None
    final_ratios: np.ndarray | None = None
    final_advantages: np.ndarray | None = None


def compute_gae(rewards, values, dones, gamma: float, gae_lambda: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward GAE recursion over one contiguous segment.

    values must have length len(rewards) + 1; the trailing entry is the
    bootstrap for the state after the last step (ignored when that step
    terminated). Episode boundaries (done flags) reset the accumulator.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if len(dones) != n or len(values) != n + 1:
        raise ShapeError(
            f"compute_gae: rewards {n}, dones {len(dones)}, values {len(values)} (expected {n + 1})"
        )
    advantages = np.zeros(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        alive = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * values[t + 1] * alive - values[t]
        acc = delta + gamma * gae_lambda * alive * acc
        advantages[t] = acc
    return advantages, advantages + values[:n]


def surrogate_loss(new_log_prob: float, old_log_prob: float, advantage: float,
                   epsilon: float) -> tuple[float, bool]:
    """Single-sample clipped surrogate. Returns the (negated, to-minimise)
    loss contribution and whether the clipped branch is active and strictly
    binding."""
    try:
        ratio = math.exp(new_log_prob - old_log_prob)
    except OverflowError:
        ratio = math.inf
    if not math.isfinite(ratio):
        raise NumericalError(f"non-finite probability ratio from log-probs {new_log_prob} - {old_log_prob}")
    clipped_ratio = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    loss = -min(ratio * advantage, clipped_ratio * advantage)
    is_clipped = bool((advantage > 0 and ratio > 1.0 + epsilon) or (advantage < 0 and ratio < 1.0 - epsilon))
    return loss, is_clipped


def clipped_mask(ratios: np.ndarray, advantages: np.ndarray, epsilon: float) -> np.ndarray:
    """Vectorised clip predicate: the clipped branch is active and strictly
    smaller than the unclipped one."""
    return ((advantages > 0) & (ratios > 1.0 + epsilon)) | ((advantages < 0) & (ratios < 1.0 - epsilon))


def worker_cap() -> int | None:
    raw = os.environ.get(WORKER_ENV_VAR)
    if raw is None:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKER_ENV_VAR} must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"{WORKER_ENV_VAR} must be >= 1, got {cap}")
    return cap


def _run_stream(env_factory, actor, value_fn, n_steps: int, seed) -> dict:
    """One rollout stream: a private environment and generator, episodes
    back to back, exactly n_steps timesteps plus a bootstrap value."""
    env = env_factory()
    if actor.n_joints != env.n_joints:
        raise EnvError(f"actor drives {actor.n_joints} joints, env has {env.n_joints}")
    rng = np.random.default_rng(seed)
    flat_obs, node_feats, actions, logps, means = [], [], [], [], []
    rewards, values, dones = [], [], []
    episode_returns = []
    ep_return = 0.0

    state, obs = env.reset(rng=rng)
    for _ in range(n_steps):
        step_out = actor.act(obs, rng)
        flat_obs.append(obs.flat())
        if step_out.node_features is not None:
            node_feats.append(step_out.node_features)
        actions.append(step_out.action)
        logps.append(step_out.log_prob)
        means.append(step_out.mean)
        values.append(value_fn.predict(obs.flat()))
        res = env.step(state, step_out.action)
        rewards.append(res.reward)
        dones.append(res.done)
        ep_return += res.reward
        if res.done:
            episode_returns.append(ep_return)
            ep_return = 0.0
            state, obs = env.reset(rng=rng)
        else:
            state, obs = res.state, res.obs

    return {
        "flat_obs": np.array(flat_obs),
        "node_features": np.array(node_feats) if node_feats else None,
        "actions": np.array(actions),
        "log_probs": np.array(logps),
        "means": np.array(means),
        "rewards": np.array(rewards),
        "values": np.array(values),
        "dones": np.array(dones, dtype=bool),
        "bootstrap": value_fn.predict(obs.flat()),
        "episode_returns": episode_returns,
    }


def collect_batch(env_factory, actor, batch_size: int, n_workers: int, seeds,
                  value_fn: ValueFunction) -> TrajectoryBatch:
    """Collect exactly batch_size timesteps from len(seeds) independent
    streams, merged in seed order and truncated to size. The result depends
    only on the seed list and the parameters, not on n_workers."""
    seeds = list(seeds)
    if not seeds:
        raise TrainerError("collect_batch needs at least one stream seed")
    if n_workers < 1:
        raise TrainerError(f"n_workers must be >= 1, got {n_workers}")
    cap = worker_cap()
    if cap is not None:
        n_workers = min(n_workers, cap)
    per_stream = -(-batch_size // len(seeds))  # ceil

    if n_workers == 1 or len(seeds) == 1:
        streams = [_run_stream(env_factory, actor, value_fn, per_stream, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=min(n_workers, len(seeds))) as pool:
            futures = [pool.submit(_run_stream, env_factory, actor, value_fn, per_stream, s)
                       for s in seeds]
            streams = []
            for i, fut in enumerate(futures):
                try:
                    streams.append(fut.result())
                except Exception as e:
                    raise TrainerError(f"rollout stream {i} failed: {e}") from e

    # Merge in stream order, truncating the tail to land exactly on
    # batch_size; a mid-episode cut bootstraps from the value recorded for
    # the first dropped state.
    remaining = batch_size
    kept, starts, bootstraps, episode_returns = [], [], [], []
    offset = 0
    for s in streams:
        if remaining <= 0:
            break
        n = len(s["rewards"])
        take = min(n, remaining)
        kept.append((s, take))
        starts.append(offset)
        offset += take
        remaining -= take
        if take == n:
            bootstraps.append(s["bootstrap"])
            episode_returns.extend(s["episode_returns"])
        else:
            bootstraps.append(float(s["values"][take]))
            n_done = int(s["dones"][:take].sum())
            episode_returns.extend(s["episode_returns"][:n_done])
    if remaining > 0:
        raise TrainerError(
            f"streams produced {batch_size - remaining} timesteps, need {batch_size}"
        )

    def cat(key):
        return np.concatenate([s[key][:take] for s, take in kept])

    has_nodes = kept[0][0]["node_features"] is not None
    first = kept[0][0]
    return TrajectoryBatch(
        flat_obs=cat("flat_obs"),
        node_features=cat("node_features") if has_nodes else None,
        actions=cat("actions"),
        old_log_probs=cat("log_probs"),
        old_means=cat("means"),
        old_log_std=_actor_log_std(actor),
        rewards=cat("rewards"),
        values=cat("values"),
        dones=cat("dones"),
        segment_starts=starts,
        segment_bootstraps=bootstraps,
        episode_returns=episode_returns,
    )


def _actor_log_std(actor) -> np.ndarray:
    policy = actor.policy
    if policy.kind == "gnn":
        return policy.log_std_for(actor.n_joints)
    return policy.store["log_std"].tensors[0][: actor.n_joints].copy()


def _log_prob_t(means_t: Tensor, log_std_t: Tensor, actions: np.ndarray, n_joints: int) -> Tensor:
    """Taped diagonal-Gaussian log density of fixed actions, one scalar per row."""
    inv_std = tape.exp(tape.neg(log_std_t))
    z = tape.mul(tape.sub(means_t, actions), inv_std)
    quad = tape.tsum(tape.square(z), axis=1)
    # sum of log stds over action dims; per-type stds broadcast across joints
    log_std_sum = tape.tsum(log_std_t)
    if log_std_t.value.shape[0] != n_joints:
        log_std_sum = tape.mul(log_std_sum, float(n_joints) / log_std_t.value.shape[0])
    const = 0.5 * n_joints * _LOG_2PI
    return tape.sub(tape.neg(tape.mul(quad, 0.5)), tape.add(log_std_sum, const))


def _batch_dist(actor, batch: TrajectoryBatch) -> tuple[np.ndarray, np.ndarray]:
    if batch.node_features is not None:
        return actor.dist_batch(batch.node_features)
    return actor.dist_batch(batch.flat_obs)


def update(actor, value_fn: ValueFunction, batch: TrajectoryBatch, config: PpoConfig,
           shuffle_rng: np.random.Generator) -> UpdateStats:
    """One PPO update over a collected batch: GAE advantages (normalised),
    epochs x minibatches of clipped-surrogate + value-MSE steps honouring
    frozen groups and per-group learning rates, then diagnostics."""
    n = len(batch)
    if n != config.batch_size:
        raise TrainerError(f"batch has {n} timesteps, config expects {config.batch_size}")
    n_joints = batch.actions.shape[1]

    advantages = np.zeros(n)
    returns = np.zeros(n)
    bounds = batch.segment_starts + [n]
    for i, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        seg_values = np.append(batch.values[lo:hi], batch.segment_bootstraps[i])
        advantages[lo:hi], returns[lo:hi] = compute_gae(
            batch.rewards[lo:hi], seg_values, batch.dones[lo:hi], config.gamma, config.gae_lambda
        )
    if config.advantage_norm:
        # max-guard keeps the normalised std exactly 1 for non-degenerate
        # batches while leaving an all-zero advantage batch at zero
        advantages = (advantages - advantages.mean()) / max(float(advantages.std()), 1e-8)

    policy_store = actor.store
    old_values = policy_store.copy_values()
    mb_size = n // config.minibatches

    has_message = "message" in policy_store
    if config.l2_lambda > 0.0 and not has_message:
        raise ConfigError("l2_lambda regularises the message group, which this policy does not have")

    final_ratios = np.zeros(n)
    final_clipped = np.zeros(n, dtype=bool)
    final_adv = np.zeros(n)
    losses_last_epoch: list[tuple[float, float, float]] = []
    per_epoch_kl: list[float] = [] if config.per_epoch_kl else None

    # Buffer recycling is safe here because nothing produced inside a
    # minibatch pass survives past the next reset: diagnostics are copied
    # out and gradients are consumed by the optimizer within the pass.
    workspace.enabled = True
    try:
        for epoch in range(config.epochs):
            last = epoch == config.epochs - 1
            if last:
                losses_last_epoch = []
            perm = shuffle_rng.permutation(n)
            for k in range(config.minibatches):
                workspace.reset()
                idx = perm[k * mb_size : (k + 1) * mb_size]
                policy_store.zero_grad()
                value_fn.store.zero_grad()

                if batch.node_features is not None:
                    means_t, log_std_t = actor.dist_batch_t(batch.node_features[idx], batch.flat_obs[idx])
                else:
                    means_t, log_std_t = actor.dist_batch_t(None, batch.flat_obs[idx])
                new_logp = _log_prob_t(means_t, log_std_t, batch.actions[idx], n_joints)

                ratio = tape.exp(tape.sub(new_logp, batch.old_log_probs[idx]))
                if not np.isfinite(ratio.value).all():
                    bad = int(np.flatnonzero(~np.isfinite(ratio.value))[0])
                    raise NumericalError(
                        f"non-finite probability ratio at batch index {int(idx[bad])}"
                    )
                adv = advantages[idx]
                unclipped = tape.mul(ratio, adv)
                clipped = tape.mul(tape.clip(ratio, 1.0 - config.epsilon, 1.0 + config.epsilon), adv)
                policy_loss = tape.neg(tape.tmean(tape.minimum(unclipped, clipped)))

                v_pred = value_fn.predict_batch_t(batch.flat_obs[idx])
                value_loss = tape.tmean(tape.square(tape.sub(v_pred, returns[idx])))

                loss = tape.add(policy_loss, value_loss)
                if config.entropy_coef > 0.0:
                    # diag-Gaussian entropy: sum(log_std) + 0.5 * J * log(2*pi*e)
                    ent = tape.tsum(log_std_t)
                    if log_std_t.value.shape[0] != n_joints:
                        ent = tape.mul(ent, float(n_joints) / log_std_t.value.shape[0])
                    loss = tape.sub(loss, tape.mul(ent, config.entropy_coef))
                tape.backward(loss)

                grads = policy_store.collect_grads()
                l2_loss = 0.0
                if config.l2_lambda > 0.0:
                    l2_loss, l2_grads = l2_penalty(policy_store["message"], config.l2_lambda)
                    grads["message"] = [g + lg for g, lg in zip(grads["message"], l2_grads)]
                adam_step(policy_store, grads, config.base_lr)
                adam_step(value_fn.store, value_fn.store.collect_grads(), config.value_lr)

                if last:
                    final_ratios[idx] = ratio.value
                    final_adv[idx] = adv
                    final_clipped[idx] = clipped_mask(ratio.value, adv, config.epsilon)
                    losses_last_epoch.append((float(policy_loss.value), float(value_loss.value), l2_loss))
            if config.per_epoch_kl:
                per_epoch_kl.append(_mean_kl(actor, batch, old_values))
    finally:
        workspace.close()

    mean_kl = per_epoch_kl[-1] if config.per_epoch_kl else _mean_kl(actor, batch, old_values)
    pl, vl, l2l = (float(np.mean([x[i] for x in losses_last_epoch])) for i in range(3))
    return UpdateStats(
        mean_kl=mean_kl,
        clip_fraction=float(final_clipped.mean()),
        policy_loss=pl,
        value_loss=vl,
        l2_loss=l2l,
        per_epoch_kl=tuple(per_epoch_kl) if config.per_epoch_kl else None,
        final_ratios=final_ratios,
        final_advantages=final_adv,
    )


def _mean_kl(actor, batch: TrajectoryBatch, old_values) -> float:
    """Analytic mean KL(pre-update || current) over the batch. Both forward
    passes use the same batched code path, so an unchanged policy yields
    exactly zero."""
    mean_new, log_std_new = _batch_dist(actor, batch)
    with actor.store.temporarily(old_values):
        mean_old, log_std_old = _batch_dist(actor, batch)
    return float(gaussian_kl(mean_old, log_std_old, mean_new, log_std_new).mean())
