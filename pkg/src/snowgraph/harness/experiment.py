"""Seeded training runs, zero-shot transfer evaluation and sweep grids.

Every random draw in a run derives from (run seed, purpose key, update
index), so a run is a pure function of its config and seed: same inputs,
bit-identical RunRecords and checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..chainsim import ChainEnv, rollout
from ..errors import ConfigError, MorphologyError, SnowgraphError
from ..morphology import build_chain_graph
from ..policy import (
    GNN_GROUPS,
    GnnActor,
    GnnPolicy,
    MlpActor,
    MlpPolicy,
    ValueFunction,
)
from ..ppo import collect_batch, update
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash
from .records import RunRecord, UpdateRow, code_version, write_record
from .report import aggregate_series, final_window_mean

# purpose keys for deriving independent generator streams from one run seed
_INIT_KEY = 0x5EED0001
_SHUFFLE_KEY = 0x5EED0002
_ROLLOUT_KEY = 0x5EED0003
_EVAL_KEY = 0x5EED0004

SWEEP_AXES = ("epsilon", "l2_lambda", "batch_size", "component_lr", "single_part_ablation")


def stream_seeds(run_seed: int, update_index: int, n_streams: int) -> list[int]:
    ss = np.random.SeedSequence([run_seed, _ROLLOUT_KEY, update_index])
    return [int(s) for s in ss.generate_state(n_streams, dtype=np.uint64)]


def _rng(run_seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([run_seed, key]))


def build_actor(config: ExperimentConfig, seed: int):
    """Policy + value function for one seeded run. Build order (policy first,
    then critic) is part of the determinism contract."""
    graph = build_chain_graph(config.n_links)
    obs_dim = 2 * graph.n_joints + 1
    init_rng = _rng(seed, _INIT_KEY)
    if config.policy_kind in ("gnn", "gnn_snowflake"):
        policy = GnnPolicy(config.gnn_config(), init_rng)
        actor = GnnActor(policy, graph)
    else:
        policy = MlpPolicy(obs_dim, graph.n_joints, init_rng)
        actor = MlpActor(policy, graph)
    for name, mult in config.lr_multipliers.items():
        if name not in policy.store:
            raise ConfigError(f"lr multiplier for {name!r}, but {config.policy_kind} policy has no such group")
        policy.store[name].lr_multiplier = float(mult)
    value_fn = ValueFunction(obs_dim, init_rng)
    return actor, value_fn, graph


def _ckpt(config, seed, update_index, timesteps, graph, actor, value_fn, shuffle_rng) -> Checkpoint:
    return Checkpoint(
        config=config,
        seed=seed,
        update_index=update_index,
        env_timesteps=timesteps,
        graph=graph,
        policy_store=actor.store,
        value_store=value_fn.store,
        rng_state={"shuffle": shuffle_rng.bit_generator.state},
    )


def train_single(config: ExperimentConfig, seed: int, verbose: bool = False) -> tuple[RunRecord, Path]:
    """One seeded run: collect/update until the timestep budget is spent,
    logging one row per update. A module error aborts the run but keeps the
    rows logged so far and is recorded on the RunRecord."""
    out_dir = Path(config.out_dir)
    record = RunRecord(config_hash(config), seed, code_version())
    actor, value_fn, graph = build_actor(config, seed)
    env_cfg = config.env_config()
    shuffle_rng = _rng(seed, _SHUFFLE_KEY)
    timesteps = 0
    final_path = out_dir / f"{config.name}.seed{seed}.ckpt"

    try:
        for u in range(config.n_updates()):
            seeds_u = stream_seeds(seed, u, config.rollout_streams)
            batch = collect_batch(
                lambda: ChainEnv(env_cfg), actor, config.ppo.batch_size,
                config.workers, seeds_u, value_fn,
            )
            stats = update(actor, value_fn, batch, config.ppo, shuffle_rng)
            timesteps += len(batch)
            reward = float(np.mean(batch.episode_returns)) if batch.episode_returns else float("nan")
            record.append(UpdateRow(
                update=u,
                env_timesteps=timesteps,
                mean_episode_reward=reward,
                mean_kl=stats.mean_kl,
                clip_fraction=stats.clip_fraction,
                policy_loss=stats.policy_loss,
                value_loss=stats.value_loss,
                l2_loss=stats.l2_loss,
            ))
            if verbose:
                print(f"[seed {seed}] update {u:4d}  t={timesteps:8d}  reward={reward:9.3f}  "
                      f"kl={stats.mean_kl:.5f}  clip={stats.clip_fraction:.3f}", flush=True)
            if config.checkpoint_every and (u + 1) % config.checkpoint_every == 0:
                save_checkpoint(
                    _ckpt(config, seed, u + 1, timesteps, graph, actor, value_fn, shuffle_rng),
                    out_dir / f"{config.name}.seed{seed}.u{u + 1}.ckpt",
                )
    except SnowgraphError as e:
        record.error = f"{e.category}:{e}"

    save_checkpoint(
        _ckpt(config, seed, len(record.rows), timesteps, graph, actor, value_fn, shuffle_rng),
        final_path,
    )
    write_record(record, out_dir / f"{config.name}.seed{seed}.csv")
    return record, final_path


def run_experiment(config: ExperimentConfig, verbose: bool = False) -> list[RunRecord]:
    """All seeds of one experiment; failures are isolated per seed. Writes
    per-seed records/checkpoints plus a seed-aggregated reward CSV."""
    records = []
    for seed in config.seeds:
        record, _ = train_single(config, seed, verbose=verbose)
        records.append(record)
        if record.error is not None and verbose:
            print(f"[seed {seed}] aborted: {record.error}", flush=True)
    ok = [r for r in records if r.rows]
    if ok:
        series = aggregate_series(ok)
        path = Path(config.out_dir) / f"{config.name}.aggregate.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("update,env_timesteps,reward_mean,reward_stderr,reward_smoothed\n")
            for i in range(len(series["updates"])):
                fh.write(
                    f"{series['updates'][i]},{series['timesteps'][i]},{series['reward_mean'][i]!r},"
                    f"{series['reward_stderr'][i]!r},{series['reward_smoothed'][i]!r}\n"
                )
    return records


@dataclass(frozen=True)
class TransferRow:
    n_links: int
    mean_reward: float
    stderr: float
    episodes: int


def _actor_from_checkpoint(ckpt: Checkpoint, n_links: int):
    config = ckpt.config
    graph = build_chain_graph(n_links)
    if config.policy_kind == "mlp":
        if n_links != config.n_links:
            raise MorphologyError(
                f"mlp checkpoint trained on n_links={config.n_links} is incompatible with n_links={n_links}: "
                f"dense input width is fixed by the training morphology"
            )
        policy = MlpPolicy(2 * graph.n_joints + 1, graph.n_joints, np.random.default_rng(0))
        policy.store = ckpt.policy_store
        return MlpActor(policy, graph)
    policy = GnnPolicy(config.gnn_config(), np.random.default_rng(0))
    policy.store = ckpt.policy_store
    return GnnActor(policy, graph)


def transfer_eval(checkpoint, sizes, episodes_per_size: int, seed: int,
                  deterministic: bool = True) -> list[TransferRow]:
    """Evaluate a trained policy zero-shot across morphology sizes. Actions
    are the distribution mean unless deterministic=False. Size-independent
    (graph) policies run on any size; the dense baseline only on its
    training size."""
    if episodes_per_size < 1:
        raise ConfigError(f"episodes_per_size must be >= 1, got {episodes_per_size}")
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    rows = []
    for size in sizes:
        actor = _actor_from_checkpoint(ckpt, size)
        env = ChainEnv(ckpt.config.env_config(n_links=size))
        returns = []
        for ep in range(episodes_per_size):
            rng = np.random.default_rng(np.random.SeedSequence([seed, _EVAL_KEY, size, ep]))
            traj = rollout(env, actor, env.config.horizon, rng, deterministic=deterministic)
            returns.append(traj.total_reward)
        returns = np.array(returns)
        stderr = float(returns.std(ddof=1) / math.sqrt(len(returns))) if len(returns) > 1 else 0.0
        rows.append(TransferRow(size, float(returns.mean()), stderr, episodes_per_size))
    return rows


def expand_sweep_point(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    tag = str(value).replace(":", "_").replace(";", "+").replace(",", "+")
    name = f"{base.name}.{axis}={tag}"
    out = str(Path(base.out_dir) / f"{axis}={tag}")
    if axis == "epsilon":
        return replace(base, name=name, out_dir=out, ppo=replace(base.ppo, epsilon=float(value)))
    if axis == "l2_lambda":
        return replace(base, name=name, out_dir=out, ppo=replace(base.ppo, l2_lambda=float(value)))
    if axis == "batch_size":
        return replace(base, name=name, out_dir=out, ppo=replace(base.ppo, batch_size=int(value)))
    if axis == "component_lr":
        mults = dict(base.lr_multipliers)
        mults.update(_parse_component_lr(value))
        return replace(base, name=name, out_dir=out, lr_multipliers=mults)
    # single_part_ablation: train exactly one group, freeze the other three
    part = str(value)
    if part not in GNN_GROUPS:
        raise ConfigError(f"single_part_ablation value must be one of {GNN_GROUPS}, got {part!r}")
    if base.policy_kind == "mlp":
        raise ConfigError("single_part_ablation applies to graph policies only")
    frozen = frozenset(g for g in GNN_GROUPS if g != part)
    return replace(base, name=name, out_dir=out, freeze=frozen)


def _parse_component_lr(value) -> dict[str, float]:
    if isinstance(value, dict):
        return {k: float(v) for k, v in value.items()}
    out = {}
    for part in str(value).split(";"):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"component_lr point must be group:multiplier[;...], got {value!r}")
        group, mult = part.split(":", 1)
        try:
            out[group.strip()] = float(mult)
        except ValueError:
            raise ConfigError(f"component_lr multiplier {mult!r} is not a number") from None
    if not out:
        raise ConfigError(f"component_lr point {value!r} names no groups")
    return out


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: str
    reward_final: float
    reward_stderr: float
    kl_final: float
    kl_stderr: float
    error: str | None = None


def run_sweep(base_config: ExperimentConfig, axis: str, values, verbose: bool = False
              ) -> tuple[list[SweepPoint], dict[str, list[RunRecord]]]:
    """run_experiment per grid point; the summary carries final-window
    (last 10% of updates) reward and policy KL per point. Point failures are
    isolated into their summary row."""
    points = []
    all_records: dict[str, list[RunRecord]] = {}
    for value in values:
        try:
            cfg = expand_sweep_point(base_config, axis, value)
            records = run_experiment(cfg, verbose=verbose)
            all_records[str(value)] = records
            errors = [r.error for r in records if r.error]
            reward_finals = [final_window_mean(r.column("mean_episode_reward")) for r in records if r.rows]
            kl_finals = [final_window_mean(r.column("mean_kl")) for r in records if r.rows]
            points.append(SweepPoint(
                axis=axis,
                value=str(value),
                reward_final=float(np.mean(reward_finals)) if reward_finals else float("nan"),
                reward_stderr=_scalar_stderr(reward_finals),
                kl_final=float(np.mean(kl_finals)) if kl_finals else float("nan"),
                kl_stderr=_scalar_stderr(kl_finals),
                error="; ".join(errors) if errors else None,
            ))
        except SnowgraphError as e:
            points.append(SweepPoint(axis, str(value), float("nan"), 0.0, float("nan"), 0.0,
                                     error=f"{e.category}:{e}"))
    _write_sweep_summary(points, Path(base_config.out_dir) / f"{base_config.name}.sweep_{axis}.csv")
    return points, all_records


def _scalar_stderr(xs) -> float:
    if len(xs) <= 1:
        return 0.0
    return float(np.std(xs, ddof=1) / math.sqrt(len(xs)))


def _write_sweep_summary(points: list[SweepPoint], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("axis,value,reward_final,reward_stderr,kl_final,kl_stderr,error\n")
        for p in points:
            err = p.error.replace(",", ";") if p.error else ""
            fh.write(f"{p.axis},{p.value},{p.reward_final!r},{p.reward_stderr!r},"
                     f"{p.kl_final!r},{p.kl_stderr!r},{err}\n")
