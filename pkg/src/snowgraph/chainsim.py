"""Planar chain locomotion environment.

A chain of n links has n - 1 torque-actuated hinge joints. Each joint is a
damped, sprung rotational DOF integrated with semi-implicit Euler:

    torque_i = clip(action_i, -limit, +limit)
    vel'_i   = vel_i + dt * (torque_i - damping * vel_i - stiffness * angle_i) / inertia
    angle'_i = angle_i + dt * vel'_i

Forward motion comes from phase coupling between neighbouring joints:

    v_forward = gain * mean_i( vel'_{i+1} * sin(angle'_i) )    for i < n-2

With this pairing a wave whose phase lags down the body (angle_i =
A sin(w t - i psi), psi > 0) yields a positive time-averaged velocity of
roughly gain * A^2 w sin(psi) / 2, and a single joint oscillating on its
own produces no displacement -- locomotion requires coordination across
the body. Episodes end when a joint exceeds +-pi/2 or the horizon is
reached. Reward is a weighted sum of forward velocity, a survival bonus
(withheld on the joint-limit violation step) and a quadratic action cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EnvError
from .morphology import EnvObservation

ANGLE_LIMIT = math.pi / 2.0


@dataclass(frozen=True)
class EnvConfig:
    n_links: int
    dt: float = 0.05
    damping: float = 0.5
    stiffness: float = 0.2
    inertia: float = 1.0
    propulsion_gain: float = 1.0
    torque_limit: float = 1.0
    horizon: int = 1000
    forward_weight: float = 1.0
    survival_weight: float = 0.05
    action_cost_weight: float = 1e-4

    def __post_init__(self):
        if self.n_links < 1:
            raise ConfigError(f"n_links must be >= 1, got {self.n_links}")
        for name in ("dt", "damping", "stiffness", "inertia", "propulsion_gain", "torque_limit"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        for name in ("forward_weight", "survival_weight", "action_cost_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @property
    def n_joints(self) -> int:
        return self.n_links - 1


@dataclass(frozen=True)
class ChainState:
    angles: np.ndarray
    velocities: np.ndarray
    position: float
    t: int


@dataclass(frozen=True)
class StepResult:
    state: ChainState
    obs: EnvObservation
    reward: float
    done: bool
    reward_forward: float
    reward_survival: float
    reward_action_cost: float


class ChainEnv:
    def __init__(self, config: EnvConfig):
        self.config = config

    @property
    def n_joints(self) -> int:
        return self.config.n_joints

    def reset(self, rng: np.random.Generator | None = None, seed: int | None = None) -> tuple[ChainState, EnvObservation]:
        """Joint angles start uniform in (-0.1, 0.1), everything else at zero."""
        if rng is None:
            rng = np.random.default_rng(seed)
        angles = rng.uniform(-0.1, 0.1, self.n_joints)
        state = ChainState(angles, np.zeros(self.n_joints), 0.0, 0)
        return state, self._observe(state, 0.0)

    def step(self, state: ChainState, action: np.ndarray) -> StepResult:
        cfg = self.config
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.n_joints,):
            raise EnvError(f"action length {action.shape} != ({self.n_joints},) for n_links={cfg.n_links}")

        torque = np.clip(action, -cfg.torque_limit, cfg.torque_limit)
        vel = state.velocities + cfg.dt * (torque - cfg.damping * state.velocities - cfg.stiffness * state.angles) / cfg.inertia
        ang = state.angles + cfg.dt * vel

        if self.n_joints >= 2:
            v_forward = cfg.propulsion_gain * float(np.mean(vel[1:] * np.sin(ang[:-1])))
        else:
            v_forward = 0.0
        pos = state.position + cfg.dt * v_forward

        violated = bool(np.any(np.abs(ang) > ANGLE_LIMIT))
        t = state.t + 1
        done = violated or t >= cfg.horizon

        r_forward = cfg.forward_weight * v_forward
        r_survival = 0.0 if violated else cfg.survival_weight
        r_action = cfg.action_cost_weight * float(action @ action)
        reward = r_forward + r_survival - r_action

        new_state = ChainState(ang, vel, pos, t)
        return StepResult(new_state, self._observe(new_state, v_forward), reward, done,
                          r_forward, r_survival, -r_action)

    def _observe(self, state: ChainState, v_forward: float) -> EnvObservation:
        return EnvObservation(state.angles.copy(), state.velocities.copy(), v_forward)


@dataclass
class Trajectory:
    observations: list
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray | None

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


def rollout(env: ChainEnv, actor, max_steps: int, rng: np.random.Generator,
            deterministic: bool = False, value_fn=None) -> Trajectory:
    """Single-episode rollout: runs until termination or max_steps. Actions
    are sampled from the actor's distribution (or its mean when
    deterministic). Fully determined by (rng state, actor parameters)."""
    if actor.n_joints != env.n_joints:
        raise EnvError(
            f"actor drives {actor.n_joints} joints but environment has {env.n_joints}"
        )
    state, obs = env.reset(rng=rng)
    observations, actions, log_probs, rewards, dones, values = [], [], [], [], [], []
    for _ in range(max_steps):
        step_out = actor.act(obs, rng, deterministic=deterministic)
        if value_fn is not None:
            values.append(value_fn.predict(obs.flat()))
        res = env.step(state, step_out.action)
        observations.append(obs)
        actions.append(step_out.action)
        log_probs.append(step_out.log_prob)
        rewards.append(res.reward)
        dones.append(res.done)
        state, obs = res.state, res.obs
        if res.done:
            break
    return Trajectory(
        observations,
        np.array(actions) if actions else np.zeros((0, env.n_joints)),
        np.array(log_probs),
        np.array(rewards),
        np.array(dones, dtype=bool),
        np.array(values) if value_fn is not None else None,
    )
