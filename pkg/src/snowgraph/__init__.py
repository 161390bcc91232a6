"""Graph-network locomotion policies trained with PPO on a native chain environment.

The package is organised bottom-up:

    tape        reverse-mode autodiff over float64 numpy arrays
    params      parameter groups, freezing, Adam, orthogonal init
    layers      dense MLP and GRU cells (plain + taped variants)
    morphology  agent graphs; observation factoring / action assembly
    policy      message-passing GNN policy, MLP baseline, Gaussian heads
    chainsim    planar chain locomotion environment
    ppo         clipped-surrogate trainer with GAE and update diagnostics
    harness     experiment configs, seeded runs, checkpoints, sweeps, reports
"""

__version__ = "0.1.0"

from .errors import (
    SnowgraphError,
    MorphologyError,
    ShapeError,
    ConfigError,
    EnvError,
    TrainerError,
    NumericalError,
    CheckpointError,
)

__all__ = [
    "__version__",
    "SnowgraphError",
    "MorphologyError",
    "ShapeError",
    "ConfigError",
    "EnvError",
    "TrainerError",
    "NumericalError",
    "CheckpointError",
]
