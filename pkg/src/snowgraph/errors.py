"""Exception hierarchy. Every error carries a short machine-parsable category
used by the CLI for its one-line failure output."""


class SnowgraphError(Exception):
    category = "internal"


class MorphologyError(SnowgraphError):
    """Invalid graph structure, or data incompatible with a morphology."""

    category = "morphology"


class ShapeError(SnowgraphError):
    """Array width/length mismatch between producer and consumer."""

    category = "shape"


class ConfigError(SnowgraphError):
    category = "config"


class EnvError(SnowgraphError):
    category = "env"


class TrainerError(SnowgraphError):
    category = "trainer"


class NumericalError(SnowgraphError):
    """Non-finite value surfaced instead of silently propagating."""

    category = "numerical"


class CheckpointError(SnowgraphError):
    category = "checkpoint"


class ReportError(SnowgraphError):
    category = "io"
