"""Declarative experiment configuration.

Config files are flat ``key=value`` text with dotted keys, one assignment
per line, ``#`` comments allowed. CLI ``--set key=value`` overrides win over
file values. The config hash covers every semantically meaningful field
(the output directory and display name are excluded), so two configs hash
equal exactly when they describe the same experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from ..chainsim import EnvConfig
from ..errors import ConfigError
from ..policy import GNN_GROUPS, GnnConfig, SNOWFLAKE_FROZEN
from ..ppo import PpoConfig

POLICY_KINDS = ("gnn", "gnn_snowflake", "mlp")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    policy_kind: str = "gnn"
    n_links: int = 6
    total_timesteps: int = 100_000
    seeds: tuple[int, ...] = (0,)
    freeze: frozenset | None = None  # None -> kind default
    lr_multipliers: dict = field(default_factory=dict)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    env_overrides: dict = field(default_factory=dict)
    rollout_streams: int = 4
    workers: int = 1
    checkpoint_every: int = 0  # updates between interval checkpoints; 0 = end only
    out_dir: str = "runs"

    def __post_init__(self):
        if self.policy_kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.policy_kind!r}; expected one of {POLICY_KINDS}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.total_timesteps < 0:
            raise ConfigError(f"total_timesteps must be >= 0, got {self.total_timesteps}")
        if self.rollout_streams < 1 or self.workers < 1:
            raise ConfigError("rollout_streams and workers must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.freeze is not None:
            unknown = set(self.freeze) - set(GNN_GROUPS)
            if unknown:
                raise ConfigError(f"freeze names unknown groups: {sorted(unknown)}")
            object.__setattr__(self, "freeze", frozenset(self.freeze))
        bad = set(self.lr_multipliers) - set(GNN_GROUPS) - {"log_std", "policy"}
        if bad:
            raise ConfigError(f"lr multipliers name unknown groups: {sorted(bad)}")

    def effective_freeze(self) -> frozenset:
        if self.freeze is not None:
            return self.freeze
        if self.policy_kind == "gnn_snowflake":
            return SNOWFLAKE_FROZEN
        return frozenset()

    def env_config(self, n_links: int | None = None) -> EnvConfig:
        return EnvConfig(n_links=self.n_links if n_links is None else n_links, **self.env_overrides)

    def gnn_config(self) -> GnnConfig:
        return replace(self.gnn, freeze=self.effective_freeze())

    def n_updates(self) -> int:
        return self.total_timesteps // self.ppo.batch_size

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seeds=(seed,))


_ENV_KEYS = {
    "n_links": int, "dt": float, "damping": float, "stiffness": float, "inertia": float,
    "propulsion_gain": float, "torque_limit": float, "horizon": int,
    "forward_weight": float, "survival_weight": float, "action_cost_weight": float,
}
_PPO_KEYS = {
    "epsilon": float, "batch_size": int, "minibatches": int, "epochs": int,
    "gamma": float, "gae_lambda": float, "base_lr": float, "value_lr": float,
    "l2_lambda": float, "entropy_coef": float, "advantage_norm": None, "per_epoch_kl": None,
}
_GNN_KEYS = {
    "layers": int, "hidden_width": int, "encoder_hidden": int,
    "message_hidden": int, "decoder_hidden": int,
}
_TOP_KEYS = {
    "name": str, "policy": str, "total_timesteps": int, "seeds": None, "freeze": None,
    "streams": int, "workers": int, "checkpoint_every": int, "out": str,
}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _coerce(key: str, raw: str, typ):
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply key=value assignments on top of a base config (defaults when
    omitted). Unknown keys are errors."""
    cfg = base if base is not None else ExperimentConfig()
    assignments = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        assignments.append((key, raw))
    return apply_assignments(cfg, assignments)


def apply_assignments(cfg: ExperimentConfig, assignments) -> ExperimentConfig:
    top: dict = {}
    ppo_kw: dict = {}
    gnn_kw: dict = {}
    env_kw = dict(cfg.env_overrides)
    lr_mult = dict(cfg.lr_multipliers)

    for key, raw in assignments:
        if key.startswith("ppo."):
            sub = key[4:]
            if sub not in _PPO_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            typ = _PPO_KEYS[sub]
            ppo_kw[sub] = _parse_bool(raw, key) if typ is None else _coerce(key, raw, typ)
        elif key.startswith("gnn."):
            sub = key[4:]
            if sub not in _GNN_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            gnn_kw[sub] = _coerce(key, raw, _GNN_KEYS[sub])
        elif key.startswith("env."):
            sub = key[4:]
            if sub not in _ENV_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            env_kw[sub] = _coerce(key, raw, _ENV_KEYS[sub])
            if sub == "n_links":
                top["n_links"] = env_kw.pop("n_links")
        elif key.startswith("lr."):
            group = key[3:]
            lr_mult[group] = _coerce(key, raw, float)
        elif key in _TOP_KEYS:
            if key == "seeds":
                try:
                    top["seeds"] = tuple(int(s) for s in raw.split(",") if s.strip() != "")
                except ValueError:
                    raise ConfigError(f"seeds: cannot parse {raw!r}") from None
            elif key == "freeze":
                names = [s.strip() for s in raw.split(",") if s.strip()]
                top["freeze"] = frozenset(names)
            elif key == "policy":
                top["policy_kind"] = raw
            elif key == "streams":
                top["rollout_streams"] = _coerce(key, raw, int)
            elif key == "out":
                top["out_dir"] = raw
            else:
                top[key] = _coerce(key, raw, _TOP_KEYS[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")

    ppo = replace(cfg.ppo, **ppo_kw) if ppo_kw else cfg.ppo
    gnn = replace(cfg.gnn, **gnn_kw) if gnn_kw else cfg.gnn
    return replace(cfg, ppo=ppo, gnn=gnn, env_overrides=env_kw, lr_multipliers=lr_mult, **top)


def load_config(path, overrides=()) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    cfg = parse_config_text(text)
    if overrides:
        parsed = []
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            parsed.append((key.strip(), raw.strip()))
        cfg = apply_assignments(cfg, parsed)
    return cfg


def canonical_items(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """Flat, sorted view of every hash-relevant field."""
    items = {
        "policy": cfg.policy_kind,
        "env.n_links": str(cfg.n_links),
        "total_timesteps": str(cfg.total_timesteps),
        "seeds": ",".join(str(s) for s in cfg.seeds),
        "freeze": ",".join(sorted(cfg.effective_freeze())),
        "streams": str(cfg.rollout_streams),
        "checkpoint_every": str(cfg.checkpoint_every),
    }
    for k, v in sorted(cfg.lr_multipliers.items()):
        items[f"lr.{k}"] = repr(float(v))
    p = cfg.ppo
    for k in sorted(_PPO_KEYS):
        items[f"ppo.{k}"] = repr(getattr(p, k))
    g = cfg.gnn
    for k in sorted(_GNN_KEYS):
        items[f"gnn.{k}"] = repr(getattr(g, k))
    env = cfg.env_config()
    for k in sorted(_ENV_KEYS):
        if k == "n_links":
            continue
        items[f"env.{k}"] = repr(getattr(env, k))
    return sorted(items.items())


def config_hash(cfg: ExperimentConfig) -> str:
    blob = "\n".join(f"{k}={v}" for k, v in canonical_items(cfg))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """JSON-friendly snapshot for checkpoints; includes non-hashed fields."""
    d = dict(canonical_items(cfg))
    d["name"] = cfg.name
    d["out"] = cfg.out_dir
    d["workers"] = str(cfg.workers)
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    assignments = [(k, v) for k, v in d.items() if k != "freeze"]
    freeze = d.get("freeze", "")
    cfg = apply_assignments(ExperimentConfig(), assignments)
    names = frozenset(s for s in freeze.split(",") if s)
    return replace(cfg, freeze=names)
