"""Per-run logs: one row per PPO update, stored raw (smoothing happens at
report time).

CSV layout is fixed:

    config_hash,seed,code_version,update,env_timesteps,mean_episode_reward,
    mean_kl,clip_fraction,policy_loss,value_loss,l2_loss

Floats are written with repr so parsing reproduces them bit-exactly. A run
aborted by an error keeps its rows and carries the failure as a trailing
``# error=`` comment line.
"""

from __future__ import annotations

import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..errors import ReportError

CSV_HEADER = (
    "config_hash,seed,code_version,update,env_timesteps,mean_episode_reward,"
    "mean_kl,clip_fraction,policy_loss,value_loss,l2_loss"
)

_FLOAT_FIELDS = ("mean_episode_reward", "mean_kl", "clip_fraction", "policy_loss", "value_loss", "l2_loss")


@dataclass(frozen=True)
class UpdateRow:
    update: int
    env_timesteps: int
    mean_episode_reward: float
    mean_kl: float
    clip_fraction: float
    policy_loss: float
    value_loss: float
    l2_loss: float


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    code_version: str
    rows: list[UpdateRow] = field(default_factory=list)
    error: str | None = None

    def append(self, row: UpdateRow) -> None:
        if self.rows and row.env_timesteps <= self.rows[-1].env_timesteps:
            raise ReportError(
                f"env timesteps must be strictly increasing, got {row.env_timesteps} after {self.rows[-1].env_timesteps}"
            )
        self.rows.append(row)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]


_code_version_cache: str | None = None


def code_version() -> str:
    """Package version, suffixed with the git revision when available."""
    global _code_version_cache
    if _code_version_cache is None:
        rev = ""
        try:
            out = subprocess.run(
                ["git", "rev-parse", "--short", "HEAD"],
                capture_output=True, text=True, timeout=5,
                cwd=Path(__file__).resolve().parent,
            )
            if out.returncode == 0:
                rev = "+" + out.stdout.strip()
        except (OSError, subprocess.SubprocessError):
            pass
        _code_version_cache = __version__ + rev
    return _code_version_cache


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_record(record: RunRecord, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n")
            # keeps metadata recoverable even for zero-update runs
            fh.write(f"# meta={record.config_hash},{record.seed},{record.code_version}\n")
            for r in record.rows:
                fh.write(
                    f"{record.config_hash},{record.seed},{record.code_version},"
                    f"{r.update},{r.env_timesteps},"
                    + ",".join(_fmt(getattr(r, f)) for f in _FLOAT_FIELDS)
                    + "\n"
                )
            if record.error is not None:
                fh.write(f"# error={record.error}\n")
    except OSError as e:
        raise ReportError(f"cannot write run record {path}: {e}") from None


def read_record(path) -> RunRecord:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ReportError(f"cannot read run record {path}: {e}") from None
    if not lines or lines[0] != CSV_HEADER:
        raise ReportError(f"{path}: not a run record (unexpected header)")
    record: RunRecord | None = None
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("# meta="):
            hash_, seed, version = line[len("# meta="):].split(",")
            record = RunRecord(hash_, int(seed), version)
            continue
        if line.startswith("# error="):
            if record is None:
                raise ReportError(f"{path}: error line before metadata")
            record.error = line[len("# error="):]
            continue
        parts = line.split(",")
        if len(parts) != 11:
            raise ReportError(f"{path}: malformed row {line!r}")
        if record is None:
            record = RunRecord(parts[0], int(parts[1]), parts[2])
        record.rows.append(
            UpdateRow(
                update=int(parts[3]),
                env_timesteps=int(parts[4]),
                mean_episode_reward=float(parts[5]),
                mean_kl=float(parts[6]),
                clip_fraction=float(parts[7]),
                policy_loss=float(parts[8]),
                value_loss=float(parts[9]),
                l2_loss=float(parts[10]),
            )
        )
    if record is None:
        raise ReportError(f"{path}: record holds no metadata")
    return record
