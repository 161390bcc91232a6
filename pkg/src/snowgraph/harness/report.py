"""Report-time aggregation: sliding-window smoothing over raw per-update
rows, seed aggregation with standard errors, CSV and SVG output."""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..errors import ReportError
from .records import RunRecord

SMOOTHING_WINDOW = 30


def sliding_window_mean(xs, window: int = SMOOTHING_WINDOW) -> list[float]:
    """Trailing mean over up to `window` points, clipped at the start;
    NaN entries (updates with no completed episode) are skipped."""
    out = []
    for i in range(len(xs)):
        chunk = [x for x in xs[max(0, i - window + 1) : i + 1] if not math.isnan(x)]
        out.append(float(np.mean(chunk)) if chunk else float("nan"))
    return out


def final_window_mean(xs, fraction: float = 0.1) -> float:
    """Mean over the last `fraction` of entries (at least one)."""
    xs = [x for x in xs if not math.isnan(x)]
    if not xs:
        return float("nan")
    k = max(1, math.ceil(len(xs) * fraction))
    return float(np.mean(xs[-k:]))


def _stderr(values: np.ndarray) -> np.ndarray:
    if values.shape[0] <= 1:
        return np.zeros(values.shape[1])
    return values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])


def group_by_config(records: list[RunRecord]) -> dict[str, list[RunRecord]]:
    grouped = defaultdict(list)
    for r in records:
        grouped[r.config_hash].append(r)
    return dict(grouped)


def aggregate_series(records: list[RunRecord]) -> dict:
    """Align same-config runs by update index and aggregate the reward
    column across seeds."""
    n = min(len(r.rows) for r in records)
    rewards = np.array([[r.rows[i].mean_episode_reward for i in range(n)] for r in records])
    timesteps = [records[0].rows[i].env_timesteps for i in range(n)]
    with warnings.catch_warnings():
        # an update with no completed episode in any seed is legitimately NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(rewards, axis=0) if n else np.zeros(0)
    mean_list = list(mean)
    return {
        "updates": [records[0].rows[i].update for i in range(n)],
        "timesteps": timesteps,
        "reward_mean": mean_list,
        "reward_stderr": list(_stderr(rewards)) if n else [],
        "reward_smoothed": sliding_window_mean(mean_list),
        "seeds": [r.seed for r in records],
    }


def export_report(records: list[RunRecord], fmt: str, out_dir, labels: dict[str, str] | None = None) -> list[Path]:
    """One CSV or SVG per config group. Labels map config hashes to display
    names (defaults to the hash)."""
    if not records:
        raise ReportError("no run records to report on")
    if fmt not in ("csv", "svg"):
        raise ReportError(f"unknown report format {fmt!r}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportError(f"cannot create report directory {out_dir}: {e}") from None

    grouped = group_by_config(records)
    labels = labels or {}
    written = []
    if fmt == "csv":
        for hash_, group in sorted(grouped.items()):
            series = aggregate_series(group)
            label = labels.get(hash_, hash_)
            path = out_dir / f"report_{label}.csv"
            try:
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write("update,env_timesteps,reward_raw,reward_smoothed,reward_stderr\n")
                    for i in range(len(series["updates"])):
                        fh.write(
                            f"{series['updates'][i]},{series['timesteps'][i]},"
                            f"{series['reward_mean'][i]!r},{series['reward_smoothed'][i]!r},"
                            f"{series['reward_stderr'][i]!r}\n"
                        )
            except OSError as e:
                raise ReportError(f"cannot write report {path}: {e}") from None
            written.append(path)
        return written

    # SVG: all series on one chart, shaded standard error bands
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for hash_, group in sorted(grouped.items()):
        series = aggregate_series(group)
        label = labels.get(hash_, hash_)
        ts = np.array(series["timesteps"], dtype=float)
        smoothed = np.array(series["reward_smoothed"], dtype=float)
        err = np.array(series["reward_stderr"], dtype=float)
        ax.plot(ts, smoothed, label=label)
        ax.fill_between(ts, smoothed - err, smoothed + err, alpha=0.25)
    ax.set_xlabel("environment timesteps")
    ax.set_ylabel(f"mean episode reward ({SMOOTHING_WINDOW}-update window)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "report.svg"
    try:
        fig.savefig(path, format="svg")
    except OSError as e:
        raise ReportError(f"cannot write report {path}: {e}") from None
    finally:
        plt.close(fig)
    return [path]
