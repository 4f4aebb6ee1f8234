"""Sweeps, learning-rate selection, aggregation and variance tables."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..agents import (
    AgentConfig,
    RunRecord,
    SoftmaxPolicySpec,
    fingerprint,
    run_control,
    run_episodic_control,
    run_prediction,
)
from ..envs import baird, cartpole
from .config import PREDICTION, ExperimentConfig, column_of, expand_variant

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class SweepPoint:
    """One (target, variant, learning rate) cell of a sweep; seeds run inside it."""

    target: float
    column: str
    variant: dict
    learning_rate: float

    def agent_config(self, config: ExperimentConfig) -> AgentConfig:
        kwargs = dict(self.variant)
        if config.projection_radius is not None:
            kwargs.setdefault("projection_radius", config.projection_radius)
        return AgentConfig(learning_rate=self.learning_rate, **kwargs)

    def document(self, config: ExperimentConfig) -> dict:
        doc = {
            "environment": config.environment,
            "setting": config.setting,
            "target": self.target,
            "variant": self.variant,
            "learning_rate": self.learning_rate,
            "steps": config.steps,
        }
        if config.environment == "cartpole":
            doc.update(eval_every=config.eval_every, eval_episodes=config.eval_episodes)
        else:
            doc.update(eval_points=config.eval_points)
        if config.is_control:
            doc.update(behavior_temperature=config.behavior_temperature,
                       behavior_epsilon=config.resolved_behavior_epsilon())
        if config.projection_radius is not None:
            doc.update(projection_radius=config.projection_radius)
        return doc

    def key(self, config: ExperimentConfig) -> str:
        return fingerprint(self.document(config))


def sweep_points(config: ExperimentConfig) -> List[SweepPoint]:
    points = []
    for target in config.targets:
        for spec in config.algorithms:
            for variant in expand_variant(spec):
                for lr in config.learning_rates:
                    points.append(SweepPoint(float(target), column_of(spec), variant, float(lr)))
    return points


def run_point(config: ExperimentConfig, point: SweepPoint, seed: int) -> RunRecord:
    """Execute one seeded run of a sweep point."""
    agent = point.agent_config(config)
    if config.environment == "baird" and config.setting == PREDICTION:
        mdp, X, w0 = baird.baird_env()
        return run_prediction(
            mdp, baird.behavior_policy(), baird.target_policy(point.target), X, agent,
            config.steps, seed, w0=w0, eval_points=config.eval_points, backend=config.backend,
        )
    behavior = SoftmaxPolicySpec(
        config.behavior_temperature, config.resolved_behavior_epsilon(),
        baird.behavior_policy() if config.environment == "baird" else None,
    )
    target = SoftmaxPolicySpec(point.target)
    if config.environment == "baird":
        mdp = baird.baird_mdp()
        return run_control(
            mdp, behavior, target, baird.baird_action_features(), agent, config.steps, seed,
            w0=baird.baird_action_initial_weights(), eval_points=config.eval_points,
            backend=config.backend,
        )
    return run_episodic_control(
        cartpole.CartPole(), cartpole.cartpole_features(), behavior, target, agent,
        config.steps, seed, eval_every=config.eval_every, eval_episodes=config.eval_episodes,
    )


def _run_path(out: Path, key: str, seed: int) -> Path:
    return out / "runs" / key / f"seed_{seed:03d}.csv"


def _execute(args):
    config, point, seed, path = args
    record = run_point(config, point, seed)
    record.fingerprint = point.key(config)
    record.config = point.document(config)
    record.write(path)
    return str(path)


def run_sweep(config: ExperimentConfig, output_dir=None, progress=None) -> Path:
    """Run every missing (point, seed) and write the manifest.

    Existing run files are kept, so an interrupted sweep resumes where it
    stopped.  Returns the manifest path.
    """
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = sweep_points(config)
    jobs = []
    for point in points:
        key = point.key(config)
        for seed in range(config.seeds):
            path = _run_path(out, key, seed)
            if not (path.exists() and path.with_suffix(".json").exists()):
                jobs.append((config, point, seed, path))
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            for done in pool.map(_execute, jobs, chunksize=1):
                if progress:
                    progress(done)
    else:
        for job in jobs:
            done = _execute(job)
            if progress:
                progress(done)

    entries = []
    for point in points:
        key = point.key(config)
        entries.append({
            "key": key,
            "target": point.target,
            "column": point.column,
            "variant": point.variant,
            "learning_rate": point.learning_rate,
            "runs": [str(_run_path(out, key, s).relative_to(out)) for s in range(config.seeds)],
        })
    manifest = {"config": config.to_dict(), "points": entries}
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def manifest_hash(manifest_path) -> str:
    """Digest of the manifest and every run file it references."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    h = hashlib.sha256(manifest_path.read_bytes())
    for entry in json.loads(manifest_path.read_text())["points"]:
        for rel in entry["runs"]:
            csv = root / rel
            h.update(csv.read_bytes())
            h.update(csv.with_suffix(".json").read_bytes())
    return h.hexdigest()


# aggregation ---------------------------------------------------------------

@dataclass
class Curve:
    """Across-seed statistics of one sweep point."""

    learning_rate: float
    steps: np.ndarray
    values: np.ndarray  # (seeds, points)
    diverged: np.ndarray
    initial: np.ndarray
    variant: dict = field(default_factory=dict)

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        k = self.values.shape[0]
        if k < 2:
            return np.zeros(self.values.shape[1])
        return self.values.std(axis=0, ddof=1) / math.sqrt(k)

    @property
    def final(self) -> float:
        return float(self.mean[-1])

    @property
    def all_diverged(self) -> bool:
        return bool(np.all(self.diverged))

    def average_variance(self) -> float:
        """Mean over evaluation points of the across-seed variance."""
        return float(np.mean(self.values.var(axis=0)))


def curve_from_records(records: Sequence[RunRecord], learning_rate: float, variant=None) -> Curve:
    if not records:
        raise ValueError("need at least one record")
    steps = records[0].steps
    for r in records[1:]:
        if not np.array_equal(r.steps, steps):
            raise ValueError("records disagree on evaluation steps")
    return Curve(
        learning_rate=float(learning_rate),
        steps=np.asarray(steps),
        values=np.vstack([r.values for r in records]),
        diverged=np.array([r.diverged for r in records]),
        initial=np.array([r.initial_value for r in records]),
        variant=dict(variant or {}),
    )


def select_best_alpha(curves: Sequence[Curve], maximize: bool = False) -> Optional[Curve]:
    """Curve with the best final mean; ties go to the smaller learning rate.

    Groups in which every seed diverged are never selected; ``None`` means
    nothing is left.
    """
    candidates = [c for c in curves if not c.all_diverged and np.isfinite(c.final)]
    if not candidates:
        return None
    sign = -1.0 if maximize else 1.0
    return min(candidates, key=lambda c: (sign * c.final, c.learning_rate))


def load_curves(manifest_path) -> Dict[tuple, List[Curve]]:
    """``{(target, column): [Curve, ...]}`` from a manifest."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    groups: Dict[tuple, List[Curve]] = {}
    for entry in manifest["points"]:
        records = [RunRecord.read(root / rel) for rel in entry["runs"]]
        curve = curve_from_records(records, entry["learning_rate"], entry["variant"])
        groups.setdefault((entry["target"], entry["column"]), []).append(curve)
    return groups


def is_successful(curve: Optional[Curve], config: ExperimentConfig) -> bool:
    """Table success rule.

    Prediction: final mean error below ``success_threshold``.  Tabular
    control: no seed diverged and the final mean error is below
    ``control_success_fraction`` times the initial error.  Episodic control:
    no seed diverged.
    """
    if curve is None:
        return False
    if config.setting == PREDICTION:
        return curve.final < config.success_threshold
    if np.any(curve.diverged):
        return False
    if config.environment == "cartpole":
        return True
    return curve.final < config.control_success_fraction * float(np.mean(curve.initial))


def order_of_magnitude(value: float) -> Optional[int]:
    if not value > 0 or not np.isfinite(value):
        return None
    return math.floor(math.log10(value))


def format_cell(cell: dict) -> str:
    if not cell["success"]:
        return "-"
    if cell["order"] is None:
        return "0"
    return f"10^{cell['order']}"


@dataclass
class VarianceTable:
    rows: list
    columns: list
    cells: dict  # (row, column) -> dict

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "columns": self.columns,
            "cells": [
                {"target": r, "column": c, **self.cells[(r, c)]}
                for r in self.rows for c in self.columns if (r, c) in self.cells
            ],
        }

    def render(self) -> str:
        width = max(8, *(len(c) for c in self.columns)) + 2
        lines = ["target".ljust(10) + "".join(c.rjust(width) for c in self.columns)]
        for r in self.rows:
            line = f"{r:<10g}"
            for c in self.columns:
                cell = self.cells.get((r, c))
                line += (format_cell(cell) if cell else "").rjust(width)
            lines.append(line)
        return "\n".join(lines)


def variance_table(groups: Dict[tuple, List[Curve]], config: ExperimentConfig) -> VarianceTable:
    """Average across-seed variance of each cell's best-alpha curve.

    Cells report ``floor(log10(variance))``; unsuccessful cells are dashes.
    """
    maximize = config.environment == "cartpole"
    rows = sorted({k[0] for k in groups})
    columns = list(dict.fromkeys(k[1] for k in groups))
    cells = {}
    for (target, column), curves in groups.items():
        best = select_best_alpha(curves, maximize=maximize)
        success = is_successful(best, config)
        var = best.average_variance() if best is not None else float("nan")
        cells[(target, column)] = {
            "success": success,
            "variance": var,
            "order": order_of_magnitude(var) if success else None,
            "learning_rate": best.learning_rate if best is not None else None,
            "variant": best.variant if best is not None else None,
            "final": best.final if best is not None else None,
        }
    return VarianceTable(rows, columns, cells)


def write_aggregates(groups: Dict[tuple, List[Curve]], config: ExperimentConfig, out_dir) -> List[Path]:
    """Write each cell's best-alpha curve as ``step,mean,stderr`` CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maximize = config.environment == "cartpole"
    paths = []
    for (target, column), curves in sorted(groups.items()):
        best = select_best_alpha(curves, maximize=maximize)
        if best is None:
            continue
        safe = column.replace("/", "_").replace("=", "").replace(",", "_")
        path = out / f"target{target:g}_{safe}.csv"
        rows = ["step,mean,stderr"] + [
            f"{int(s)},{m!r},{e!r}" for s, m, e in zip(best.steps, best.mean.tolist(), best.stderr.tolist())
        ]
        path.write_text("\n".join(rows) + "\n")
        paths.append(path)
    return paths


def table_from_manifest(manifest_path) -> VarianceTable:
    manifest = json.loads(Path(manifest_path).read_text())
    config = ExperimentConfig.from_dict(manifest["config"])
    return variance_table(load_curves(manifest_path), config)


def smooth(curve, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average the
    available prefix."""
    if int(window) != window or window < 1:
        raise ValueError(f"window must be an integer >= 1, got {window}")
    x = np.asarray(curve, dtype=float)
    window = int(window)
    return np.array([x[max(0, k - window + 1):k + 1].mean() for k in range(x.shape[0])])
