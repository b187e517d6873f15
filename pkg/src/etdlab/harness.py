"""Seeded multi-run experiments, tail statistics, divergence counts and sweeps."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .environments import build, generate_batch, batch_transition
from .learners import Algorithm, AlgorithmConfig, LearnerState, default_f_max, step
from .mdp import PredictionTask, task_to_dict

log = logging.getLogger(__name__)

BASE_SEED = 20240


def resolve_task(task: str | PredictionTask) -> PredictionTask:
    return build(task) if isinstance(task, str) else task


def rmse(theta: np.ndarray, task: PredictionTask, target: np.ndarray | None = None) -> np.ndarray | float:
    """Unweighted RMSE of ``Phi theta`` against the evaluation target over non-terminal states.

    ``theta`` may be a batch ``(n, k)``.
    """
    if target is None:
        target = task.target_values()
    idx = task.eval_states
    with np.errstate(over="ignore", invalid="ignore"):
        err = np.asarray(theta) @ task.phi[idx].T - target[idx]
        out = np.sqrt(np.mean(err**2, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ExperimentSpec:
    task: str | PredictionTask
    config: AlgorithmConfig
    steps: int
    n_runs: int = 10
    base_seed: int = BASE_SEED
    tail_fraction: float = 0.10
    divergence_threshold: float = 1e3
    curve_points: int = 120

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if not 0 < self.tail_fraction <= 1:
            raise ValueError("tail_fraction must lie in (0, 1]")

    @property
    def task_name(self) -> str:
        return self.task if isinstance(self.task, str) else self.task.name

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + r for r in range(self.n_runs)]

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["algorithm"] = self.config.algorithm.value
        task = self.task if isinstance(self.task, str) else task_to_dict(self.task)
        return {
            "task": task,
            "config": cfg,
            "steps": self.steps,
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "tail_fraction": self.tail_fraction,
            "divergence_threshold": self.divergence_threshold,
            "curve_points": self.curve_points,
        }

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunRecord:
    rmse: np.ndarray
    diverged: bool
    max_rmse: float
    tail_avg: float
    seed: int


def tail_length(steps: int, tail_fraction: float) -> int:
    return max(1, math.ceil(tail_fraction * steps - 1e-9))


def run(spec: ExperimentSpec) -> list[RunRecord]:
    """Execute ``spec.n_runs`` seeded runs; run ``r`` uses seed ``base_seed + r``.

    RMSE is recorded before the first update and after every step.  A run
    that hits NaN/Inf stops learning and its remaining entries repeat the
    last finite value.
    """
    task = resolve_task(spec.task)
    seeds = spec.seeds
    n, T = len(seeds), spec.steps
    cfg = spec.config
    f_max = None
    if cfg.algorithm is Algorithm.TETD:
        f_max = cfg.f_max if cfg.f_max is not None else default_f_max(task)
    target = task.target_values()
    batch = generate_batch(task, seeds, T)
    state = LearnerState.initial(task, n)
    curves = np.empty((T + 1, n))
    curves[0] = rmse(state.theta, task, target)
    hit_nonfinite = ~np.isfinite(curves[0])
    for t in range(T):
        state = step(state, cfg, batch_transition(batch, t), task, f_max=f_max)
        cur = rmse(state.theta, task, target)
        bad = ~np.isfinite(cur)
        if bad.any() or state.poisoned.any():
            newly = (bad | state.poisoned) & ~hit_nonfinite
            hit_nonfinite |= newly
            cur = np.where(hit_nonfinite, curves[t], cur)
            if newly.any():
                state = replace(state, poisoned=state.poisoned | hit_nonfinite)
        curves[t + 1] = cur
    k = tail_length(T, spec.tail_fraction)
    records = []
    for j, seed in enumerate(seeds):
        c = curves[:, j]
        mx = float(np.max(c))
        records.append(
            RunRecord(
                rmse=c.copy(),
                diverged=bool(hit_nonfinite[j] or mx > spec.divergence_threshold),
                max_rmse=mx,
                tail_avg=_mean(c[-k:]),
                seed=seed,
            )
        )
    return records


def _mean(x: np.ndarray) -> float:
    # shifting by the first entry makes the mean of a constant sequence exact
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x[0]):
        return float(np.mean(x))
    return float(x[0] + np.mean(x - x[0]))


def subsample_curve(curve, points: int = 120) -> tuple[np.ndarray, np.ndarray]:
    """Uniform index subsampling keeping the first and last entries; returns ``(indices, values)``."""
    if points < 2:
        raise ValueError("points must be at least 2")
    curve = np.asarray(curve)
    n = curve.shape[0]
    if points >= n:
        idx = np.arange(n)
    else:
        idx = (np.arange(points) * (n - 1)) // (points - 1)
    return idx, curve[idx]


@dataclass
class CellStats:
    env: str
    algorithm: str
    alpha: float
    c: float
    n_runs: int
    n_diverged: int
    tail_mean: float
    tail_std: float
    max_rmse: float
    spec_hash: str = ""
    base_seed: int = BASE_SEED
    curve_index: np.ndarray | None = None
    curve_mean: np.ndarray | None = None
    curve_std: np.ndarray | None = None
    is_div: bool = False
    bold: bool = False
    runs: list[dict] | None = None  # per-run seed, diverged, max_rmse, tail_avg

    @property
    def key(self) -> tuple:
        return (self.env, self.algorithm, self.alpha, self.c)

    @property
    def stable(self) -> bool:
        return self.n_diverged == 0


SCALAR_FIELDS = ("env", "algorithm", "alpha", "c", "n_runs", "n_diverged", "tail_mean", "tail_std",
                 "max_rmse", "spec_hash", "base_seed", "is_div", "bold")


def summarize(spec: ExperimentSpec, records: list[RunRecord], div_min_count: int | None = None) -> CellStats:
    """Cell statistics; diverged runs are counted but excluded from the tail mean/std.

    A cell is ``Div.`` when at least ``div_min_count`` runs diverged (default:
    all of them).
    """
    ok = [r for r in records if not r.diverged]
    n_div = len(records) - len(ok)
    tails = np.array([r.tail_avg for r in ok])
    tail_mean = _mean(tails) if len(ok) else float("nan")
    tail_std = float(tails.std()) if len(ok) else float("nan")
    chosen = ok if ok else records
    curves = np.stack([r.rmse for r in chosen])
    idx, mean = subsample_curve(curves.mean(axis=0), spec.curve_points)
    std = curves.std(axis=0)[idx]
    threshold = len(records) if div_min_count is None else div_min_count
    cfg = spec.config
    return CellStats(
        env=spec.task_name,
        algorithm=cfg.algorithm.value,
        alpha=float(cfg.alpha),
        c=float(cfg.c),
        n_runs=len(records),
        n_diverged=n_div,
        tail_mean=tail_mean,
        tail_std=tail_std,
        max_rmse=float(max(r.max_rmse for r in records)),
        spec_hash=spec.spec_hash(),
        base_seed=spec.base_seed,
        curve_index=idx,
        curve_mean=mean,
        curve_std=std,
        is_div=n_div >= max(1, threshold),
        runs=[{"seed": r.seed, "diverged": r.diverged, "max_rmse": r.max_rmse, "tail_avg": r.tail_avg} for r in records],
    )


@dataclass
class SweepResult:
    cells: list[CellStats]
    axis: str = ""
    metadata: dict = field(default_factory=dict)

    def cell(self, env: str, algorithm: str, alpha: float | None = None, c: float | None = None) -> CellStats:
        for cell in self.cells:
            if cell.env == env and cell.algorithm == algorithm.upper():
                if alpha is not None and not np.isclose(cell.alpha, alpha):
                    continue
                if c is not None and not np.isclose(cell.c, c):
                    continue
                return cell
        raise KeyError((env, algorithm, alpha, c))

    def envs(self) -> list[str]:
        return list(dict.fromkeys(c.env for c in self.cells))

    def rows(self) -> list[dict]:
        return [{k: getattr(c, k) for k in SCALAR_FIELDS} for c in self.cells]


def _execute(spec: ExperimentSpec, div_min_count: int | None) -> CellStats:
    return summarize(spec, run(spec), div_min_count)


def run_cells(specs, workers: int = 1, div_min_count: int | None = None) -> list[CellStats]:
    """Run every spec; results come back in input order regardless of completion order."""
    specs = list(specs)
    if workers <= 1 or len(specs) <= 1:
        return [_execute(s, div_min_count) for s in specs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute, specs, [div_min_count] * len(specs)))


def _metadata(specs) -> dict:
    return {
        "specs": {s.spec_hash(): s.to_dict() for s in specs},
        "seeds": {s.spec_hash(): s.seeds for s in specs},
    }


def mark_bold_tail(cells: list[CellStats]) -> None:
    """Best non-Div. mean per environment plus every cell within one std of it (the best's std)."""
    for env in dict.fromkeys(c.env for c in cells):
        pool = [c for c in cells if c.env == env and not c.is_div and np.isfinite(c.tail_mean)]
        for c in cells:
            if c.env == env:
                c.bold = False
        if not pool:
            continue
        best = min(pool, key=lambda c: c.tail_mean)
        for c in pool:
            c.bold = bool(c.tail_mean - best.tail_mean <= best.tail_std)


def mark_bold_divergence(cells: list[CellStats], rel: float = 0.05) -> None:
    """Smallest max-RMSE among stable cells per environment, plus any within ``rel`` of it."""
    for env in dict.fromkeys(c.env for c in cells):
        pool = [c for c in cells if c.env == env and c.stable]
        for c in cells:
            if c.env == env:
                c.bold = False
        if not pool:
            continue
        best = min(c.max_rmse for c in pool)
        for c in pool:
            c.bold = bool(c.max_rmse <= best * (1.0 + rel))


def tail_table(specs, workers: int = 1, div_min_count: int | None = None) -> SweepResult:
    specs = list(specs)
    cells = run_cells(specs, workers, div_min_count)
    mark_bold_tail(cells)
    return SweepResult(cells, axis="algorithm", metadata=_metadata(specs))


def divergence_table(specs, workers: int = 1) -> SweepResult:
    specs = list(specs)
    cells = run_cells(specs, workers)
    mark_bold_divergence(cells)
    return SweepResult(cells, axis="algorithm", metadata=_metadata(specs))


def sweep(axis: str, values, base_spec: ExperimentSpec, workers: int = 1) -> SweepResult:
    """One seeded batch per value of ``alpha`` or ``c``; all cells share the base seeds."""
    if axis not in ("alpha", "c"):
        raise ValueError("axis must be 'alpha' or 'c'")
    values = list(values)
    if not values:
        raise ValueError("sweep axis is empty")
    specs = [replace(base_spec, config=replace(base_spec.config, **{axis: float(v)})) for v in values]
    cells = run_cells(specs, workers)
    return SweepResult(cells, axis=axis, metadata=_metadata(specs))


def spec_for(task: str, algorithm: str, alpha: float = 0.01, c: float | None = None, steps: int | None = None,
             n_runs: int = 10, base_seed: int = BASE_SEED, **config) -> ExperimentSpec:
    """Experiment spec with the per-task defaults for horizon and RETD regularization."""
    from .environments import DEFAULT_C, DEFAULT_STEPS

    algo = Algorithm.parse(algorithm)
    if c is None:
        c = DEFAULT_C.get(task, 9.0) if algo is Algorithm.RETD else 0.0
    if steps is None:
        steps = DEFAULT_STEPS.get(task, 5000)
    return ExperimentSpec(task, AlgorithmConfig(algo, alpha, c=c, **config), steps, n_runs, base_seed)
