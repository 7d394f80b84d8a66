"""Experiment runner: train MARL agents or run baselines, score outcomes, aggregate, report."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import baselines
from .gridworld import NONE, GridConfig, GridMatchingEnv, random_start_cells
from .instances import Instance, generate_instance
from .learner import ExplorationSchedule, LearnerConfig, LearnerPopulation, epsilon
from .matching import Matching
from .metrics import OutcomeMetrics, score

log = logging.getLogger(__name__)

ALGORITHMS = ("marl", "bls", "ha", "dcf")
REPORT_FORMAT = "smlab-report/1"
CURVE_DOWNSAMPLE = 100


@dataclass
class ExperimentConfig:
    variant: str = "SM"
    pref_type: str = "Symmetric"
    n_side: int = 4
    instance_seeds: list = field(default_factory=lambda: list(range(10)))
    rows: int = 3
    cols: int = 3
    grid_seed: int = 0
    algorithm: str = "marl"
    episodes: int = 20000
    steps_per_episode: int = 300
    repeats: int = 5
    window: int = 50
    seed: int = 0
    noise_sigma: float = 0.1
    unmatched_penalty: float = -1.0
    workers: int = 1
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def __post_init__(self):
        if isinstance(self.learner, dict):
            self.learner = LearnerConfig(**{**self.learner, "hidden": tuple(self.learner.get("hidden", (50, 25)))})
        self.instance_seeds = [int(s) for s in self.instance_seeds]

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.episodes < 1 or self.steps_per_episode < 1 or self.repeats < 1:
            raise ValueError("episodes, steps_per_episode and repeats must be positive")
        if self.rows * self.cols < 1:
            raise ValueError("grid needs at least one cell")
        if self.window < 1:
            raise ValueError("window must be positive")
        if not self.instance_seeds:
            raise ValueError("no instance seeds given")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["learner"]["hidden"] = list(d["learner"]["hidden"])
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class RunRecord:
    instance_seed: int
    repeat: int
    algorithm: str
    status: str = "ok"
    error: str = ""
    matching: Optional[Matching] = None
    metrics: Optional[OutcomeMetrics] = None
    rounds_or_steps: int = 0
    episodes: int = 0
    wall_clock: float = 0.0
    curve: Optional[list] = None  # mean reward per step, averaged over agents, downsampled

    def to_dict(self) -> dict:
        return {
            "instance_seed": self.instance_seed,
            "repeat": self.repeat,
            "algorithm": self.algorithm,
            "status": self.status,
            "error": self.error,
            "matching": None if self.matching is None else self.matching.to_dict(),
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "rounds_or_steps": self.rounds_or_steps,
            "episodes": self.episodes,
            "wall_clock": self.wall_clock,
            "curve": self.curve,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        if d.get("matching") is not None:
            d["matching"] = Matching.from_dict(d["matching"])
        if d.get("metrics") is not None:
            d["metrics"] = OutcomeMetrics(**d["metrics"])
        return cls(**d)


@dataclass
class OutcomeReport:
    config: dict
    runs: list
    aggregates: dict
    wall_clock: float = 0.0

    @property
    def ok(self) -> bool:
        return all(r.status == "ok" for r in self.runs)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "config": self.config,
            "runs": [r.to_dict() for r in self.runs],
            "aggregates": self.aggregates,
            "wall_clock": self.wall_clock,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OutcomeReport":
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError(f"unknown report format {doc.get('format')!r}")
        return cls(doc["config"], [RunRecord.from_dict(r) for r in doc["runs"]], doc["aggregates"],
                   doc.get("wall_clock", 0.0))

    def __eq__(self, other):
        if not isinstance(other, OutcomeReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


# -- seeds -------------------------------------------------------------------


def start_cells_for(config: ExperimentConfig, instance_seed: int) -> list[int]:
    """Start cells are drawn once per instance and shared by all repeats."""
    rng = np.random.default_rng([config.grid_seed, instance_seed])
    return random_start_cells(config.rows, config.cols, 2 * config.n_side, rng)


def _run_key(config: ExperimentConfig, instance_seed: int, repeat: int) -> list[int]:
    return [config.seed, instance_seed, repeat]


def grid_config(config: ExperimentConfig, start_cells: Sequence[int]) -> GridConfig:
    return GridConfig(config.rows, config.cols, start_cells, config.steps_per_episode,
                      config.noise_sigma, config.unmatched_penalty)


# -- MARL --------------------------------------------------------------------


def train_marl(config: ExperimentConfig, instance: Instance, start_cells: Optional[Sequence[int]] = None,
               run_key: Sequence[int] = (0,), progress_every: int = 0):
    """Train one population of independent SARSA learners.

    Returns (learners, curve) where ``curve[e, a]`` is agent ``a``'s mean
    per-step reward in episode ``e``.
    """
    if start_cells is None:
        start_cells = start_cells_for(config, instance.seed)
    env = GridMatchingEnv(grid_config(config, start_cells), instance)
    n_agents = 2 * instance.n_side
    ss = np.random.SeedSequence(list(run_key))
    weight_ss, action_ss, env_ss = ss.spawn(3)
    weight_seeds = [int(s.generate_state(1)[0]) for s in weight_ss.spawn(n_agents)]
    env_base = int(env_ss.generate_state(1)[0])
    rng = np.random.default_rng(action_ss)
    pop = LearnerPopulation(n_agents, env.obs_dim, env.n_actions, config.steps_per_episode, weight_seeds,
                            config.learner)
    lc = config.learner
    sched = ExplorationSchedule.for_budget(config.episodes, lc.eps0, lc.eps_fraction, lc.eps_reach, lc.eps_floor)
    T = config.steps_per_episode
    curve = np.zeros((config.episodes, n_agents))
    t0 = time.perf_counter()
    for ep in range(config.episodes):
        eps = epsilon(sched, ep)
        pop.start_episode()
        obs = env.reset([env_base, ep])
        act = pop.act(obs, eps, rng)
        total = np.zeros(n_agents)
        for t in range(T):
            next_obs, rew = env.step(act)
            next_act = pop.act(next_obs, eps, rng)
            pop.observe(obs, act, rew, next_obs, next_act, t == T - 1, rng)
            total += rew
            obs, act = next_obs, next_act
        curve[ep] = total / T
        if progress_every and (ep + 1) % progress_every == 0:
            log.info("run %s: episode %d/%d eps=%.3f mean reward %.3f (%.0fs)", list(run_key), ep + 1,
                     config.episodes, eps, curve[max(0, ep - progress_every + 1):ep + 1].mean(),
                     time.perf_counter() - t0)
    return pop, curve


Policy = Callable[[np.ndarray], np.ndarray]


def extract_outcome(config: ExperimentConfig, instance: Instance, policy, start_cells: Optional[Sequence[int]] = None,
                    eval_seed: int = 0) -> Matching:
    """Greedy evaluation episode; keep the pairs matched at every one of the final ``window`` steps.

    ``policy`` is a trained ``LearnerPopulation`` or any callable mapping the
    (2n, obs_dim) observation array to 2n actions.
    """
    if start_cells is None:
        start_cells = start_cells_for(config, instance.seed)
    act_fn = policy.greedy if hasattr(policy, "greedy") else policy
    env = GridMatchingEnv(grid_config(config, start_cells), instance)
    obs = env.reset(eval_seed)
    n = instance.n_side
    T = config.steps_per_episode
    window = min(config.window, T)
    persistent = None
    for t in range(T):
        obs, _ = env.step(np.asarray(act_fn(obs), dtype=np.int64))
        if t >= T - window:
            mw = env.state.matched_with[:n].copy()
            persistent = mw if persistent is None else np.where(persistent == mw, mw, NONE)
    pairs = [(i, int(persistent[i]) - n) for i in range(n) if persistent[i] != NONE]
    return Matching.from_pairs(n, pairs)


# -- experiments -------------------------------------------------------------


def run_single(config: ExperimentConfig, instance_seed: int, repeat: int) -> RunRecord:
    """One (instance, repeat) run; failures are recorded, not raised."""
    rec = RunRecord(instance_seed, repeat, config.algorithm)
    t0 = time.perf_counter()
    try:
        instance = generate_instance(config.variant, config.pref_type, config.n_side, instance_seed)
        key = _run_key(config, instance_seed, repeat)
        if config.algorithm == "marl":
            cells = start_cells_for(config, instance_seed)
            pop, curve = train_marl(config, instance, cells, key, progress_every=max(1, config.episodes // 20))
            rec.matching = extract_outcome(config, instance, pop, cells, eval_seed=int(np.random.SeedSequence(key).generate_state(1)[0]))
            rec.episodes = config.episodes
            rec.rounds_or_steps = config.episodes * config.steps_per_episode
            mean_curve = curve.mean(axis=1)
            rec.curve = [float(x) for x in mean_curve[::CURVE_DOWNSAMPLE]]
        elif config.algorithm == "bls":
            rec.matching = baselines.bls(instance)
        elif config.algorithm == "ha":
            run = baselines.hoepman_run(instance, np.random.default_rng(key))
            rec.matching, rec.rounds_or_steps = run.matching, run.rounds_or_steps
        elif config.algorithm == "dcf":
            run = baselines.dcf_run(instance, np.random.default_rng(key))
            rec.matching, rec.rounds_or_steps = run.matching, run.rounds_or_steps
        else:
            raise ValueError(f"unknown algorithm {config.algorithm!r}")
        rec.metrics = score(instance, rec.matching)
    except Exception as exc:  # recorded per run; the batch continues
        log.exception("run failed: instance %s repeat %s", instance_seed, repeat)
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc} (instance_seed={instance_seed}, repeat={repeat})"
    rec.wall_clock = time.perf_counter() - t0
    return rec


def _run_single_args(args):
    return run_single(*args)


def _mean_std(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate(runs: Sequence[RunRecord]) -> dict:
    """Table-style aggregates.

    Instability measures are averaged over unstable runs only; cost measures
    and median-match figures over all successful runs. Standard deviations
    are population (ddof=0).
    """
    ok = [r for r in runs if r.status == "ok" and r.metrics is not None]
    unstable = [r.metrics for r in ok if not r.metrics.stable]
    m = [r.metrics for r in ok]
    agg = {
        "n_runs": len(runs),
        "n_ok": len(ok),
        "n_failed": len(runs) - len(ok),
        "n_unstable": len(unstable),
        "stability_pct": None if not ok else 100.0 * (len(ok) - len(unstable)) / len(ok),
    }
    for name in ("doi", "roi", "md"):
        agg[f"{name}_mean"], agg[f"{name}_std"] = _mean_std([getattr(x, name) for x in unstable])
    agg["regret_mean"], agg["regret_std"] = _mean_std([x.regret for x in m if x.regret is not None])
    for name in ("egalitarian", "set_equality"):
        agg[f"{name}_mean"], agg[f"{name}_std"] = _mean_std([getattr(x, name) for x in m])
    defined = [x.is_msm for x in m if x.is_msm is not None]
    agg["msm_pct"] = None if not defined else 100.0 * sum(defined) / len(defined)
    agg["mm_pct"] = None if not m else 100.0 * float(np.mean([x.mm_fraction for x in m]))
    return agg


def run_experiment(config: ExperimentConfig) -> OutcomeReport:
    config.validate()
    t0 = time.perf_counter()
    jobs = [(config, s, r) for s in config.instance_seeds for r in range(config.repeats)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            runs = list(pool.map(_run_single_args, jobs))
    else:
        runs = [run_single(*job) for job in jobs]
    return OutcomeReport(config.to_dict(), runs, aggregate(runs), time.perf_counter() - t0)


# -- reports -----------------------------------------------------------------

RUN_COLUMNS = [
    "row_type", "instance_seed", "repeat", "algorithm", "status", "stable", "doi", "roi", "md",
    "regret", "egalitarian", "set_equality", "is_msm", "mm_fraction", "n_stable",
    "partner_of_1", "partner_of_2",
]
AGG_COLUMNS = [
    "n_runs", "n_ok", "n_failed", "n_unstable", "stability_pct",
    "doi_mean", "doi_std", "roi_mean", "roi_std", "md_mean", "md_std",
    "regret_mean", "regret_std", "egalitarian_mean", "egalitarian_std",
    "set_equality_mean", "set_equality_std", "msm_pct", "mm_pct",
]
CSV_COLUMNS = RUN_COLUMNS + AGG_COLUMNS


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def csv_rows(report: OutcomeReport) -> list[dict]:
    rows = []
    for r in report.runs:
        row = {c: "" for c in CSV_COLUMNS}
        row.update(row_type="run", instance_seed=r.instance_seed, repeat=r.repeat, algorithm=r.algorithm,
                   status=r.status)
        if r.metrics is not None:
            mt = r.metrics
            row.update(stable=_cell(mt.stable), doi=mt.doi, roi=_cell(mt.roi), md=_cell(mt.md),
                       regret=_cell(mt.regret), egalitarian=mt.egalitarian, set_equality=mt.set_equality,
                       is_msm=_cell(mt.is_msm), mm_fraction=_cell(mt.mm_fraction), n_stable=mt.n_stable)
        if r.matching is not None:
            row.update(partner_of_1=" ".join(map(str, r.matching.partner_of_1)),
                       partner_of_2=" ".join(map(str, r.matching.partner_of_2)))
        rows.append(row)
    agg = {c: "" for c in CSV_COLUMNS}
    agg["row_type"] = "aggregate"
    agg["algorithm"] = report.config.get("algorithm", "")
    for c in AGG_COLUMNS:
        agg[c] = _cell(report.aggregates.get(c))
    rows.append(agg)
    return rows


def emit_report(report: OutcomeReport, out_dir, prefix: str = "report") -> dict:
    """Write ``<prefix>.csv``, ``<prefix>.json`` and ``<prefix>_curve.csv``; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{prefix}.csv", "json": out / f"{prefix}.json", "curve": out / f"{prefix}_curve.csv"}
    with paths["csv"].open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        w.writerows(csv_rows(report))
    paths["json"].write_text(json.dumps(report.to_dict(), indent=1))
    with paths["curve"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_seed", "repeat", "episode", "mean_reward"])
        for r in report.runs:
            for k, v in enumerate(r.curve or []):
                w.writerow([r.instance_seed, r.repeat, k * CURVE_DOWNSAMPLE, repr(v)])
    return paths


def load_report(path) -> OutcomeReport:
    return OutcomeReport.from_dict(json.loads(Path(path).read_text()))


def reaggregate(report: OutcomeReport) -> OutcomeReport:
    return OutcomeReport(report.config, report.runs, aggregate(report.runs), report.wall_clock)
