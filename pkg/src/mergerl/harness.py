"""Training, evaluation and policy comparison runs with CSV metrics."""

from __future__ import annotations

import csv
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from os import PathLike
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .agent import StepLog, greedy_rollouts, train
from .config import ExperimentConfig
from .neural import load_weights, save_weights
from .sim import ConfigError

CSV_HEADER = ("run_id", "policy", "seed", "episode", "step", "action", "reward", "q_max", "wall_ms")


class MetricsRow(NamedTuple):
    run_id: str
    policy: str
    seed: int
    episode: int
    step: int
    action: int
    reward: float
    q_max: float
    wall_ms: float


def _rows(run_id: str, policy: str, seed: int, log: Iterable[StepLog]) -> list[MetricsRow]:
    return [MetricsRow(run_id, policy, seed, *entry) for entry in log]


def write_metrics(path: str | PathLike, rows: Sequence[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in rows:
            # repr() round-trips floats exactly; wall time is informational only
            writer.writerow([r.run_id, r.policy, r.seed, r.episode, r.step, r.action,
                             repr(r.reward), repr(r.q_max), f"{r.wall_ms:.3f}"])


def read_metrics(path: str | PathLike) -> list[MetricsRow]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [
            MetricsRow(r[0], r[1], int(r[2]), int(r[3]), int(r[4]), int(r[5]),
                       float(r[6]), float(r[7]), float(r[8]))
            for r in reader
        ]


def episode_rewards(rows: Sequence[MetricsRow]) -> list[float]:
    """Sum of step rewards per episode, in episode order."""
    totals: dict[int, list[float]] = {}
    for r in rows:
        totals.setdefault(r.episode, []).append(r.reward)
    return [math.fsum(totals[e]) for e in sorted(totals)]


def train_run(config: ExperimentConfig, policy: str, seed: int,
              out_dir: str | PathLike | None = None, run_id: str | None = None) -> tuple[Path, Path]:
    """Train one agent; write ``<run_id>.mrw`` weights and ``<run_id>.csv`` metrics."""
    config.validate()
    spec = config.policy_spec(policy)
    run_id = run_id or f"{policy}-s{seed}"
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w, log = train(config.make_env(), spec, config.hyperparams(), seed)
    weights_path, metrics_path = out / f"{run_id}.mrw", out / f"{run_id}.csv"
    save_weights(w, weights_path)
    write_metrics(metrics_path, _rows(run_id, policy, seed, log))
    return weights_path, metrics_path


def eval_run(weights: str | PathLike, episodes: int, seed: int,
             config: ExperimentConfig | None = None,
             run_id: str = "eval", policy: str = "greedy") -> list[MetricsRow]:
    """Play greedily with saved weights; nothing is learned or written."""
    config = (config or ExperimentConfig()).validate()
    w = load_weights(weights)
    return _rows(run_id, policy, seed, greedy_rollouts(config.make_env(), w, episodes, seed))


@dataclass
class PolicySummary:
    label: str
    policy: str
    tail_mean: float
    tail_std: float
    eval_mean: float
    runtime_s: float
    eval_by_seed: dict[int, float] = field(default_factory=dict)


@dataclass
class CompareReport:
    seeds: list[int]
    summaries: list[PolicySummary]
    verdict: str
    files: list[str] = field(default_factory=list)
    # elapsed wall time of each training run, keyed by run id
    run_seconds: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def summarize(label: str, policy: str, train_logs: dict[int, Sequence[MetricsRow]],
              eval_logs: dict[int, Sequence[MetricsRow]], tail_fraction: float) -> PolicySummary:
    """Aggregate one policy's runs; every number is recomputable from the CSVs."""
    tail = []
    for rows in train_logs.values():
        per_episode = episode_rewards(rows)
        n_tail = max(1, math.ceil(tail_fraction * len(per_episode)))
        tail.extend(per_episode[-n_tail:])
    by_seed = {s: statistics.fmean(episode_rewards(rows)) for s, rows in eval_logs.items() if rows}
    return PolicySummary(
        label=label,
        policy=policy,
        tail_mean=statistics.fmean(tail),
        tail_std=statistics.pstdev(tail),
        eval_mean=statistics.fmean(by_seed.values()) if by_seed else math.nan,
        runtime_s=math.fsum(r.wall_ms for rows in train_logs.values() for r in rows) / 1e3,
        eval_by_seed=by_seed,
    )


def _job(args):
    config, policy, seed, out, run_id = args
    t0 = time.perf_counter()
    weights, metrics = train_run(config, policy, seed, out, run_id)
    elapsed = time.perf_counter() - t0
    # evaluation episodes use their own seed stream, disjoint from training
    ev = eval_run(weights, config.eval_episodes, seed, config, f"{run_id}-eval", policy)
    eval_path = Path(out) / f"{run_id}-eval.csv"
    write_metrics(eval_path, ev)
    return weights, metrics, eval_path, elapsed


def compare_policies(config: ExperimentConfig, seeds: Sequence[int],
                     out_dir: str | PathLike | None = None,
                     policies: Sequence[str] = ("eps_greedy", "boltzmann"),
                     workers: int = 1) -> CompareReport:
    """Train and evaluate every policy on every seed with identical settings.

    Writes training and evaluation CSVs plus ``report.json`` to ``out_dir``.
    """
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("seeds: at least one seed is required")
    config.validate()
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = [p if list(policies).count(p) == 1 else f"{p}.{i}" for i, p in enumerate(policies)]
    jobs = [(config, p, s, out, f"{lab}-s{s}") for lab, p in zip(labels, policies) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]

    summaries, files, run_seconds = [], [], {}
    for k, (lab, pol) in enumerate(zip(labels, policies)):
        train_logs, eval_logs = {}, {}
        for j, s in enumerate(seeds):
            weights, metrics, eval_path, elapsed = results[k * len(seeds) + j]
            files += [str(weights), str(metrics), str(eval_path)]
            run_seconds[f"{lab}-s{s}"] = elapsed
            train_logs[s] = read_metrics(metrics)
            eval_logs[s] = read_metrics(eval_path)
        summaries.append(summarize(lab, pol, train_logs, eval_logs, config.tail_fraction))

    ranked = sorted(summaries, key=lambda s: s.eval_mean, reverse=True)
    verdict = "tie" if len(ranked) > 1 and ranked[0].eval_mean == ranked[1].eval_mean else ranked[0].label
    report = CompareReport(seeds, summaries, verdict, files, run_seconds)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return report
