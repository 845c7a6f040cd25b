"""
Experiment driver.

This module defines:
- `IterationRecord` / `IterationAccumulator`: timestep-budgeted reporting windows.
- `ExperimentRunner`: composition root that builds buffers, pool, learner and workers and
  runs them either threaded or deterministically (round-robin, single thread).
- `build_demos`, `ablation_cells`, `summarize`, `evaluate`: the other command back-ends.

Metrics CSV columns, one row per iteration:

    iteration, timesteps, episodes, successes, success_rate, mean_reward, train_steps, wall_clock_seconds

`iteration` starts at 1; `timesteps` and `train_steps` are cumulative; `episodes`, `successes`,
`success_rate` and `mean_reward` cover the iteration's own episodes, attributed by completion
time. Rows are flushed as they are written, so an interrupted run leaves a parseable file.
"""

import csv
import logging
import math
import re
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .core import BufferStructure, EventLedger, seed_streams
from .envs import make_env
from .exceptions import DerError, EnvironmentFault
from .learner import Learner, make_train_log
from .replay import PrioritizedBuffer
from .workers import EpisodeLog, Worker, WorkerConfig
from .zones import SuccessPool, initialize_structure

logger = logging.getLogger("django.der.logger")

METRIC_FIELDS = ['iteration', 'timesteps', 'episodes', 'successes', 'success_rate', 'mean_reward',
                 'train_steps', 'wall_clock_seconds']
SUMMARY_FIELDS = ['cell', 'iteration', 'seeds', 'success_rate_mean', 'success_rate_ci',
                  'mean_reward_mean', 'mean_reward_ci']
THRESHOLD_FIELDS = ['cell', 'seed_iterations', 'median', 'der_ratio']
SUCCESS_THRESHOLD = 0.5
RUN_NAME = re.compile(r'^(?P<cell>.+)_seed-(?P<seed>\d+)$')
MAX_CONSECUTIVE_FAULTS = 100


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    timesteps: int
    episodes: int
    successes: int
    mean_reward: float
    train_steps: int
    wall_clock_seconds: float = 0.0

    @property
    def success_rate(self):
        return self.successes / self.episodes if self.episodes else 0.0

    def as_row(self):
        return [self.iteration, self.timesteps, self.episodes, self.successes, repr(self.success_rate),
                repr(self.mean_reward), self.train_steps, f"{self.wall_clock_seconds:.3f}"]


class IterationAccumulator:
    """
    Collects completed episodes until the timestep budget of the current iteration is spent.

    The episode that crosses the budget closes the iteration it completed in.
    """

    def __init__(self, budget):
        self.budget = budget
        self.iteration = 0
        self.total_timesteps = 0
        self.total_episodes = 0
        self._reset_window()

    def _reset_window(self):
        self._timesteps = 0
        self._rewards = []
        self._successes = 0

    def add(self, episode, train_steps, wall_clock=0.0):
        """Adds one episode; returns the IterationRecord it closed, if any."""
        self._timesteps += episode.length
        self._rewards.append(episode.total_reward)
        self._successes += int(episode.success)
        self.total_timesteps += episode.length
        self.total_episodes += 1
        if self._timesteps < self.budget:
            return None
        self.iteration += 1
        record = IterationRecord(self.iteration, self.total_timesteps, len(self._rewards), self._successes,
                                 math.fsum(self._rewards) / len(self._rewards), train_steps, wall_clock)
        self._reset_window()
        return record


class MetricsWriter:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open('w', newline='', encoding='utf-8')
        self._writer = csv.writer(self._handle)
        self._writer.writerow(METRIC_FIELDS)
        self._handle.flush()

    def write(self, record):
        self._writer.writerow(record.as_row())
        self._handle.flush()

    def close(self):
        self._handle.close()


@dataclass(frozen=True)
class RunPaths:
    metrics: Path
    train_log: Path
    checkpoint: Path

    @classmethod
    def for_config(cls, config, output_dir):
        output_dir = Path(output_dir)
        name = config.run_name
        return cls(output_dir / f"{name}.csv", output_dir / f"{name}.train.csv", output_dir / f"{name}.ckpt")


def build_demos(config, env=None):
    """`num_demos` scripted demonstrations, ids `demo-000`, `demo-001`, ..."""
    env = env if env is not None else make_env(config)
    rng = seed_streams(config.seed, 'demos')
    demos = [env.scripted_demo(rng, config.demo_jitter, f"demo-{i:03d}", config.max_episode_steps)
             for i in range(config.num_demos)]
    logger.info(f"Harness: generated {len(demos)} demonstration(s) on {config.env_name}")
    return demos


class ExperimentRunner:
    """
    Runs one ablation cell and writes its metrics, training log and final checkpoint.

    Fields:
        - `config` (ExperimentConfig), `paths` (RunPaths).
        - `buffers`, `pool`, `learner`, `workers`, `ledger`: built by `build`.
        - `records` (list[IterationRecord]): emitted iterations.
    """

    def __init__(self, config, output_dir, demos=None, worker_logs=False):
        self.config = config
        self.paths = RunPaths.for_config(config, output_dir)
        self.demos = demos
        self.worker_logs = worker_logs
        self.ledger = EventLedger()
        self.records = []
        self.buffers = self.pool = self.learner = None
        self.workers = []
        self._episode_logs = []

    def __repr__(self):
        return f"ExperimentRunner({self.config.run_name})"

    def build(self):
        config = self.config
        demos = self.demos
        if demos is None:
            demos = [] if config.structure_type == BufferStructure.NO_DEMOS else build_demos(config)
        self.buffers = [
            PrioritizedBuffer(config.buffer_capacity, config.demo_capacity, config.priority_alpha,
                              config.priority_epsilon, buffer_id=i)
            for i in range(config.num_buffers)
        ]
        self.pool = SuccessPool(config.pool_capacity)
        initialize_structure(config, demos, self.buffers)
        self.learner = Learner(config, self.pool, self.ledger,
                               train_log=make_train_log(self.paths.train_log, config.deterministic))
        # Demonstrations count towards the observation statistics like any other episode.
        if config.structure_type != BufferStructure.NO_DEMOS:
            for demo in demos:
                self.learner.observe(demo)

        self.workers = []
        for i in range(config.num_workers):
            episode_log = None
            if self.worker_logs:
                episode_log = EpisodeLog(self.paths.metrics.with_name(f"{config.run_name}.worker-{i}.csv"))
                self._episode_logs.append(episode_log)
            self.workers.append(Worker(WorkerConfig.from_experiment(config, i), make_env(config), self.learner,
                                       self.buffers, self.pool, config.seed, self.ledger, episode_log))
        return self

    def run(self):
        """Builds, runs until `max_iterations` records are emitted, and saves the checkpoint."""
        if self.learner is None:
            self.build()
        config = self.config
        logger.info(f"Harness: starting {config.run_name} "
                    f"({'deterministic' if config.deterministic else 'threaded'}, {config.max_iterations} iterations)")
        writer = MetricsWriter(self.paths.metrics)
        try:
            if config.deterministic:
                self._run_deterministic(writer)
            else:
                self._run_threaded(writer)
        finally:
            writer.close()
            self.learner.train_log.close()
            for episode_log in self._episode_logs:
                episode_log.close()
            self.learner.save_checkpoint(self.paths.checkpoint)
        logger.info(f"Harness: finished {config.run_name} after {self.learner.iteration} gradient step(s)")
        return self.records

    def _emit(self, writer, record):
        self.records.append(record)
        writer.write(record)
        logger.info(f"Harness: {self.config.run_name} iteration {record.iteration}: "
                    f"success_rate={record.success_rate:.3f} mean_reward={record.mean_reward:.3f}")

    def _run_deterministic(self, writer):
        config = self.config
        accumulator = IterationAccumulator(config.iteration_timesteps)
        turn = faults = 0
        while len(self.records) < config.max_iterations:
            worker = self.workers[turn % len(self.workers)]
            turn += 1
            episode = worker.collect()
            if episode is None:
                faults += 1
                if faults >= MAX_CONSECUTIVE_FAULTS:
                    raise EnvironmentFault(f"{faults} consecutive episodes faulted; giving up")
                continue
            faults = 0
            for _ in range(config.trainer_steps_per_episode):
                self.learner.train_step(self.buffers)
            record = accumulator.add(episode, self.learner.iteration)
            if record is not None:
                self._emit(writer, record)

    def _run_threaded(self, writer):
        config = self.config
        accumulator = IterationAccumulator(config.iteration_timesteps)
        stop = threading.Event()
        ready = threading.Condition()
        pending = []
        completed = [0]

        def on_episode(worker, episode):
            with ready:
                pending.append(episode)
                completed[0] += 1
                ready.notify_all()

        if config.max_iterations == 0:
            return
        started = time.perf_counter()
        threads = [worker.start(stop, on_episode) for worker in self.workers]
        try:
            while len(self.records) < config.max_iterations:
                with ready:
                    while (not pending and not stop.is_set()
                           and self.learner.iteration >= completed[0] * config.trainer_steps_per_episode):
                        ready.wait(timeout=0.1)
                    arrived, pending[:] = list(pending), []
                    allowance = completed[0] * config.trainer_steps_per_episode
                if stop.is_set():
                    failed = [w for w in self.workers if w.error is not None]
                    raise DerError(f"Worker(s) {[w.config.worker_id for w in failed]} crashed") from (
                        failed[0].error if failed else None)
                for episode in arrived:
                    record = accumulator.add(episode, self.learner.iteration, time.perf_counter() - started)
                    if record is not None:
                        self._emit(writer, record)
                        if len(self.records) >= config.max_iterations:
                            break
                if self.learner.iteration < allowance:
                    result = self.learner.train_step(self.buffers)
                    if not result.trained:
                        with ready:
                            ready.wait(timeout=0.05)
        finally:
            stop.set()
            for thread in threads:
                thread.join()


def run_experiment(config, output_dir, demos=None, worker_logs=False):
    return ExperimentRunner(config, output_dir, demos, worker_logs).run()


def ablation_cells(config):
    """The 4 structures x DER on/off x `num_seeds` seeds starting at `config.seed`."""
    from .core import ExperimentConfig

    cells = []
    for structure in BufferStructure:
        for der_enabled in (True, False):
            for seed in range(config.seed, config.seed + config.num_seeds):
                data = config.as_dict()
                data.update(structure_type=structure, der_enabled=der_enabled, seed=seed)
                cells.append(ExperimentConfig.from_mapping(data))
    return cells


@dataclass
class Summary:
    rows: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)


def confidence_half_width(values, confidence=0.95):
    """Half-width of the two-sided t-interval of the mean; 0 for a single value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    sem = values.std(ddof=1) / math.sqrt(values.size)
    return float(stats.t.ppf(0.5 + confidence / 2.0, values.size - 1) * sem)


def read_metrics(path):
    with Path(path).open(newline='', encoding='utf-8') as handle:
        rows = list(csv.DictReader(handle))
    return {
        'iteration': [int(r['iteration']) for r in rows],
        'success_rate': [float(r['success_rate']) for r in rows],
        'mean_reward': [float(r['mean_reward']) for r in rows],
    }


def iterations_to_threshold(metrics, threshold=SUCCESS_THRESHOLD):
    """First iteration whose success rate reaches `threshold`; None when it never does."""
    for iteration, rate in zip(metrics['iteration'], metrics['success_rate']):
        if rate >= threshold:
            return iteration
    return None


def summarize(paths):
    """
    Groups metrics CSVs by cell (the run name without its seed) and aggregates across seeds.

    Seeds with different iteration counts are truncated to the shortest, with a warning.
    """
    cells = defaultdict(dict)
    for path in sorted(Path(p) for p in paths):
        match = RUN_NAME.match(path.stem)
        if match is None:
            logger.warning(f"Harness: {path.name} is not a run metrics file, skipped")
            continue
        cells[match['cell']][int(match['seed'])] = read_metrics(path)

    summary = Summary()
    medians = {}
    for cell in sorted(cells):
        seeds = cells[cell]
        lengths = {len(m['iteration']) for m in seeds.values()}
        length = min(lengths)
        if len(lengths) > 1:
            logger.warning(f"Harness: {cell} seeds have {sorted(lengths)} iterations, truncating to {length}")
        for i in range(length):
            rates = [seeds[s]['success_rate'][i] for s in sorted(seeds)]
            rewards = [seeds[s]['mean_reward'][i] for s in sorted(seeds)]
            summary.rows.append({
                'cell': cell,
                'iteration': i + 1,
                'seeds': len(rates),
                'success_rate_mean': float(np.mean(rates)),
                'success_rate_ci': confidence_half_width(rates),
                'mean_reward_mean': float(np.mean(rewards)),
                'mean_reward_ci': confidence_half_width(rewards),
            })
        reached = [iterations_to_threshold(seeds[s]) for s in sorted(seeds)]
        medians[cell] = float(np.median([math.inf if r is None else r for r in reached]))
        summary.thresholds.append({'cell': cell, 'seed_iterations': reached, 'median': medians[cell]})

    for entry in summary.thresholds:
        entry['der_ratio'] = None
        if entry['cell'].endswith('_der-on'):
            baseline = medians.get(entry['cell'][:-len('on')] + 'off')
            if baseline is not None and math.isfinite(baseline) and baseline > 0:
                entry['der_ratio'] = entry['median'] / baseline
    return summary


def write_summary(summary, output_dir):
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    summary_path = output_dir / 'summary.csv'
    with summary_path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(summary.rows)
    thresholds_path = output_dir / 'thresholds.csv'
    with thresholds_path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(THRESHOLD_FIELDS)
        for entry in summary.thresholds:
            seed_iterations = ';'.join('' if r is None else str(r) for r in entry['seed_iterations'])
            ratio = '' if entry['der_ratio'] is None else repr(entry['der_ratio'])
            writer.writerow([entry['cell'], seed_iterations, repr(entry['median']), ratio])
    return summary_path, thresholds_path


@dataclass(frozen=True)
class EvaluationResult:
    episodes: int
    successes: int
    mean_reward: float

    @property
    def success_rate(self):
        return self.successes / self.episodes if self.episodes else 0.0


def evaluate(config, checkpoint, episodes):
    """Noise-free rollouts of the checkpointed actor; faulted episodes are not counted."""
    learner = Learner(config).load_checkpoint(checkpoint)
    worker = Worker(WorkerConfig(0, 0.0, config.fragment_size, config.max_episode_steps, config.action_max),
                    make_env(config), learner, [], SuccessPool(), config.seed)
    results = [worker.run_episode(explore=False) for _ in range(episodes)]
    results = [e for e in results if e is not None]
    rewards = [e.total_reward for e in results]
    return EvaluationResult(len(results), sum(e.success for e in results),
                            math.fsum(rewards) / len(rewards) if rewards else float('nan'))
