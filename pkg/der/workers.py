"""
Rollout workers.

This module defines:
- `WorkerConfig`: per-worker exploration and shipping settings.
- `ladder_sigma`: the per-worker noise scale when the noise ladder is enabled.
- `Worker`: pulls a policy snapshot, runs one episode with Gaussian exploration noise,
  ships it to a randomly chosen buffer and reports successes to the pool.
"""

import csv
import logging
import threading
from dataclasses import dataclass
from pathlib import Path

from .core import ACT_DIM, Action, Episode, Transition, seed_streams
from .exceptions import EnvironmentFault
from .netlib import Mlp

logger = logging.getLogger("django.der.logger")


def ladder_sigma(base, index, count):
    """sigma * 0.4 ** (7 i / (n - 1)): worker 0 explores the most, the last worker the least."""
    if count <= 1:
        return base
    return base * 0.4 ** (7.0 * index / (count - 1))


class EpisodeLog:
    """Per-worker CSV: episode id, length, return, success. Thread-confined to its worker."""

    FIELDS = ['episode', 'length', 'total_reward', 'success']

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open('w', newline='', encoding='utf-8')
        self._writer = csv.writer(self._handle)
        self._writer.writerow(self.FIELDS)

    def write(self, episode):
        self._writer.writerow([episode.episode_id, episode.length, repr(episode.total_reward), int(episode.success)])
        self._handle.flush()

    def close(self):
        self._handle.close()


@dataclass(frozen=True)
class WorkerConfig:
    worker_id: int
    noise_sigma: float = 0.005
    fragment_size: int = 50
    max_episode_steps: int = 300
    action_max: float = 0.05

    @classmethod
    def from_experiment(cls, config, worker_id):
        sigma = config.noise_sigma
        if config.noise_ladder:
            sigma = ladder_sigma(sigma, worker_id, config.num_workers)
        return cls(worker_id, sigma, config.fragment_size, config.max_episode_steps, config.action_max)


class Worker:
    """
    One Ape-X actor.

    Fields:
        - `config` (WorkerConfig), `env` (InsertionEnv).
        - `learner`: source of policy snapshots and sink of filter updates.
        - `buffers` (list[PrioritizedBuffer]), `pool` (SuccessPool).
        - `rng`: the worker's own stream, keyed by (seed, worker id).

    Counters `episodes_run`, `successes`, `transitions_shipped` and `faults` are read by the
    harness for its conservation checks.
    """

    def __init__(self, config, env, learner, buffers, pool, seed, ledger=None, episode_log=None):
        self.config = config
        self.env = env
        self.learner = learner
        self.buffers = buffers
        self.pool = pool
        self.ledger = ledger
        self.rng = seed_streams(seed, f"worker-{config.worker_id}")
        self.snapshot = None
        self._actor = None

        self.episodes_run = 0
        self.successes = 0
        self.transitions_shipped = 0
        self.faults = 0
        self.episode_log = episode_log
        self.error = None

    def __repr__(self):
        return f"Worker(id={self.config.worker_id}, sigma={self.config.noise_sigma:.3g})"

    def sync(self):
        self.snapshot = self.learner.publish_parameters()
        self._actor = Mlp.from_parameters(self.snapshot.actor, 'tanh')
        return self.snapshot

    def act(self, obs, explore=True):
        """Actor output scaled to a_max, plus N(0, sigma) per component, clamped."""
        normalized = self.snapshot.obs_filter.apply(obs.values)
        command = self._actor.forward(normalized) * self.config.action_max
        if explore:
            command = command + self.rng.normal(0.0, self.config.noise_sigma, size=ACT_DIM)
        return Action(command, self.config.action_max)

    def run_episode(self, explore=True):
        """
        Resets the environment and rolls out one episode with the latest snapshot.

        The episode ends on success, on a workspace failure or after `max_episode_steps`
        steps. Returns None when the environment faults; the episode is then discarded.
        """
        self.sync()
        episode_id = f"w{self.config.worker_id}-e{self.episodes_run}"
        try:
            state = self.env.reset(self.rng)
            obs = self.env.observe(state)
            metadata = {'variant': str(self.env.config.variant), 'hole_x': state.hole_x,
                        'hole_theta': state.hole_theta, 'policy_version': self.snapshot.version}
            transitions = []
            for step in range(self.config.max_episode_steps):
                action = self.act(obs, explore)
                result = self.env.step(state, action)
                done = result.done or step == self.config.max_episode_steps - 1
                transitions.append(Transition(obs, action, result.observation, result.reward, done, result.success))
                state, obs = result.state, result.observation
                if done:
                    break
        except EnvironmentFault:
            self.faults += 1
            logger.error(f"Worker {self.config.worker_id}: episode {episode_id} discarded", exc_info=True)
            return None
        finally:
            self.episodes_run += 1
        return Episode(transitions, episode_id, metadata, max_length=self.config.max_episode_steps)

    def ship_fragments(self, episode):
        """
        Sends the whole episode to one randomly chosen buffer, `fragment_size` transitions at
        a time, folds its observations into the global filter, and pools it when it succeeded.

        Returns the id of the receiving buffer.
        """
        buffer = self.buffers[int(self.rng.integers(len(self.buffers)))]
        for fragment in episode.fragments(self.config.fragment_size):
            buffer.insert_main(fragment)
            if self.ledger is not None:
                self.ledger.record('fragment', worker=self.config.worker_id, episode=episode.episode_id,
                                   buffer=buffer.buffer_id, size=len(fragment))
        self.transitions_shipped += episode.length
        self.learner.observe(episode)
        if episode.success:
            self.pool.add(episode)
            self.successes += 1
            if self.ledger is not None:
                self.ledger.record('pool_add', worker=self.config.worker_id, episode=episode.episode_id)
        if self.episode_log is not None:
            self.episode_log.write(episode)
        return buffer.buffer_id

    def collect(self):
        """Runs and ships one episode; returns it, or None after an environment fault."""
        episode = self.run_episode()
        if episode is not None:
            self.ship_fragments(episode)
        return episode

    def run(self, stop, on_episode=None):
        """Thread body: collects episodes until `stop` is set."""
        logger.info(f"Worker {self.config.worker_id}: started, sigma={self.config.noise_sigma:.3g}")
        try:
            while not stop.is_set():
                episode = self.collect()
                if episode is not None and on_episode is not None:
                    on_episode(self, episode)
        except Exception as exc:
            self.error = exc
            logger.error(f"Worker {self.config.worker_id}: crashed, stopping the run", exc_info=True)
            stop.set()
        logger.info(f"Worker {self.config.worker_id}: stopped after {self.episodes_run} episode(s)")

    def start(self, stop, on_episode=None):
        thread = threading.Thread(target=self.run, args=(stop, on_episode),
                                  name=f"der-worker-{self.config.worker_id}", daemon=True)
        thread.start()
        return thread
