"""
DDPG trainer.

This module defines:
- `PolicySnapshot`: actor parameters and observation filter published to workers.
- `StepResult`: what one trainer iteration did.
- `Learner`: owns actor, critic, their targets and Adam states, the global observation
  filter, and drives priority updates, target copies and zone refreshes.

Critic input is [filtered s, a / a_max]; the actor's tanh output times a_max is the
physical action.
"""

import csv
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ACT_DIM, OBS_DIM, ObservationFilter, seed_streams
from .exceptions import CheckpointError
from .netlib import AdamState, Mlp, ModelParameters, adam_step, hard_update, read_parameters, write_parameters
from .zones import DerSchedule, refresh_zones

logger = logging.getLogger("django.der.logger")

TRAIN_LOG_FIELDS = ['step', 'critic_loss', 'actor_loss', 'steps_per_sec']


@dataclass(frozen=True)
class PolicySnapshot:
    """Consistent copy of the actor and the observation filter at one publication."""

    actor: ModelParameters
    obs_filter: ObservationFilter
    version: int
    action_max: float


@dataclass(frozen=True)
class StepResult:
    buffer_id: int = None
    step: int = 0
    critic_loss: float = float('nan')
    actor_loss: float = float('nan')
    target_updated: bool = False
    refreshed: tuple = ()

    @property
    def trained(self):
        return self.buffer_id is not None


class TrainingLog:
    """CSV training log: step, mean critic loss, mean actor loss, gradient steps per second."""

    def __init__(self, path, clock=None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open('w', newline='', encoding='utf-8')
        self._writer = csv.writer(self._handle)
        self._writer.writerow(TRAIN_LOG_FIELDS)
        self._handle.flush()
        self._clock = clock
        self._last = clock() if clock else None
        self._critic, self._actor = [], []

    def add(self, critic_loss, actor_loss):
        self._critic.append(critic_loss)
        self._actor.append(actor_loss)

    def flush_row(self, step):
        if not self._critic:
            return
        rate = 0.0
        if self._clock:
            now = self._clock()
            rate = len(self._critic) / max(now - self._last, 1e-9)
            self._last = now
        self._writer.writerow([step, repr(float(np.mean(self._critic))), repr(float(np.mean(self._actor))),
                               f"{rate:.3f}"])
        self._handle.flush()
        self._critic, self._actor = [], []

    def close(self):
        self._handle.close()


class Learner:
    """
    Trainer state (LearnerState) and the trainer loop body.

    Fields:
        - `actor`, `critic`, `target_actor`, `target_critic` (Mlp).
        - `actor_adam`, `critic_adam` (AdamState).
        - `obs_filter` (ObservationFilter): global, written through `observe`.
        - `iteration` (int): gradient steps taken.
        - `gamma`, `actor_loss_coeff`, `critic_loss_coeff`, `target_update_freq`: DDPG settings.

    One thread runs `train_step`; workers only touch `observe` and `publish_parameters`,
    both guarded by the learner lock.
    """

    def __init__(self, config, pool=None, ledger=None, rng=None, train_log=None):
        hidden = tuple(config.hidden_sizes)
        self.actor = Mlp((OBS_DIM, *hidden, ACT_DIM), 'tanh', seed_streams(config.seed, 'actor-init'))
        self.critic = Mlp((OBS_DIM + ACT_DIM, *hidden, 1), 'identity', seed_streams(config.seed, 'critic-init'))
        self.target_actor = Mlp.from_parameters(self.actor.parameters(), 'tanh')
        self.target_critic = Mlp.from_parameters(self.critic.parameters(), 'identity')
        self.actor_adam = AdamState(self.actor.parameters().values.size, lr=config.learning_rate)
        self.critic_adam = AdamState(self.critic.parameters().values.size, lr=config.learning_rate)
        self.obs_filter = ObservationFilter()
        self.iteration = 0
        self.target_updates = 0

        self.gamma = config.gamma
        self.actor_loss_coeff = config.actor_loss_coeff
        self.critic_loss_coeff = config.critic_loss_coeff
        self.target_update_freq = config.target_update_freq
        self.batch_size = config.train_batch_size
        self.beta = config.priority_beta
        self.learning_starts = config.learning_starts
        self.action_max = config.action_max
        self.reward_scale = config.reward_scale
        self.log_interval = config.log_interval
        self.schedule = DerSchedule(config.der_refresh_period, config.der_enabled)

        self.pool = pool
        self.ledger = ledger
        self.rng = rng if rng is not None else seed_streams(config.seed, 'trainer')
        self.train_log = train_log
        self._lock = threading.Lock()
        self._version = 0

    def __repr__(self):
        return f"Learner(step={self.iteration}, actor={self.actor}, critic={self.critic})"

    # shared state -----------------------------------------------------------

    def observe(self, episode):
        """Folds an episode's observations into the global filter."""
        rows = [t.s.values for t in episode.transitions]
        rows.append(episode.transitions[-1].s_next.values)
        with self._lock:
            self.obs_filter.update_batch(np.stack(rows))

    def filter_snapshot(self):
        with self._lock:
            return self.obs_filter.snapshot()

    def actor_parameters(self):
        with self._lock:
            return self.actor.parameters()

    def publish_parameters(self):
        """Atomic snapshot of the actor and the filter; the version grows by one per call."""
        with self._lock:
            self._version += 1
            return PolicySnapshot(self.actor.parameters(self._version), self.obs_filter.snapshot(),
                                  self._version, self.action_max)

    # DDPG pieces ------------------------------------------------------------

    def _normalize(self, batch, obs_filter):
        s = obs_filter.apply(batch.obs)
        s_next = obs_filter.apply(batch.next_obs)
        a = batch.actions / self.action_max
        return s, a, s_next

    def _targets(self, rewards, s_next, dones):
        a_next = self.target_actor.forward(s_next)
        q_next = self.target_critic.forward(np.hstack([s_next, a_next]))[:, 0]
        return self.reward_scale * rewards + self.gamma * (1.0 - dones.astype(np.float64)) * q_next

    def td_targets(self, batch, obs_filter=None):
        """y = r + gamma * (1 - done) * Q'(s', pi'(s')) for every transition of the batch."""
        obs_filter = obs_filter if obs_filter is not None else self.filter_snapshot()
        _, _, s_next = self._normalize(batch, obs_filter)
        return self._targets(batch.rewards, s_next, batch.dones)

    def compute_priorities(self, batch, targets, obs_filter=None):
        """|y - Q(s, a)| per transition."""
        obs_filter = obs_filter if obs_filter is not None else self.filter_snapshot()
        s, a, _ = self._normalize(batch, obs_filter)
        return np.abs(targets - self.critic.forward(np.hstack([s, a]))[:, 0])

    def ready_buffers(self, buffers):
        return [b for b in buffers if len(b) >= self.learning_starts]

    def train_step(self, buffers):
        """
        One trainer iteration on a uniformly chosen ready buffer.

        Critic loss is the importance-weighted mean squared TD error; actor loss is
        -mean Q(s, pi(s)). A no-op when no buffer holds `learning_starts` transitions.
        """
        ready = self.ready_buffers(buffers)
        if not ready:
            return StepResult()
        buffer = ready[int(self.rng.integers(len(ready)))]
        batch = buffer.sample(self.batch_size, self.beta, self.rng)
        obs_filter = self.filter_snapshot()
        s, a, s_next = self._normalize(batch, obs_filter)
        size = batch.size

        y = self._targets(batch.rewards, s_next, batch.dones)
        critic_in = np.hstack([s, a])
        q, cache = self.critic.forward(critic_in, return_cache=True)
        td = q[:, 0] - y
        critic_loss = self.critic_loss_coeff * float(np.mean(batch.weights * td ** 2))
        upstream = (self.critic_loss_coeff * 2.0 * batch.weights * td / size)[:, None]
        critic_grad, _ = self.critic.backward(critic_in, upstream, cache)
        critic_values, self.critic_adam = adam_step(self.critic.parameters().values, critic_grad, self.critic_adam)
        critic_params = ModelParameters(critic_values, self.critic.shapes)
        with self._lock:
            self.critic.load_parameters(critic_params)

        # Deterministic policy gradient through the updated critic.
        a_pi, actor_cache = self.actor.forward(s, return_cache=True)
        policy_in = np.hstack([s, a_pi])
        q_pi, policy_cache = self.critic.forward(policy_in, return_cache=True)
        actor_loss = -self.actor_loss_coeff * float(np.mean(q_pi))
        _, input_grad = self.critic.backward(policy_in, np.full((size, 1), -self.actor_loss_coeff / size),
                                             policy_cache)
        actor_grad, _ = self.actor.backward(s, input_grad[:, OBS_DIM:], actor_cache)
        actor_values, self.actor_adam = adam_step(self.actor.parameters().values, actor_grad, self.actor_adam)
        actor_params = ModelParameters(actor_values, self.actor.shapes)
        with self._lock:
            self.actor.load_parameters(actor_params)
            self.iteration += 1
            step = self.iteration

        buffer.update_priorities(batch.indices, td, batch.generations)

        target_updated = step % self.target_update_freq == 0
        if target_updated:
            self.update_targets()
        refreshed = ()
        if self.pool is not None and self.schedule.due(step):
            refreshed = tuple(refresh_zones(self.pool, buffers, self.rng, self.ledger, step))

        if self.ledger is not None:
            self.ledger.record('train_step', step=step, buffer=buffer.buffer_id)
        if self.train_log is not None:
            self.train_log.add(critic_loss, actor_loss)
            if step % self.log_interval == 0:
                self.train_log.flush_row(step)
        return StepResult(buffer.buffer_id, step, critic_loss, actor_loss, target_updated, refreshed)

    def update_targets(self):
        self.target_actor.load_parameters(hard_update(self.target_actor.parameters(), self.actor.parameters()))
        self.target_critic.load_parameters(hard_update(self.target_critic.parameters(), self.critic.parameters()))
        self.target_updates += 1
        if self.ledger is not None:
            self.ledger.record('target_update', step=self.iteration)
        logger.info(f"Learner: target networks hard-copied at step {self.iteration}")

    # checkpoints ------------------------------------------------------------

    def _filter_parameters(self):
        state = self.obs_filter.state()
        return ModelParameters.flatten([np.array([float(state['count'])]), state['mean'], state['m2']])

    def save_checkpoint(self, path):
        with self._lock:
            named = {
                'actor': self.actor.parameters(),
                'critic': self.critic.parameters(),
                'target_actor': self.target_actor.parameters(),
                'target_critic': self.target_critic.parameters(),
                'obs_filter': self._filter_parameters(),
            }
        write_parameters(path, named)
        logger.info(f"Learner: checkpoint written to {path} at step {self.iteration}")
        return path

    def load_checkpoint(self, path):
        named = read_parameters(path)
        missing = {'actor', 'critic', 'target_actor', 'target_critic', 'obs_filter'} - set(named)
        if missing:
            raise CheckpointError(f"{path} lacks {sorted(missing)}")
        try:
            with self._lock:
                self.actor.load_parameters(named['actor'])
                self.critic.load_parameters(named['critic'])
                self.target_actor.load_parameters(named['target_actor'])
                self.target_critic.load_parameters(named['target_critic'])
                count, mean, m2 = named['obs_filter'].unflatten()
                self.obs_filter = ObservationFilter(OBS_DIM, int(count[0]), mean, m2)
        except ValueError as exc:
            raise CheckpointError(f"{path} does not fit this learner: {exc}") from exc
        return self


def make_train_log(path, deterministic):
    """Training log whose steps/sec column is left at 0 in deterministic mode."""
    return TrainingLog(path, clock=None if deterministic else time.perf_counter)
