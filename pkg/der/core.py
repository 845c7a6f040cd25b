"""
Domain types shared by every part of the trainer.

This module defines:
- `Observation`: 13-dim pose + wrench reading of the moving piece.
- `Action`: 6-dim Cartesian twist, clamped to the action bound.
- `Transition` and `Episode`: the units stored in replay buffers and the success pool.
- `ObservationFilter`: running mean/std filter (Welford) applied to observations.
- `ExperimentConfig`: declarative description of one ablation cell.
- `EventLedger`: optional record of worker/trainer events.
- `seed_streams`: reproducible random streams keyed by (seed, role).
"""

import dataclasses
import hashlib
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import environ
import numpy as np
from django.core.exceptions import ImproperlyConfigured
from django.db import models

from .exceptions import InvalidVector, RejectedEpisode

logger = logging.getLogger("django.der.logger")

OBS_DIM = 13
ACT_DIM = 6
DEFAULT_ACTION_MAX = 0.05

# Observation layout: position, quaternion (qx, qy, qz, qw), force, torque.
POSITION = slice(0, 3)
ORIENTATION = slice(3, 7)
FORCE = slice(7, 10)
TORQUE = slice(10, 13)


class BufferStructure(models.TextChoices):
    """The four ways demonstrations seed the replay buffers."""
    NO_DEMOS = 'NoDemos', 'No demonstrations in any buffer'
    ONE_SHOT_ALL = 'OneShotAll', 'Same one-shot demonstration in all buffers'
    ALL_SHOTS_ALL = 'AllShotsAll', 'All demonstrations in all buffers'
    ONE_SHOT_EACH = 'OneShotEach', 'Each buffer with a different one-shot demonstration'


def _as_vector(values, size, what):
    vector = np.array(values, dtype=np.float64).reshape(-1)
    if vector.shape != (size,):
        raise InvalidVector(f"{what} must have {size} entries, got {vector.size}.")
    if not np.all(np.isfinite(vector)):
        raise InvalidVector(f"{what} has non-finite entries: {vector.tolist()}")
    return vector


@dataclass(frozen=True, eq=False)
class Observation:
    """
    One observation of the moving piece.

    Fields:
        - `values` (float64[13]): position (m), unit quaternion, force (N), torque (N·m).

    The quaternion is normalized on construction; an already normalized one is kept bit-exact.
    """

    values: np.ndarray

    def __post_init__(self):
        values = _as_vector(self.values, OBS_DIM, "Observation")
        norm = float(np.linalg.norm(values[ORIENTATION]))
        if norm == 0.0:
            raise InvalidVector("Observation quaternion has zero norm.")
        if abs(norm - 1.0) > 1e-12:
            values[ORIENTATION] /= norm
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def from_parts(cls, position, orientation, wrench):
        return cls(np.concatenate([position, orientation, wrench]))

    @property
    def position(self):
        return self.values[POSITION]

    @property
    def orientation(self):
        return self.values[ORIENTATION]

    @property
    def wrench(self):
        return self.values[7:13]

    def to_list(self):
        return self.values.tolist()

    def __eq__(self, other):
        return isinstance(other, Observation) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class Action:
    """
    Cartesian twist command: linear velocity (m/s) then angular velocity (rad/s).

    Each component is clamped to [-a_max, a_max] on construction.
    """

    values: np.ndarray
    a_max: float = field(default=DEFAULT_ACTION_MAX)

    def __post_init__(self):
        values = np.clip(_as_vector(self.values, ACT_DIM, "Action"), -self.a_max, self.a_max)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def linear_velocity(self):
        return self.values[0:3]

    @property
    def angular_velocity(self):
        return self.values[3:6]

    def to_list(self):
        return self.values.tolist()

    def __eq__(self, other):
        return isinstance(other, Action) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class Transition:
    """One (s, a, s', r, done, success) step."""

    s: Observation
    a: Action
    s_next: Observation
    r: float
    done: bool
    success: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'done', bool(self.done))
        object.__setattr__(self, 'success', bool(self.success))
        if not math.isfinite(self.r):
            raise InvalidVector(f"Transition reward is not finite: {self.r}")
        if self.success and not self.done:
            raise ValueError("A successful transition must also be terminal.")


@dataclass(frozen=True)
class Episode:
    """
    Ordered transitions of one rollout or demonstration.

    Fields:
        - `transitions` (tuple[Transition]): at least one step, in time order.
        - `episode_id` (str): label used by logs, the pool export and the ledger.
        - `metadata` (dict): environment context needed to replay the episode (hole frame, variant).
        - `max_length` (int | None): step limit T_max the episode was collected under; checked on creation.
    """

    transitions: tuple
    episode_id: str = ""
    metadata: dict = field(default_factory=dict)
    max_length: int = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'transitions', tuple(self.transitions))
        if not self.transitions:
            raise ValueError("An episode holds at least one transition.")
        if self.max_length is not None:
            self.check_length(self.max_length)

    def check_length(self, limit):
        if self.length > limit:
            raise RejectedEpisode(
                f"Episode {self.episode_id!r} has {self.length} transitions, more than the {limit}-step limit."
            )
        return self

    @property
    def success(self):
        return self.transitions[-1].success

    @property
    def total_reward(self):
        return math.fsum(t.r for t in self.transitions)

    @property
    def length(self):
        return len(self.transitions)

    def fragments(self, size):
        """Splits the episode into consecutive chunks of at most `size` transitions."""
        return [self.transitions[i:i + size] for i in range(0, self.length, size)]


class ObservationFilter:
    """
    Running mean / standard deviation of observations (Welford form).

    Fields:
        - `count` (int): observations folded in so far.
        - `mean` (float64[dim]): running mean.
        - `m2` (float64[dim]): sum of squared deviations from the mean.

    The sample variance m2 / (count - 1) is used; below two samples the filter only centers.
    """

    def __init__(self, dim=OBS_DIM, count=0, mean=None, m2=None):
        self.dim = dim
        self.count = int(count)
        self.mean = np.zeros(dim) if mean is None else np.array(mean, dtype=np.float64)
        self.m2 = np.zeros(dim) if m2 is None else np.array(m2, dtype=np.float64)

    def update(self, obs):
        x = _as_vector(getattr(obs, 'values', obs), self.dim, "Filtered observation")
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)
        return self

    def update_batch(self, rows):
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, self.dim)
        if not np.all(np.isfinite(rows)):
            raise InvalidVector("Filtered observation batch has non-finite entries.")
        if len(rows) == 0:
            return self
        batch_mean = rows.mean(axis=0)
        batch = ObservationFilter(self.dim, len(rows), batch_mean, ((rows - batch_mean) ** 2).sum(axis=0))
        return self.merge(batch)

    def merge(self, other):
        """Folds another filter's statistics into this one (parallel variance combination)."""
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / total)
        self.m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / total)
        self.count = total
        return self

    @property
    def variance(self):
        if self.count < 2:
            return np.ones(self.dim)
        return self.m2 / (self.count - 1)

    @property
    def std(self):
        return np.sqrt(self.variance)

    def apply(self, obs):
        """Returns (obs - mean) / max(std, 1e-8); works on one observation or on rows."""
        x = np.asarray(getattr(obs, 'values', obs), dtype=np.float64)
        return (x - self.mean) / np.maximum(self.std, 1e-8)

    def snapshot(self):
        return ObservationFilter(self.dim, self.count, self.mean.copy(), self.m2.copy())

    def state(self):
        return {'count': self.count, 'mean': self.mean.copy(), 'm2': self.m2.copy()}

    def __repr__(self):
        return f"ObservationFilter(count={self.count}, mean={self.mean.round(6).tolist()})"


def filter_update(obs_filter, obs):
    return obs_filter.update(obs)


def filter_apply(obs_filter, obs):
    return obs_filter.apply(obs)


def seed_streams(seed, role):
    """
    Returns a numpy Generator keyed by (seed, role).

    The same key always yields the same sequence; different roles yield independent streams.
    """
    digest = hashlib.sha256(str(role).encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


@dataclass(frozen=True)
class LedgerEvent:
    kind: str
    detail: dict


class EventLedger:
    """Append-only, thread-safe record of worker and trainer events."""

    def __init__(self):
        self._events = []
        self._lock = threading.Lock()

    def record(self, kind, **detail):
        with self._lock:
            self._events.append(LedgerEvent(kind, detail))

    def events(self, kind=None):
        with self._lock:
            return [e for e in self._events if kind is None or e.kind == kind]

    def __len__(self):
        with self._lock:
            return len(self._events)


def _read_experiment_file(path):
    """Parses a key-value experiment file into a private mapping, leaving os.environ alone."""
    path = Path(path)
    if not path.is_file():
        raise ImproperlyConfigured(f"Experiment file {path} does not exist.")
    file_env = type("ExperimentFileEnv", (environ.Env,), {'ENVIRON': {}})
    file_env.read_env(str(path), overwrite=True)
    return file_env()


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Full description of one ablation cell.

    Fields mirror `settings.EXPERIMENT_DEFAULTS`; `env_overrides` holds the `ENV_*` keys
    that adjust the insertion environment. Instances are built through
    `der.serializers.ExperimentConfigSerializer`, which enforces every invariant.
    """

    structure_type: str = BufferStructure.NO_DEMOS
    der_enabled: bool = True
    num_buffers: int = 6
    num_workers: int = 5
    num_demos: int = 6
    env_name: str = 'peg_in_hole'
    seed: int = 0
    num_seeds: int = 3
    iteration_timesteps: int = 10_000
    max_iterations: int = 150
    deterministic: bool = False

    buffer_capacity: int = 20_000
    demo_fraction: float = 0.01
    priority_alpha: float = 0.5
    priority_beta: float = 0.4
    priority_epsilon: float = 1e-6
    train_batch_size: int = 512
    learning_starts: int = 1_000

    der_refresh_period: int = 500
    pool_capacity: int = 100

    learning_rate: float = 1e-3
    actor_loss_coeff: float = 0.1
    critic_loss_coeff: float = 1.0
    gamma: float = 0.99
    target_update_freq: int = 2_000
    hidden_sizes: tuple = (64, 64)
    reward_scale: float = 1.0
    trainer_steps_per_episode: int = 10
    log_interval: int = 100

    action_max: float = DEFAULT_ACTION_MAX
    noise_sigma: float = 0.005
    noise_ladder: bool = False
    fragment_size: int = 50
    max_episode_steps: int = 300
    demo_jitter: float = 0.001

    env_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data=None, **overrides):
        """Validates `data` layered over the settings defaults and returns a config."""
        from django.conf import settings

        from .serializers import ExperimentConfigSerializer

        merged = dict(settings.EXPERIMENT_DEFAULTS)
        merged.update(data or {})
        merged.update({k: v for k, v in overrides.items() if v is not None})
        serializer = ExperimentConfigSerializer(data=merged)
        serializer.is_valid(raise_exception=True)
        return serializer.to_config()

    @classmethod
    def from_env_file(cls, path, **overrides):
        """Reads an experiment file (`KEY=value` lines); `overrides` win over the file."""
        from .serializers import ExperimentConfigSerializer

        file_env = _read_experiment_file(path)
        data = {}
        env_overrides = {}
        list_fields = ExperimentConfigSerializer.LIST_FIELDS
        for key, raw in file_env.ENVIRON.items():
            if key.startswith('ENV_'):
                env_overrides[key[len('ENV_'):].lower()] = raw
            elif key.lower() in list_fields:
                data[key.lower()] = file_env.list(key, cast=int)
            else:
                data[key.lower()] = raw
        if env_overrides:
            data['env_overrides'] = env_overrides
        logger.info(f"ExperimentConfig: read {len(data)} keys from {path}")
        return cls.from_mapping(data, **overrides)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        return dataclasses.asdict(self)

    @property
    def demo_capacity(self):
        return int(round(self.buffer_capacity * self.demo_fraction))

    @property
    def run_name(self):
        der = 'on' if self.der_enabled else 'off'
        return f"{self.env_name}_{self.structure_type}_der-{der}_seed-{self.seed}"
