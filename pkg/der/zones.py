"""
Dynamic Experience Replay coordination.

This module defines:
- `SuccessPool`: bounded FIFO of successful episodes reported by workers.
- `DerSchedule`: how often the trainer refreshes the demonstration zones.
- `initialize_structure`: seeds the buffers' zones according to the buffer structure.
- `refresh_zones`: every buffer draws one pooled episode into its zone.
"""

import logging
import threading
from collections import deque
from dataclasses import dataclass

from .core import BufferStructure
from .exceptions import InsufficientDemonstrations, RejectedEpisode

logger = logging.getLogger("django.der.logger")


class SuccessPool:
    """
    Successful episodes, oldest evicted first once `capacity` is reached.

    Safe for many producers; every method takes the pool lock.
    """

    def __init__(self, capacity=100):
        if capacity < 1:
            raise ValueError("The success pool holds at least one episode.")
        self.capacity = capacity
        self._episodes = deque(maxlen=capacity)
        self._lock = threading.Lock()
        self.added_total = 0

    def __len__(self):
        with self._lock:
            return len(self._episodes)

    def add(self, episode):
        if not episode.success:
            raise RejectedEpisode(f"Episode {episode.episode_id!r} did not succeed; the pool only keeps successes.")
        with self._lock:
            self._episodes.append(episode)
            self.added_total += 1

    def sample(self, rng):
        """A uniformly chosen episode, or None when the pool is empty."""
        with self._lock:
            if not self._episodes:
                return None
            return self._episodes[int(rng.integers(len(self._episodes)))]

    def episodes(self):
        with self._lock:
            return list(self._episodes)

    def export_table(self):
        """Debug table: episode id, length, total reward."""
        rows = [f"{'episode':<16} {'length':>6} {'total_reward':>14}"]
        for episode in self.episodes():
            rows.append(f"{episode.episode_id:<16} {episode.length:>6} {episode.total_reward:>14.4f}")
        return '\n'.join(rows)


def pool_add(pool, episode):
    pool.add(episode)


@dataclass(frozen=True)
class DerSchedule:
    """Zone refresh every `period` trainer iterations, when `enabled`."""

    period: int = 500
    enabled: bool = True

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("The refresh period is at least one trainer iteration.")

    def due(self, iteration):
        return self.enabled and iteration > 0 and iteration % self.period == 0


def initialize_structure(config, demos, buffers):
    """
    Loads demonstrations into the buffers' zones according to `config.structure_type`.

    - NoDemos: nothing is loaded.
    - OneShotAll: demos[0] goes into every buffer.
    - AllShotsAll: every demo goes into every buffer.
    - OneShotEach: demos[i] goes into buffer i.

    Demos are pinned at top priority when DER is off, and left unpinned (FIFO) when it is on.
    A demo longer than `max_episode_steps` raises `RejectedEpisode`.
    """
    structure = BufferStructure(config.structure_type)
    pinned = not config.der_enabled
    required = {
        BufferStructure.NO_DEMOS: 0,
        BufferStructure.ONE_SHOT_ALL: 1,
        BufferStructure.ALL_SHOTS_ALL: 1,
        BufferStructure.ONE_SHOT_EACH: len(buffers),
    }[structure]
    if len(demos) < required:
        raise InsufficientDemonstrations(
            f"{structure.label} needs {required} demonstration(s), {len(demos)} provided."
        )
    for demo in demos:
        demo.check_length(config.max_episode_steps)

    for index, buffer in enumerate(buffers):
        if structure == BufferStructure.ONE_SHOT_ALL:
            assigned = demos[:1]
        elif structure == BufferStructure.ALL_SHOTS_ALL:
            assigned = demos
        elif structure == BufferStructure.ONE_SHOT_EACH:
            assigned = [demos[index]]
        else:
            assigned = []
        for demo in assigned:
            buffer.load_demo(demo, pinned=pinned)
    logger.info(
        f"DER: {structure} initialized over {len(buffers)} buffer(s), "
        f"zone sizes {[b.demo_size for b in buffers]}, pinned={pinned}"
    )


def refresh_zones(pool, buffers, rng, ledger=None, iteration=None):
    """
    Each buffer independently draws one pooled episode (with replacement across buffers)
    and appends it to its zone at max priority. An empty pool leaves every zone unchanged.

    Returns the (buffer_id, episode_id) pairs loaded.
    """
    loaded = []
    for buffer in buffers:
        episode = pool.sample(rng)
        if episode is None:
            break
        buffer.load_demo(episode, pinned=False)
        loaded.append((buffer.buffer_id, episode.episode_id))
        if ledger is not None:
            ledger.record('refresh', iteration=iteration, buffer=buffer.buffer_id, episode=episode.episode_id)
    if loaded:
        logger.debug(f"DER: refreshed {len(loaded)} zone(s) from a pool of {len(pool)}")
    return loaded
