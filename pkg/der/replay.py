"""
Prioritized replay with a reserved demonstration zone.

This module defines:
- `SumTree`: array-backed binary tree whose parents hold the sum of their children.
- `SampleBatch`: a prioritized sample with importance weights.
- `PrioritizedBuffer`: slots [0, C) form the demonstration zone, slots [C, N) the main region.

Main-region inserts cycle through the main region only. The zone is a FIFO of its own:
loading more than it holds discards the oldest zone transitions. Pinned zone slots (demos
kept without Dynamic Experience Replay) always carry the buffer's maximum priority.
"""

import logging
import threading
from dataclasses import dataclass

import numpy as np

from .core import ACT_DIM, OBS_DIM
from .exceptions import NotReadyToTrain

logger = logging.getLogger("django.der.logger")

DEMO_REGION = 'demo'
MAIN_REGION = 'main'


class SumTree:
    """
    Sum tree over `capacity` leaves.

    Leaves live at [size, size + capacity) of the node array where `size` is the next power
    of two; node i has children 2i and 2i + 1 and node 1 is the root.
    """

    def __init__(self, capacity):
        self.capacity = capacity
        self.size = 1
        while self.size < capacity:
            self.size *= 2
        self.nodes = np.zeros(2 * self.size)

    @property
    def total(self):
        return float(self.nodes[1])

    def leaves(self):
        return self.nodes[self.size:self.size + self.capacity]

    def update(self, indices, values):
        """Sets the leaves at `indices` and recomputes their ancestors level by level."""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            return
        nodes = indices + self.size
        self.nodes[nodes] = values
        parents = np.unique(nodes // 2)
        while parents[0] >= 1:
            self.nodes[parents] = self.nodes[2 * parents] + self.nodes[2 * parents + 1]
            if parents[0] == 1:
                break
            parents = np.unique(parents // 2)

    def find(self, values):
        """Leaf indices whose cumulative-sum interval contains each of `values`."""
        values = np.array(values, dtype=np.float64)
        idx = np.ones(values.shape, dtype=np.int64)
        while idx[0] < self.size:
            left = 2 * idx
            left_sum = self.nodes[left]
            go_right = (values >= left_sum) & (self.nodes[left + 1] > 0.0)
            values = np.where(go_right, values - left_sum, values)
            idx = left + go_right
        return idx - self.size


@dataclass(frozen=True)
class SampleBatch:
    """
    Transitions drawn from one buffer.

    Fields:
        - `obs`, `actions`, `rewards`, `next_obs`, `dones`: batch arrays (raw, unfiltered observations).
        - `indices` (int[B]): source slots; `generations` (int[B]): slot generations at sampling time.
        - `weights` (float[B]): importance weights, normalized so the largest is 1.
        - `buffer_id` (int): the buffer the batch came from.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    indices: np.ndarray
    generations: np.ndarray
    weights: np.ndarray
    buffer_id: int

    @property
    def size(self):
        return len(self.indices)


class PrioritizedBuffer:
    """
    Prioritized replay buffer with a demonstration zone.

    Fields:
        - `capacity` (N) and `demo_capacity` (C): total slots and zone slots.
        - `alpha`: priority exponent; the tree stores priority ** alpha.
        - `epsilon`: floor added to absolute TD errors.
        - `max_priority`: running maximum of every assigned priority, 1.0 for an empty buffer.

    Every public method runs under the buffer's lock.
    """

    def __init__(self, capacity, demo_capacity, alpha=0.5, epsilon=1e-6, buffer_id=0):
        if not 0 <= demo_capacity < capacity:
            raise ValueError(f"Demonstration zone of {demo_capacity} does not fit a buffer of {capacity}.")
        self.capacity = capacity
        self.demo_capacity = demo_capacity
        self.main_capacity = capacity - demo_capacity
        self.alpha = alpha
        self.epsilon = epsilon
        self.buffer_id = buffer_id
        self.max_priority = 1.0

        self.obs = np.zeros((capacity, OBS_DIM))
        self.actions = np.zeros((capacity, ACT_DIM))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, OBS_DIM))
        self.dones = np.zeros(capacity, dtype=bool)
        self.priorities = np.zeros(capacity)
        self.occupied = np.zeros(capacity, dtype=bool)
        self.pinned = np.zeros(capacity, dtype=bool)
        self.generations = np.zeros(capacity, dtype=np.int64)
        self.tree = SumTree(capacity)

        self._main_cursor = 0
        self._demo_cursor = 0
        self.inserted_total = 0
        self.stale_updates = 0
        self._lock = threading.RLock()

    def __repr__(self):
        return (f"PrioritizedBuffer(id={self.buffer_id}, main={self.main_size}/{self.main_capacity}, "
                f"demo={self.demo_size}/{self.demo_capacity})")

    def __len__(self):
        with self._lock:
            return int(self.occupied.sum())

    @property
    def main_size(self):
        return int(self.occupied[self.demo_capacity:].sum())

    @property
    def demo_size(self):
        return int(self.occupied[:self.demo_capacity].sum())

    def _write(self, slot, transition, priority, pinned):
        self.obs[slot] = transition.s.values
        self.actions[slot] = transition.a.values
        self.rewards[slot] = transition.r
        self.next_obs[slot] = transition.s_next.values
        self.dones[slot] = transition.done
        self.occupied[slot] = True
        self.pinned[slot] = pinned
        self.priorities[slot] = priority
        self.generations[slot] += 1

    def _set_priorities(self, slots, priorities):
        self.priorities[slots] = priorities
        self.tree.update(slots, np.power(priorities, self.alpha))

    def _raise_max(self, priority):
        if priority > self.max_priority:
            self.max_priority = float(priority)
            self._snap_pinned()

    def _snap_pinned(self):
        slots = np.flatnonzero(self.pinned)
        if slots.size:
            self._set_priorities(slots, np.full(slots.size, self.max_priority))

    def insert_main(self, transitions):
        """Appends transitions to the main region at the current max priority."""
        with self._lock:
            slots = []
            for transition in transitions:
                slot = self.demo_capacity + self._main_cursor
                self._main_cursor = (self._main_cursor + 1) % self.main_capacity
                self._write(slot, transition, self.max_priority, pinned=False)
                slots.append(slot)
            if slots:
                slots = np.array(slots)
                self._set_priorities(slots, self.priorities[slots])
            self.inserted_total += len(slots)
            return len(slots)

    def load_demo(self, episode, pinned=False):
        """
        Appends an episode to the demonstration zone FIFO.

        Pinned transitions keep the buffer's max priority for the rest of the run. An episode
        longer than the zone keeps only its most recent `demo_capacity` transitions.
        """
        with self._lock:
            transitions = list(episode.transitions)
            if len(transitions) > self.demo_capacity:
                logger.warning(
                    f"PrioritizedBuffer {self.buffer_id}: demo {episode.episode_id!r} has {len(transitions)} "
                    f"transitions, zone holds {self.demo_capacity}; keeping the most recent ones"
                )
                transitions = transitions[len(transitions) - self.demo_capacity:] if self.demo_capacity else []
            slots = []
            for transition in transitions:
                slot = self._demo_cursor
                self._demo_cursor = (self._demo_cursor + 1) % self.demo_capacity
                self._write(slot, transition, self.max_priority, pinned=pinned)
                slots.append(slot)
            if slots:
                slots = np.array(slots)
                self._set_priorities(slots, self.priorities[slots])
            return len(slots)

    def sample(self, batch_size, beta, rng):
        """
        Draws `batch_size` slots with probability p ** alpha / sum(p ** alpha), with replacement.

        Raises `NotReadyToTrain` when the buffer is empty.
        """
        with self._lock:
            total = self.tree.total
            occupied = int(self.occupied.sum())
            if occupied == 0 or total <= 0.0:
                raise NotReadyToTrain(f"Buffer {self.buffer_id} is empty.")
            draws = rng.uniform(0.0, total, size=batch_size)
            indices = self.tree.find(draws)
            probabilities = self.tree.nodes[indices + self.tree.size] / total
            if beta == 0.0:
                weights = np.ones(batch_size)
            else:
                weights = np.power(occupied * probabilities, -beta)
                weights = weights / weights.max()
            return SampleBatch(
                obs=self.obs[indices].copy(),
                actions=self.actions[indices].copy(),
                rewards=self.rewards[indices].copy(),
                next_obs=self.next_obs[indices].copy(),
                dones=self.dones[indices].copy(),
                indices=indices,
                generations=self.generations[indices].copy(),
                weights=weights,
                buffer_id=self.buffer_id,
            )

    def update_priorities(self, indices, td_errors, generations=None):
        """
        Sets priority |td| + epsilon for each sampled slot.

        Pinned slots keep the max priority. Slots overwritten since sampling (generation changed)
        are skipped. Returns the number of slots updated.
        """
        with self._lock:
            indices = np.asarray(indices, dtype=np.int64)
            priorities = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.epsilon
            keep = ~self.pinned[indices]
            if generations is not None:
                fresh = self.generations[indices] == np.asarray(generations)
                self.stale_updates += int((~fresh).sum())
                keep &= fresh
            indices, priorities = indices[keep], priorities[keep]
            if indices.size:
                self._set_priorities(indices, priorities)
                self._raise_max(float(priorities.max()))
            return int(indices.size)

    def priority(self, slot):
        with self._lock:
            return float(self.priorities[slot])

    def demo_contents(self):
        """Zone transitions as (obs, action, reward) rows, oldest first."""
        with self._lock:
            order = [(self._demo_cursor + i) % self.demo_capacity for i in range(self.demo_capacity)] \
                if self.demo_capacity else []
            slots = [s for s in order if self.occupied[s]]
            return [(self.obs[s].copy(), self.actions[s].copy(), float(self.rewards[s])) for s in slots]

    def dump(self):
        """Debug table of occupied slots: slot, region, priority, pinned."""
        with self._lock:
            lines = [f"{'slot':>8} {'region':<6} {'priority':>14} pinned"]
            for slot in np.flatnonzero(self.occupied):
                region = DEMO_REGION if slot < self.demo_capacity else MAIN_REGION
                lines.append(f"{slot:>8} {region:<6} {self.priorities[slot]:>14.6g} {bool(self.pinned[slot])}")
            return '\n'.join(lines)
