"""Builders shared by the test modules."""

import numpy as np

from ..core import ACT_DIM, Action, Episode, ExperimentConfig, Observation, Transition
from ..envs import observation_from_pose


def make_observation(x=0.0, z=0.01, theta=0.0, force=(0.0, 0.0), torque=0.0):
    return observation_from_pose(x, z, theta, force, torque)


def random_observation(rng):
    values = np.concatenate([rng.normal(size=3), [0.0, 0.0, 0.0, 1.0], rng.normal(size=6)])
    return Observation(values)


def make_transition(rng=None, reward=-0.1, done=False, success=False, a_max=0.05):
    rng = rng if rng is not None else np.random.default_rng(0)
    return Transition(random_observation(rng), Action(rng.uniform(-a_max, a_max, ACT_DIM), a_max),
                      random_observation(rng), reward, done, success)


def make_episode(length, success=False, episode_id="ep", rng=None, reward=-0.1):
    rng = rng if rng is not None else np.random.default_rng(length)
    transitions = [make_transition(rng, reward) for _ in range(length - 1)]
    transitions.append(make_transition(rng, reward + (1000.0 if success else 0.0), done=True, success=success))
    return Episode(transitions, episode_id, {'variant': 'peg_in_hole', 'hole_x': 0.0, 'hole_theta': 0.0})


SMALL = {
    'num_buffers': 2,
    'num_workers': 2,
    'num_demos': 2,
    'buffer_capacity': 400,
    'demo_fraction': 0.1,
    'train_batch_size': 16,
    'learning_starts': 32,
    'hidden_sizes': [8],
    'iteration_timesteps': 60,
    'max_iterations': 2,
    'max_episode_steps': 20,
    'trainer_steps_per_episode': 2,
    'der_refresh_period': 5,
    'target_update_freq': 7,
    'log_interval': 5,
    'deterministic': True,
}


def small_config(**changes):
    """A validated config small enough for unit tests."""
    data = dict(SMALL)
    data.update(changes)
    return ExperimentConfig.from_mapping(data)
