import hashlib
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from rest_framework.exceptions import ValidationError

from ..core import (Action, BufferStructure, Episode, EventLedger, ExperimentConfig, Observation,
                    ObservationFilter, Transition, filter_apply, filter_update, seed_streams)
from ..exceptions import InvalidVector, RejectedEpisode
from .factories import make_episode, make_observation, make_transition


class ObservationTests(SimpleTestCase):
    def test_rejects_wrong_length(self):
        with self.assertRaises(InvalidVector):
            Observation(np.zeros(12))

    def test_rejects_non_finite_entries(self):
        values = make_observation().values.copy()
        values[8] = np.nan
        with self.assertRaises(InvalidVector):
            Observation(values)

    def test_quaternion_is_normalized(self):
        values = np.zeros(13)
        values[3:7] = [0.0, 2.0, 0.0, 2.0]
        obs = Observation(values)
        self.assertAlmostEqual(float(np.linalg.norm(obs.orientation)), 1.0, places=15)

    def test_unit_quaternion_kept_bit_exact(self):
        obs = make_observation(theta=0.3)
        again = Observation(obs.values)
        assert_array_equal(obs.values, again.values)

    def test_values_are_read_only(self):
        obs = make_observation()
        with self.assertRaises(ValueError):
            obs.values[0] = 1.0


class ActionTests(SimpleTestCase):
    def test_components_are_clamped(self):
        action = Action([1.0, -1.0, 0.01, 0.0, 0.2, -0.03], a_max=0.05)
        assert_array_equal(action.values, [0.05, -0.05, 0.01, 0.0, 0.05, -0.03])

    def test_rejects_nan(self):
        with self.assertRaises(InvalidVector):
            Action([np.nan, 0, 0, 0, 0, 0])


class TransitionAndEpisodeTests(SimpleTestCase):
    def test_success_requires_done(self):
        with self.assertRaises(ValueError):
            make_transition(done=False, success=True)

    def test_reward_must_be_finite(self):
        rng = np.random.default_rng(1)
        t = make_transition(rng)
        with self.assertRaises(InvalidVector):
            Transition(t.s, t.a, t.s_next, math.inf, False)

    def test_empty_episode_is_rejected(self):
        with self.assertRaises(ValueError):
            Episode([])

    def test_fragments_of_120_transitions(self):
        episode = make_episode(120)
        self.assertEqual([len(f) for f in episode.fragments(50)], [50, 50, 20])

    def test_success_and_total_reward(self):
        episode = make_episode(4, success=True)
        self.assertTrue(episode.success)
        self.assertAlmostEqual(episode.total_reward, 4 * -0.1 + 1000.0)

    def test_numpy_flags_become_plain_booleans(self):
        t = make_transition()
        stored = Transition(t.s, t.a, t.s_next, -0.1, np.bool_(True), np.float64(0.001) <= 0.005)
        self.assertIs(stored.done, True)
        self.assertIs(stored.success, True)
        self.assertIs(Episode([stored]).success, True)

    def test_episode_longer_than_the_step_limit_is_rejected(self):
        transitions = make_episode(8).transitions
        self.assertEqual(Episode(transitions, max_length=8).length, 8)
        with self.assertRaises(RejectedEpisode):
            Episode(transitions, 'w0-e3', max_length=7)
        with self.assertRaises(RejectedEpisode):
            make_episode(8).check_length(5)


class ObservationFilterTests(SimpleTestCase):
    def setUp(self):
        self.rows = np.random.default_rng(3).normal(2.0, 3.0, size=(500, 13))

    def test_matches_batch_statistics(self):
        f = ObservationFilter()
        for row in self.rows:
            filter_update(f, row)
        assert_allclose(f.mean, self.rows.mean(axis=0), rtol=1e-12)
        assert_allclose(f.variance, self.rows.var(axis=0, ddof=1), rtol=1e-10)

    def test_batch_update_and_merge_agree_with_sequential(self):
        sequential = ObservationFilter()
        for row in self.rows:
            sequential.update(row)
        merged = ObservationFilter().update_batch(self.rows[:123]).merge(ObservationFilter().update_batch(self.rows[123:]))
        self.assertEqual(merged.count, sequential.count)
        assert_allclose(merged.mean, sequential.mean, rtol=1e-12)
        assert_allclose(merged.m2, sequential.m2, rtol=1e-10)

    def test_apply_before_two_samples_only_centers(self):
        f = ObservationFilter().update(self.rows[0])
        assert_allclose(filter_apply(f, self.rows[1]), self.rows[1] - self.rows[0])

    def test_apply_normalizes_rows(self):
        f = ObservationFilter().update_batch(self.rows)
        normalized = f.apply(self.rows)
        assert_allclose(normalized.mean(axis=0), np.zeros(13), atol=1e-12)
        assert_allclose(normalized.std(axis=0, ddof=1), np.ones(13), rtol=1e-10)

    def test_constant_dimension_does_not_divide_by_zero(self):
        rows = self.rows.copy()
        rows[:, 4] = 0.5
        out = ObservationFilter().update_batch(rows).apply(rows[0])
        self.assertTrue(np.all(np.isfinite(out)))
        self.assertEqual(out[4], 0.0)

    def test_snapshot_is_independent(self):
        f = ObservationFilter().update_batch(self.rows[:10])
        snap = f.snapshot()
        f.update(self.rows[11])
        self.assertEqual(snap.count, 10)
        self.assertFalse(np.array_equal(snap.mean, f.mean))


class SeedStreamTests(SimpleTestCase):
    def test_same_key_same_sequence(self):
        assert_array_equal(seed_streams(7, 'worker-1').random(5), seed_streams(7, 'worker-1').random(5))

    def test_roles_and_seeds_differ(self):
        base = seed_streams(7, 'worker-1').random(5)
        self.assertFalse(np.array_equal(base, seed_streams(7, 'worker-2').random(5)))
        self.assertFalse(np.array_equal(base, seed_streams(8, 'worker-1').random(5)))

    def test_derivation_recipe(self):
        key = int.from_bytes(hashlib.sha256(b'trainer').digest()[:8], 'little')
        expected = np.random.default_rng(np.random.SeedSequence(3, spawn_key=(key,))).integers(0, 2 ** 32, 8)
        assert_array_equal(seed_streams(3, 'trainer').integers(0, 2 ** 32, 8), expected)


class EventLedgerTests(SimpleTestCase):
    def test_records_and_filters(self):
        ledger = EventLedger()
        ledger.record('fragment', buffer=1)
        ledger.record('pool_add', episode='w0-e0')
        self.assertEqual(len(ledger), 2)
        self.assertEqual([e.detail for e in ledger.events('pool_add')], [{'episode': 'w0-e0'}])


class ExperimentConfigTests(SimpleTestCase):
    def test_defaults(self):
        config = ExperimentConfig.from_mapping()
        self.assertEqual(config.structure_type, BufferStructure.NO_DEMOS)
        self.assertEqual(config.num_buffers, 6)
        self.assertEqual(config.hidden_sizes, (64, 64))
        self.assertEqual(config.demo_capacity, 200)
        self.assertEqual(config.run_name, 'peg_in_hole_NoDemos_der-on_seed-0')

    def test_overrides_win_and_none_is_ignored(self):
        config = ExperimentConfig.from_mapping({'seed': 4}, seed=9, num_workers=None)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.num_workers, 5)

    def test_one_shot_each_needs_a_demo_per_buffer(self):
        with self.assertRaises(ValidationError) as ctx:
            ExperimentConfig.from_mapping({'structure_type': 'OneShotEach', 'num_buffers': 6, 'num_demos': 3})
        self.assertIn('num_demos', ctx.exception.detail)

    def test_rejects_malformed_fields(self):
        with self.assertRaises(ValidationError) as ctx:
            ExperimentConfig.from_mapping({'priority_epsilon': 0.0, 'gamma': 1.5})
        self.assertIn('priority_epsilon', ctx.exception.detail)
        self.assertIn('gamma', ctx.exception.detail)

    def test_from_env_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'cell.env'
            path.write_text("STRUCTURE_TYPE=AllShotsAll\nDER_ENABLED=false\nHIDDEN_SIZES=32,16\n"
                            "SEED=5\nENV_CHAMFER_DEPTH=0.003\n")
            config = ExperimentConfig.from_env_file(path, seed=6)
        self.assertEqual(config.structure_type, BufferStructure.ALL_SHOTS_ALL)
        self.assertFalse(config.der_enabled)
        self.assertEqual(config.hidden_sizes, (32, 16))
        self.assertEqual(config.seed, 6)
        self.assertEqual(config.env_overrides, {'chamfer_depth': 0.003})

    def test_env_overrides_are_validated(self):
        with self.assertRaises(ValidationError):
            ExperimentConfig.from_mapping({'env_name': 'lap_joint', 'env_overrides': {'chamfer_depth': 0.002}})
