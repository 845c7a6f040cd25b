import tempfile
import threading
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from ..core import ACT_DIM, OBS_DIM, EventLedger, ExperimentConfig
from ..exceptions import CheckpointError
from ..learner import Learner, make_train_log
from ..netlib import Mlp, ModelParameters
from ..replay import PrioritizedBuffer, SampleBatch
from ..zones import SuccessPool
from .factories import make_episode, make_transition, small_config


def batch_of(transitions):
    n = len(transitions)
    return SampleBatch(
        obs=np.stack([t.s.values for t in transitions]),
        actions=np.stack([t.a.values for t in transitions]),
        rewards=np.array([t.r for t in transitions]),
        next_obs=np.stack([t.s_next.values for t in transitions]),
        dones=np.array([t.done for t in transitions]),
        indices=np.arange(n), generations=np.ones(n, dtype=np.int64), weights=np.ones(n), buffer_id=0,
    )


def constant_critic(value):
    net = Mlp.zeros((OBS_DIM + ACT_DIM, 4, 1))
    net.biases[-1][:] = value
    return net


class TdTargetTests(SimpleTestCase):
    def setUp(self):
        self.learner = Learner(small_config(gamma=0.99))
        self.learner.target_critic = constant_critic(2.0)

    def test_non_terminal_target(self):
        batch = batch_of([make_transition(reward=1.0)])
        assert_allclose(self.learner.td_targets(batch), [1.0 + 0.99 * 2.0], rtol=0, atol=1e-12)

    def test_terminal_target_drops_bootstrap(self):
        batch = batch_of([make_transition(reward=1.0, done=True)])
        assert_allclose(self.learner.td_targets(batch), [1.0], rtol=0, atol=1e-12)

    def test_elementwise_against_oracle(self):
        rng = np.random.default_rng(3)
        transitions = [make_transition(rng, reward=float(r), done=bool(d))
                       for r, d in zip(rng.normal(size=32), rng.integers(0, 2, 32))]
        learner = Learner(small_config())
        obs_filter = learner.filter_snapshot()
        batch = batch_of(transitions)
        s_next = obs_filter.apply(batch.next_obs)
        expected = []
        for row, t in zip(s_next, transitions):
            q = learner.target_critic.forward(np.concatenate([row, learner.target_actor.forward(row)]))[0]
            expected.append(t.r + (0.0 if t.done else 0.99 * q))
        assert_allclose(learner.td_targets(batch), expected, rtol=0, atol=1e-12)

    def test_priorities_are_absolute_td_errors(self):
        learner = Learner(small_config())
        learner.critic = constant_critic(0.5)
        batch = batch_of([make_transition(reward=1.0, done=True), make_transition(reward=0.2, done=True)])
        assert_allclose(learner.compute_priorities(batch, learner.td_targets(batch)), [0.5, 0.3], atol=1e-12)


class TrainStepTests(SimpleTestCase):
    def linear_learner(self, **changes):
        settings = {"hidden_sizes": (), "learning_starts": 1, "train_batch_size": 1, "learning_rate": 1e-3,
                    "target_update_freq": 1000}
        settings.update(changes)
        learner = Learner(ExperimentConfig(**settings))
        buffer = PrioritizedBuffer(capacity=2, demo_capacity=0)
        return learner, buffer

    def test_no_ready_buffer_is_a_no_op(self):
        learner = Learner(small_config(learning_starts=5))
        buffer = PrioritizedBuffer(capacity=10, demo_capacity=0)
        buffer.insert_main([make_transition()])
        before = learner.actor_parameters()
        result = learner.train_step([buffer])
        self.assertFalse(result.trained)
        self.assertEqual(learner.iteration, 0)
        self.assertEqual(learner.actor_parameters(), before)

    def test_critic_update_matches_hand_computation(self):
        learner, buffer = self.linear_learner()
        t = make_transition(np.random.default_rng(6), reward=-0.3)
        buffer.insert_main([t])
        x = np.concatenate([t.s.values, t.a.values / learner.action_max])
        w, b = learner.critic.weights[0][:, 0].copy(), learner.critic.biases[0][0]
        y = learner.td_targets(batch_of([t]))[0]
        td = x @ w + b - y
        grad = 2.0 * td * np.concatenate([x, [1.0]])
        expected = np.concatenate([w, [b]]) - 1e-3 * grad / (np.abs(grad) + 1e-8)

        result = learner.train_step([buffer])
        self.assertTrue(result.trained)
        assert_allclose(learner.critic.parameters().values, expected, rtol=1e-12, atol=1e-15)
        self.assertAlmostEqual(result.critic_loss, td ** 2, places=12)
        self.assertAlmostEqual(buffer.priority(0), abs(td) + buffer.epsilon, places=12)

    def test_actor_moves_against_the_policy_loss_gradient(self):
        learner, buffer = self.linear_learner()
        t = make_transition(np.random.default_rng(8))
        buffer.insert_main([t])
        old = learner.actor_parameters().values.copy()
        learner.train_step([buffer])
        new = learner.actor_parameters().values
        critic = learner.critic
        s = t.s.values

        def policy_loss(flat):
            actor = Mlp.from_parameters(ModelParameters(flat, learner.actor.shapes), "tanh")
            return -0.1 * critic.forward(np.concatenate([s, actor.forward(s)]))[0]

        h = 1e-6
        numeric = np.array([(policy_loss(old + h * e) - policy_loss(old - h * e)) / (2 * h) for e in np.eye(old.size)])
        significant = np.abs(numeric) > 1e-6
        self.assertTrue(significant.any())
        assert_array_equal(np.sign(new - old)[significant], -np.sign(numeric)[significant])

    def test_zero_learning_rate_changes_nothing(self):
        learner, buffer = self.linear_learner(learning_rate=0.0)
        buffer.insert_main([make_transition()])
        actor, critic = learner.actor_parameters(), learner.critic.parameters()
        learner.train_step([buffer])
        self.assertEqual(learner.actor_parameters(), actor)
        self.assertEqual(learner.critic.parameters(), critic)

    def test_targets_change_only_at_multiples_of_the_frequency(self):
        ledger = EventLedger()
        learner = Learner(small_config(learning_starts=4, target_update_freq=3), ledger=ledger)
        buffer = PrioritizedBuffer(capacity=50, demo_capacity=0)
        buffer.insert_main([make_transition(np.random.default_rng(i)) for i in range(20)])
        target = learner.target_actor.parameters()
        for step in range(1, 10):
            result = learner.train_step([buffer])
            self.assertEqual(result.target_updated, step % 3 == 0)
            if step % 3 == 0:
                self.assertEqual(learner.target_actor.parameters(), learner.actor.parameters())
                self.assertEqual(learner.target_critic.parameters(), learner.critic.parameters())
                target = learner.target_actor.parameters()
            else:
                self.assertEqual(learner.target_actor.parameters(), target)
        self.assertEqual([e.detail['step'] for e in ledger.events('target_update')], [3, 6, 9])

    def test_zones_refresh_on_schedule(self):
        pool = SuccessPool()
        pool.add(make_episode(2, success=True))
        learner = Learner(small_config(learning_starts=1, der_refresh_period=4), pool=pool)
        buffers = [PrioritizedBuffer(capacity=50, demo_capacity=5, buffer_id=i) for i in range(2)]
        for buffer in buffers:
            buffer.insert_main([make_transition(np.random.default_rng(9))])
        refreshed_at = [learner.train_step(buffers) for _ in range(8)]
        self.assertEqual([r.step for r in refreshed_at if r.refreshed], [4, 8])

    def test_buffer_choice_is_uniform_over_ready_buffers(self):
        learner = Learner(small_config(learning_starts=2, train_batch_size=1, learning_rate=0.0))
        ready = [PrioritizedBuffer(capacity=10, demo_capacity=0, buffer_id=i) for i in range(3)]
        for buffer in ready[:2]:
            buffer.insert_main([make_transition(), make_transition()])
        ready[2].insert_main([make_transition()])
        chosen = {learner.train_step(ready).buffer_id for _ in range(60)}
        self.assertEqual(chosen, {0, 1})


class PublicationTests(SimpleTestCase):
    def test_versions_increase_by_one(self):
        learner = Learner(small_config())
        versions = [learner.publish_parameters().version for _ in range(4)]
        self.assertEqual(versions, [1, 2, 3, 4])

    def test_worker_side_forward_is_bit_identical(self):
        learner = Learner(small_config())
        learner.observe(make_episode(30))
        snapshot = learner.publish_parameters()
        actor = Mlp.from_parameters(snapshot.actor, 'tanh')
        x = snapshot.obs_filter.apply(make_transition().s.values)
        assert_array_equal(actor.forward(x), learner.actor.forward(x))

    def test_snapshot_is_never_torn(self):
        learner = Learner(small_config(learning_starts=1, train_batch_size=8))
        buffer = PrioritizedBuffer(capacity=100, demo_capacity=0)
        buffer.insert_main([make_transition(np.random.default_rng(i)) for i in range(40)])
        held = {learner.actor_parameters().checksum}
        seen = set()
        stop = threading.Event()

        def publish():
            while not stop.is_set():
                seen.add(learner.publish_parameters().actor.checksum)

        thread = threading.Thread(target=publish)
        thread.start()
        try:
            for _ in range(200):
                learner.train_step([buffer])
                held.add(learner.actor_parameters().checksum)
        finally:
            stop.set()
            thread.join()
        self.assertTrue(seen)
        self.assertTrue(seen <= held)

    def test_observe_folds_every_observation(self):
        learner = Learner(small_config())
        learner.observe(make_episode(5))
        self.assertEqual(learner.filter_snapshot().count, 6)


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_round_trip(self):
        learner = Learner(small_config(seed=1))
        learner.observe(make_episode(10))
        path = learner.save_checkpoint(Path(self.tmp.name) / 'run.ckpt')
        restored = Learner(small_config(seed=2)).load_checkpoint(path)
        for name in ('actor', 'critic', 'target_actor', 'target_critic'):
            self.assertEqual(getattr(restored, name).parameters(), getattr(learner, name).parameters())
        self.assertEqual(restored.obs_filter.count, 11)
        assert_array_equal(restored.obs_filter.mean, learner.obs_filter.mean)

    def test_mismatched_architecture(self):
        path = Learner(small_config(hidden_sizes=[8])).save_checkpoint(Path(self.tmp.name) / 'a.ckpt')
        with self.assertRaises(CheckpointError):
            Learner(small_config(hidden_sizes=[16])).load_checkpoint(path)


class TrainingLogTests(SimpleTestCase):
    def test_rows_every_log_interval(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.train.csv'
            log = make_train_log(path, deterministic=True)
            learner = Learner(small_config(learning_starts=1, log_interval=3), train_log=log)
            buffer = PrioritizedBuffer(capacity=20, demo_capacity=0)
            buffer.insert_main([make_transition(np.random.default_rng(i)) for i in range(5)])
            for _ in range(7):
                learner.train_step([buffer])
            log.close()
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'step,critic_loss,actor_loss,steps_per_sec')
        self.assertEqual([line.split(',')[0] for line in lines[1:]], ['3', '6'])
        self.assertTrue(all(line.endswith(',0.000') for line in lines[1:]))
