import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal
from rest_framework.exceptions import ValidationError

from ..envs import EnvConfig, InsertionEnv
from ..serializers import TransitionSerializer
from ..storage import read_episode, read_episodes, write_episode, write_episodes
from .factories import make_episode, make_transition


class EpisodeFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_written_episode_reads_back_exactly(self):
        demo = InsertionEnv(EnvConfig.for_variant('lap_joint')).scripted_demo(np.random.default_rng(1), 0.001, 'demo-000')
        loaded = read_episode(write_episode(self.dir / 'demo-000.jsonl', demo))
        self.assertEqual(loaded.episode_id, 'demo-000')
        self.assertEqual(loaded.metadata['hole_x'], demo.metadata['hole_x'])
        self.assertEqual(loaded.metadata['hole_theta'], demo.metadata['hole_theta'])
        self.assertEqual(loaded.length, demo.length)
        for a, b in zip(demo.transitions, loaded.transitions):
            assert_array_equal(a.s.values, b.s.values)
            assert_array_equal(a.a.values, b.a.values)
            assert_array_equal(a.s_next.values, b.s_next.values)
            self.assertEqual((a.r, a.done, a.success), (b.r, b.done, b.success))

    def test_header_describes_the_episode(self):
        path = write_episode(self.dir / 'e.jsonl', make_episode(3, success=True, episode_id='w2-e7'))
        header = json.loads(path.read_text().splitlines()[0])
        self.assertEqual(header['episode_id'], 'w2-e7')
        self.assertEqual(header['length'], 3)
        self.assertTrue(header['success'])

    def test_environment_episode_header_is_plain_json(self):
        env = InsertionEnv(EnvConfig.for_variant('peg_in_hole'))
        demo = env.scripted_demo(np.random.default_rng(2), 0.0, 'demo-001')
        path = write_episode(self.dir / 'demo-001.jsonl', demo)
        lines = path.read_text().splitlines()
        self.assertIs(json.loads(lines[0])['success'], True)
        self.assertIs(json.loads(lines[-1])['done'], True)
        self.assertEqual(len(lines), demo.length + 1)

    def test_length_mismatch_is_rejected(self):
        path = write_episode(self.dir / 'e.jsonl', make_episode(3))
        lines = path.read_text().splitlines()
        path.write_text('\n'.join(lines[:-1]) + '\n')
        with self.assertRaises(ValidationError):
            read_episode(path)

    def test_malformed_transition_is_rejected(self):
        path = write_episode(self.dir / 'e.jsonl', make_episode(2))
        lines = path.read_text().splitlines()
        record = json.loads(lines[1])
        record['a'] = record['a'][:5]
        lines[1] = json.dumps(record)
        path.write_text('\n'.join(lines) + '\n')
        with self.assertRaises(ValidationError) as ctx:
            read_episode(path)
        self.assertIn('e.jsonl:2', str(ctx.exception.detail))

    def test_directory_reads_in_name_order(self):
        episodes = [make_episode(2, episode_id=f"demo-{i:03d}", rng=np.random.default_rng(i)) for i in (11, 2, 0)]
        write_episodes(self.dir, episodes)
        self.assertEqual([e.episode_id for e in read_episodes(self.dir)], ['demo-000', 'demo-002', 'demo-011'])


class TransitionSerializerTests(SimpleTestCase):
    def test_success_must_be_terminal(self):
        data = TransitionSerializer(make_transition()).data
        data['success'] = True
        serializer = TransitionSerializer(data=data)
        self.assertFalse(serializer.is_valid())

    def test_representation_layout(self):
        t = make_transition()
        data = TransitionSerializer(t).data
        self.assertEqual(len(data['s']), 13)
        self.assertEqual(len(data['a']), 6)
        self.assertEqual(data['s_next'], t.s_next.to_list())
