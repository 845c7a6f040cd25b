"""
Episode files.

An episode file is JSON lines. The first line is the header (`EpisodeHeaderSerializer`):

    {"episode_id": "demo-0", "variant": "peg_in_hole", "hole_x": 0.0, "hole_theta": 0.0, "length": 42, "success": true}

Every following line is one transition (`TransitionSerializer`), in time order:

    {"s": [x, y, z, qx, qy, qz, qw, fx, fy, fz, tx, ty, tz], "a": [vx, vy, vz, wx, wy, wz],
     "s_next": [...13...], "r": -0.03, "done": false, "success": false}

Floats are written with their shortest round-trip representation, so reading a file back
reproduces every value bit-exactly.
"""

import json
import logging
from pathlib import Path

from rest_framework import serializers

from .core import DEFAULT_ACTION_MAX, Episode
from .serializers import EpisodeHeaderSerializer, TransitionSerializer

logger = logging.getLogger("django.der.logger")

EPISODE_SUFFIX = '.jsonl'


def write_episode(path, episode):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        'episode_id': episode.episode_id,
        'variant': episode.metadata.get('variant', ''),
        'hole_x': float(episode.metadata.get('hole_x', 0.0)),
        'hole_theta': float(episode.metadata.get('hole_theta', 0.0)),
        'length': episode.length,
        'success': bool(episode.success),
    }
    with path.open('w', encoding='utf-8') as handle:
        handle.write(json.dumps(header) + '\n')
        for transition in episode.transitions:
            handle.write(json.dumps(TransitionSerializer(transition).data) + '\n')
    return path


def read_episode(path, a_max=DEFAULT_ACTION_MAX):
    path = Path(path)
    with path.open(encoding='utf-8') as handle:
        lines = [line for line in handle.read().splitlines() if line.strip()]
    if not lines:
        raise serializers.ValidationError(f"Episode file {path} is empty.")

    header = EpisodeHeaderSerializer(data=json.loads(lines[0]))
    header.is_valid(raise_exception=True)
    transitions = []
    for number, line in enumerate(lines[1:], start=2):
        record = TransitionSerializer(data=json.loads(line))
        if not record.is_valid():
            raise serializers.ValidationError({f"{path.name}:{number}": record.errors})
        transitions.append(record.to_transition(a_max))

    meta = header.validated_data
    if meta['length'] != len(transitions):
        raise serializers.ValidationError(
            f"{path.name}: header announces {meta['length']} transitions, found {len(transitions)}."
        )
    metadata = {'variant': meta['variant'], 'hole_x': meta['hole_x'], 'hole_theta': meta['hole_theta']}
    return Episode(transitions, meta['episode_id'], metadata)


def write_episodes(directory, episodes):
    directory = Path(directory)
    paths = [write_episode(directory / f"{episode.episode_id or f'episode-{i}'}{EPISODE_SUFFIX}", episode)
             for i, episode in enumerate(episodes)]
    logger.info(f"Storage: wrote {len(paths)} episode file(s) to {directory}")
    return paths


def read_episodes(directory, a_max=DEFAULT_ACTION_MAX):
    """Reads every episode file of `directory`, sorted by file name."""
    paths = sorted(Path(directory).glob(f"*{EPISODE_SUFFIX}"))
    return [read_episode(path, a_max) for path in paths]
