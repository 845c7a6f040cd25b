"""
Desk-scale insertion environments.

This module defines:
- `EnvVariant`: chamfered peg-in-hole or lap-joint.
- `EnvConfig`: geometry, contact, reward and randomization parameters of one variant.
- `EnvState`: planar pose (x, z, theta) of the moving piece plus the hole frame of the episode.
- `InsertionEnv`: reset / step / scripted demonstrations.
- `reward` and `pose_distance`: the linear distance reward with a success bonus.

The piece moves in the x-z plane and rotates about y. Its state is embedded into the full
13-dim observation (position (x, 0, z), quaternion about y, wrench (fx, 0, fz, 0, ty, 0)) and
only the vx, vz and wy components of the 6-dim action move it.

Contact is compliant: a pose may overlap a wall by at most `max_penetration`, and the
wrench is `stiffness` times the overlap. Geometry is evaluated in the hole frame, whose
origin sits at the centre of the mouth with z pointing out of the hole.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
from django.db import models

from .core import ACT_DIM, DEFAULT_ACTION_MAX, Action, Episode, Observation, Transition
from .exceptions import DemonstratorFailure, EnvironmentFault

logger = logging.getLogger("django.der.logger")

SQRT_HALF = math.sqrt(0.5)


class EnvVariant(models.TextChoices):
    PEG_IN_HOLE = 'peg_in_hole', 'Chamfered peg-in-hole'
    LAP_JOINT = 'lap_joint', 'Lap-joint'


COMMON_DEFAULTS = {
    'stiffness': 1000.0,            # N/m
    'max_penetration': 0.002,       # m
    'rotation_weight': 0.1,         # m per rad in the pose distance
    'dt': 0.2,                      # s
    'start_height': 0.010,          # m above the mouth
    'engagement_length': 0.010,     # m, widens the footprint of a tilted piece
    'sensor_height': 0.050,         # m, force/torque sensor above the tip
    'hole_depth': 0.020,            # m
    'workspace_half_width': 0.050,  # m
    'workspace_height': 0.050,      # m
    'max_tilt': 90.0,               # deg
}

VARIANT_DEFAULTS = {
    EnvVariant.PEG_IN_HOLE: {
        'hole_half_width': 0.010,
        'clearance': 0.001,
        'chamfer_depth': 0.004,
        'success_threshold': 0.005,
        'bonus': 1000.0,
        'init_theta_min': -30.0,
        'init_theta_max': 30.0,
        'hole_x_min': 0.0,
        'hole_x_max': 0.0,
        'hole_theta_min': 0.0,
        'hole_theta_max': 0.0,
    },
    EnvVariant.LAP_JOINT: {
        'hole_half_width': 0.010,
        'clearance': 0.001,
        'chamfer_depth': 0.0,
        'success_threshold': 0.002,
        'bonus': 100.0,
        'init_theta_min': 0.0,
        'init_theta_max': 0.0,
        'hole_x_min': -0.002,
        'hole_x_max': 0.002,
        'hole_theta_min': -2.0,
        'hole_theta_max': 0.0,
    },
}


@dataclass(frozen=True)
class EnvConfig:
    """
    Parameters of one insertion environment. Lengths in meters, angles in degrees.

    Fields:
        - `hole_half_width` (w) and `clearance` (tol): the piece half-width is w - tol.
        - `chamfer_depth` (c): the mouth widens linearly from w at depth c to w + c at the surface.
        - `stiffness` (k) and `max_penetration`: compliant wall model.
        - `success_threshold` (ε) and `bonus` (R): reward parameters.
        - `init_theta_*`: initial tilt range of the piece.
        - `hole_x_*`, `hole_theta_*`: randomization of the hole frame.
    """

    variant: str = EnvVariant.PEG_IN_HOLE
    hole_half_width: float = 0.010
    clearance: float = 0.001
    chamfer_depth: float = 0.004
    hole_depth: float = 0.020
    stiffness: float = 1000.0
    max_penetration: float = 0.002
    success_threshold: float = 0.005
    bonus: float = 1000.0
    rotation_weight: float = 0.1
    dt: float = 0.2
    start_height: float = 0.010
    engagement_length: float = 0.010
    sensor_height: float = 0.050
    init_theta_min: float = -30.0
    init_theta_max: float = 30.0
    hole_x_min: float = 0.0
    hole_x_max: float = 0.0
    hole_theta_min: float = 0.0
    hole_theta_max: float = 0.0
    workspace_half_width: float = 0.050
    workspace_height: float = 0.050
    max_tilt: float = 90.0
    action_max: float = DEFAULT_ACTION_MAX

    @classmethod
    def for_variant(cls, variant, **overrides):
        """Defaults of `variant`, updated with the non-None `overrides`."""
        values = dict(COMMON_DEFAULTS)
        values.update(VARIANT_DEFAULTS[EnvVariant(variant)])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(variant=EnvVariant(variant), **values)

    @classmethod
    def from_experiment(cls, config):
        from .serializers import EnvConfigSerializer

        serializer = EnvConfigSerializer(data={**config.env_overrides, 'variant': config.env_name})
        serializer.is_valid(raise_exception=True)
        return cls.for_variant(action_max=config.action_max, **serializer.validated_data)

    @property
    def peg_half_width(self):
        return self.hole_half_width - self.clearance


@dataclass(frozen=True)
class EnvState:
    """
    Planar pose of the moving piece and the hole frame of the episode.

    Fields:
        - `x`, `z` (m) and `theta` (rad, rotation about y) of the piece tip, world frame.
        - `hole_x` (m) and `hole_theta` (rad): origin offset and rotation of the hole frame.
    """

    x: float
    z: float
    theta: float
    hole_x: float = 0.0
    hole_theta: float = 0.0

    @property
    def pose(self):
        return np.array([self.x, self.z, self.theta])


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    observation: Observation
    reward: float
    done: bool
    success: bool


def pose_distance(pose, goal, rotation_weight=0.1):
    """Weighted planar pose distance: translation (m) + rotation_weight * |rotation| (rad)."""
    return math.hypot(pose[0] - goal[0], pose[1] - goal[1]) + rotation_weight * abs(pose[2] - goal[2])


def reward(pose, goal, epsilon, bonus, rotation_weight=0.1):
    """-distance, plus `bonus` when the distance is within `epsilon` (boundary inclusive)."""
    distance = pose_distance(pose, goal, rotation_weight)
    if distance <= epsilon:
        return -distance + bonus
    return -distance


def observation_from_pose(x, z, theta, force=(0.0, 0.0), torque=0.0):
    half = 0.5 * theta
    return Observation(np.array([
        x, 0.0, z,
        0.0, math.sin(half), 0.0, math.cos(half),
        force[0], 0.0, force[1],
        0.0, torque, 0.0,
    ]))


def pose_from_observation(obs):
    values = obs.values
    return float(values[0]), float(values[2]), 2.0 * math.atan2(values[4], values[6])


class InsertionEnv:
    """
    Analytic stand-in for the insertion tasks.

    The environment is stateless apart from its configuration: every call takes and
    returns `EnvState` values, so one instance per worker is enough and instances can
    be handed between threads.
    """

    def __init__(self, config):
        self.config = config

    def __repr__(self):
        return f"InsertionEnv(variant={self.config.variant})"

    # frames -----------------------------------------------------------------

    def to_hole_frame(self, state, x=None, z=None, theta=None):
        x = state.x if x is None else x
        z = state.z if z is None else z
        theta = state.theta if theta is None else theta
        cos_h, sin_h = math.cos(state.hole_theta), math.sin(state.hole_theta)
        dx = x - state.hole_x
        return cos_h * dx + sin_h * z, -sin_h * dx + cos_h * z, theta - state.hole_theta

    def _to_world(self, state, vx, vz):
        cos_h, sin_h = math.cos(state.hole_theta), math.sin(state.hole_theta)
        return cos_h * vx - sin_h * vz, sin_h * vx + cos_h * vz

    def goal(self, state):
        gx, gz = self._to_world(state, 0.0, -self.config.hole_depth)
        return np.array([state.hole_x + gx, gz, state.hole_theta])

    # contact ----------------------------------------------------------------

    def _opening(self, zh):
        c = self.config.chamfer_depth
        return self.config.hole_half_width + min(max(c + zh, 0.0), c)

    def contacts(self, xh, zh, th):
        """
        Overlaps of the piece with the hole, in the hole frame.

        Returns a list of (overlap depth, displacement (dx, dz) that clears it, contact point (cx, cz)).
        """
        cfg = self.config
        contacts = []
        if zh < 0.0:
            half = cfg.peg_half_width * abs(math.cos(th)) + cfg.engagement_length * abs(math.sin(th))
            for side in (1.0, -1.0):
                edge = side * xh + half
                if edge <= self._opening(zh):
                    continue
                point = (xh + side * half, zh)
                if cfg.chamfer_depth > 0.0 and zh >= -cfg.chamfer_depth:
                    depth = (edge - (cfg.hole_half_width + cfg.chamfer_depth + zh)) * SQRT_HALF
                    push = (-side * SQRT_HALF * depth, SQRT_HALF * depth)
                else:
                    depth = edge - cfg.hole_half_width
                    push = (-side * depth, 0.0)
                # Resting on the surface or the mouth edge when that clears the overlap sooner.
                if -zh < depth:
                    depth, push = -zh, (0.0, -zh)
                contacts.append((depth, push, point))
            if zh < -cfg.hole_depth:
                depth = -cfg.hole_depth - zh
                contacts.append((depth, (0.0, depth), (xh, zh)))
        return contacts

    def _overlap(self, state, pose):
        contacts = self.contacts(*self.to_hole_frame(state, *pose))
        return max((c[0] for c in contacts), default=0.0)

    def _feasible(self, state, pose):
        return self._overlap(state, pose) <= self.config.max_penetration + 1e-12

    def wrench(self, state):
        """Force (fx, fz) and torque ty on the piece, world frame; zero when nothing overlaps."""
        xh, zh, th = self.to_hole_frame(state)
        k = self.config.stiffness
        fx = fz = ty = 0.0
        for _, (px, pz), (cx, cz) in self.contacts(xh, zh, th):
            # Lever arm from the sensor above the tip to the contact point.
            rx, rz = cx - xh, cz - (zh + self.config.sensor_height)
            fx += k * px
            fz += k * pz
            ty += rz * k * px - rx * k * pz
        wx, wz = self._to_world(state, fx, fz)
        return wx, wz, ty

    def _reachable_fraction(self, state, start, delta):
        if self._feasible(state, start + delta):
            return 1.0
        lo, hi = 0.0, 1.0
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if self._feasible(state, start + mid * delta):
                lo = mid
            else:
                hi = mid
        return lo

    def _contact_normal(self, state, pose):
        contacts = self.contacts(*self.to_hole_frame(state, *pose))
        px = sum(c[1][0] for c in contacts)
        pz = sum(c[1][1] for c in contacts)
        norm = math.hypot(px, pz)
        if norm == 0.0:
            return None
        return np.array(self._to_world(state, px / norm, pz / norm))

    def _advance(self, state, delta):
        """Moves along `delta` until the overlap limit, then slides the rest along the contact."""
        start = state.pose
        fraction = self._reachable_fraction(state, start, delta)
        reached = start + fraction * delta
        if fraction < 1.0:
            normal = self._contact_normal(state, reached)
            if normal is not None:
                slide = (1.0 - fraction) * delta
                slide[2] = 0.0
                into = float(slide[:2] @ normal)
                if into < 0.0:
                    slide[:2] -= into * normal
                if np.any(slide != 0.0):
                    reached = reached + self._reachable_fraction(state, reached, slide) * slide
        return reached

    # episode interface ------------------------------------------------------

    def observe(self, state):
        fx, fz, ty = self.wrench(state)
        return observation_from_pose(state.x, state.z, state.theta, (fx, fz), ty)

    def goal_distance(self, state):
        return pose_distance(state.pose, self.goal(state), self.config.rotation_weight)

    def _outside_workspace(self, state):
        cfg = self.config
        return (abs(state.x) > cfg.workspace_half_width or state.z > cfg.workspace_height
                or abs(state.theta) > math.radians(cfg.max_tilt))

    def reset(self, rng):
        cfg = self.config
        hole_x = rng.uniform(cfg.hole_x_min, cfg.hole_x_max)
        hole_theta = math.radians(rng.uniform(cfg.hole_theta_min, cfg.hole_theta_max))
        theta = math.radians(rng.uniform(cfg.init_theta_min, cfg.init_theta_max))
        return EnvState(x=0.0, z=cfg.start_height, theta=theta, hole_x=float(hole_x), hole_theta=hole_theta)

    def step(self, state, action):
        values = np.asarray(getattr(action, 'values', action), dtype=np.float64)
        if values.shape != (ACT_DIM,) or not np.all(np.isfinite(values)):
            raise EnvironmentFault(f"Rejected action {values.tolist()}")
        values = np.clip(values, -self.config.action_max, self.config.action_max)
        delta = np.array([values[0], values[2], values[4]]) * self.config.dt
        x, z, theta = self._advance(state, delta)
        next_state = dataclasses.replace(state, x=float(x), z=float(z), theta=float(theta))
        obs = self.observe(next_state)
        if not np.all(np.isfinite(obs.values)):
            raise EnvironmentFault(f"Environment reached a non-finite state: {next_state}")
        goal = self.goal(next_state)
        r = reward(next_state.pose, goal, self.config.success_threshold, self.config.bonus,
                   self.config.rotation_weight)
        distance = pose_distance(next_state.pose, goal, self.config.rotation_weight)
        success = bool(distance <= self.config.success_threshold)
        failed = not success and bool(self._outside_workspace(next_state))
        return StepResult(next_state, obs, r, success or failed, success)

    # demonstrations ---------------------------------------------------------

    def demonstrator_command(self, state, gain=2.5):
        """Proportional controller: align above the mouth, then descend along the hole axis."""
        cfg = self.config
        xh, zh, th = self.to_hole_frame(state)
        aligned = abs(xh) <= 0.25 * cfg.clearance and abs(th) <= 0.02
        if zh > 0.0 and not aligned:
            target_z = max(zh, 0.5 * cfg.start_height)
        else:
            target_z = -cfg.hole_depth
        vx, vz = self._to_world(state, gain * (0.0 - xh), gain * (target_z - zh))
        command = np.zeros(ACT_DIM)
        command[0], command[2], command[4] = vx, vz, gain * (0.0 - th)
        return command

    def scripted_demo(self, rng, jitter=0.0, episode_id="", max_steps=300, max_retries=100):
        """Runs the demonstrator with Gaussian jitter until an episode succeeds."""
        for attempt in range(max_retries):
            state = self.reset(rng)
            obs = self.observe(state)
            initial = {'variant': str(self.config.variant), 'hole_x': state.hole_x, 'hole_theta': state.hole_theta}
            transitions = []
            for _ in range(max_steps):
                command = self.demonstrator_command(state)
                if jitter > 0.0:
                    command[[0, 2, 4]] += rng.normal(0.0, jitter, size=3)
                action = Action(command, self.config.action_max)
                result = self.step(state, action)
                transitions.append(Transition(obs, action, result.observation, result.reward,
                                              result.done, result.success))
                state, obs = result.state, result.observation
                if result.done:
                    break
            if transitions[-1].success:
                logger.debug(f"InsertionEnv: demo {episode_id} succeeded after {attempt + 1} attempt(s)")
                return Episode(transitions, episode_id, initial, max_length=max_steps)
        raise DemonstratorFailure(
            f"Scripted demonstrator failed {max_retries} times on {self.config.variant}; check the geometry."
        )

    def replay(self, episode):
        """Re-runs the stored actions of `episode` from its recorded start; returns the new episode."""
        x, z, theta = pose_from_observation(episode.transitions[0].s)
        state = EnvState(x, z, theta, episode.metadata.get('hole_x', 0.0), episode.metadata.get('hole_theta', 0.0))
        obs = self.observe(state)
        transitions = []
        for stored in episode.transitions:
            result = self.step(state, stored.a)
            transitions.append(Transition(obs, stored.a, result.observation, result.reward,
                                          result.done or stored.done, result.success))
            state, obs = result.state, result.observation
        return Episode(transitions, episode.episode_id, dict(episode.metadata))


def make_env(config):
    """Builds the environment an `ExperimentConfig` describes."""
    return InsertionEnv(EnvConfig.from_experiment(config))
