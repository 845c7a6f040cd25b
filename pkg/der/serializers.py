"""
Serializers for experiment configuration and episode records.

This module defines:
- `EnvConfigSerializer`: validates `ENV_*` overrides of the insertion environment.
- `ExperimentConfigSerializer`: validates a full ablation cell and builds an `ExperimentConfig`.
- `EpisodeHeaderSerializer`: first line of an episode file.
- `TransitionSerializer`: one transition line of an episode file.

Incoming values may be strings (as read from experiment files); the fields coerce them.
"""

from rest_framework import serializers

from .core import ACT_DIM, OBS_DIM, Action, BufferStructure, ExperimentConfig, Observation, Transition
from .envs import EnvVariant


class EnvConfigSerializer(serializers.Serializer):
    """
    Validates environment overrides.

    Included Fields:
        - `variant` (choice): `peg_in_hole` or `lap_joint`.
        - geometry, contact, reward and randomization parameters (all optional floats).
    """

    variant = serializers.ChoiceField(choices=EnvVariant.choices)
    hole_half_width = serializers.FloatField(required=False, min_value=0.0)
    clearance = serializers.FloatField(required=False)
    chamfer_depth = serializers.FloatField(required=False, min_value=0.0)
    hole_depth = serializers.FloatField(required=False, min_value=0.0)
    stiffness = serializers.FloatField(required=False, min_value=0.0)
    max_penetration = serializers.FloatField(required=False, min_value=0.0)
    success_threshold = serializers.FloatField(required=False, min_value=0.0)
    bonus = serializers.FloatField(required=False)
    rotation_weight = serializers.FloatField(required=False, min_value=0.0)
    dt = serializers.FloatField(required=False)
    start_height = serializers.FloatField(required=False)
    engagement_length = serializers.FloatField(required=False, min_value=0.0)
    sensor_height = serializers.FloatField(required=False, min_value=0.0)
    init_theta_min = serializers.FloatField(required=False)
    init_theta_max = serializers.FloatField(required=False)
    hole_x_min = serializers.FloatField(required=False)
    hole_x_max = serializers.FloatField(required=False)
    hole_theta_min = serializers.FloatField(required=False)
    hole_theta_max = serializers.FloatField(required=False)
    workspace_half_width = serializers.FloatField(required=False, min_value=0.0)
    workspace_height = serializers.FloatField(required=False, min_value=0.0)
    max_tilt = serializers.FloatField(required=False, min_value=0.0)

    def validate(self, attrs):
        from .envs import COMMON_DEFAULTS, VARIANT_DEFAULTS

        merged = {**COMMON_DEFAULTS, **VARIANT_DEFAULTS[EnvVariant(attrs['variant'])], **attrs}
        errors = {}
        if merged['clearance'] <= 0.0:
            errors['clearance'] = "Clearance must be positive."
        elif merged['clearance'] >= merged['hole_half_width']:
            errors['clearance'] = "Clearance must be smaller than the hole half-width."
        if merged['dt'] <= 0.0:
            errors['dt'] = "Time step must be positive."
        if merged['start_height'] <= 0.0:
            errors['start_height'] = "The piece must start above the mouth."
        if attrs['variant'] == EnvVariant.LAP_JOINT and merged['chamfer_depth'] != 0.0:
            errors['chamfer_depth'] = "The lap-joint has straight corners (no chamfer)."
        for low, high in (('init_theta_min', 'init_theta_max'), ('hole_x_min', 'hole_x_max'),
                          ('hole_theta_min', 'hole_theta_max')):
            if merged[low] > merged[high]:
                errors[low] = f"{low} must not exceed {high}."
        if errors:
            raise serializers.ValidationError(errors)
        return attrs


class ExperimentConfigSerializer(serializers.Serializer):
    """
    Validates a full experiment description.

    Included Fields:
        - the ablation cell: `structure_type`, `der_enabled`, `num_buffers`, `num_demos`, `env_name`, `seed`.
        - budgets: `iteration_timesteps`, `max_iterations`, `num_seeds`.
        - replay, DER, learner and worker hyperparameters (see `settings.EXPERIMENT_DEFAULTS`).
        - `env_overrides` (dict): `ENV_*` keys, validated by `EnvConfigSerializer`.
    """

    LIST_FIELDS = ('hidden_sizes',)

    structure_type = serializers.ChoiceField(choices=BufferStructure.choices)
    der_enabled = serializers.BooleanField()
    num_buffers = serializers.IntegerField(min_value=1)
    num_workers = serializers.IntegerField(min_value=1)
    num_demos = serializers.IntegerField(min_value=0)
    env_name = serializers.ChoiceField(choices=EnvVariant.choices)
    seed = serializers.IntegerField(min_value=0)
    num_seeds = serializers.IntegerField(min_value=1)
    iteration_timesteps = serializers.IntegerField(min_value=1)
    max_iterations = serializers.IntegerField(min_value=0)
    deterministic = serializers.BooleanField()

    buffer_capacity = serializers.IntegerField(min_value=2)
    demo_fraction = serializers.FloatField(min_value=0.0, max_value=0.5)
    priority_alpha = serializers.FloatField(min_value=0.0)
    priority_beta = serializers.FloatField(min_value=0.0)
    priority_epsilon = serializers.FloatField(min_value=0.0)
    train_batch_size = serializers.IntegerField(min_value=1)
    learning_starts = serializers.IntegerField(min_value=1)

    der_refresh_period = serializers.IntegerField(min_value=1)
    pool_capacity = serializers.IntegerField(min_value=1)

    learning_rate = serializers.FloatField(min_value=0.0)
    actor_loss_coeff = serializers.FloatField(min_value=0.0)
    critic_loss_coeff = serializers.FloatField(min_value=0.0)
    gamma = serializers.FloatField(min_value=0.0, max_value=1.0)
    target_update_freq = serializers.IntegerField(min_value=1)
    hidden_sizes = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1)
    reward_scale = serializers.FloatField()
    trainer_steps_per_episode = serializers.IntegerField(min_value=0)
    log_interval = serializers.IntegerField(min_value=1)

    action_max = serializers.FloatField()
    noise_sigma = serializers.FloatField(min_value=0.0)
    noise_ladder = serializers.BooleanField()
    fragment_size = serializers.IntegerField(min_value=1)
    max_episode_steps = serializers.IntegerField(min_value=1)
    demo_jitter = serializers.FloatField(min_value=0.0)

    env_overrides = serializers.DictField(required=False, default=dict)

    def validate_priority_epsilon(self, value):
        if value <= 0.0:
            raise serializers.ValidationError("The priority floor must be positive.")
        return value

    def validate_action_max(self, value):
        if value <= 0.0:
            raise serializers.ValidationError("The action bound must be positive.")
        return value

    def validate(self, attrs):
        structure = attrs['structure_type']
        required = {
            BufferStructure.NO_DEMOS: 0,
            BufferStructure.ONE_SHOT_ALL: 1,
            BufferStructure.ALL_SHOTS_ALL: 1,
            BufferStructure.ONE_SHOT_EACH: attrs['num_buffers'],
        }[structure]
        if attrs['num_demos'] < required:
            raise serializers.ValidationError(
                {'num_demos': f"{structure} needs at least {required} demonstrations, got {attrs['num_demos']}."}
            )
        demo_capacity = int(round(attrs['buffer_capacity'] * attrs['demo_fraction']))
        if demo_capacity >= attrs['buffer_capacity']:
            raise serializers.ValidationError({'demo_fraction': "The demonstration zone must leave a main region."})

        env_serializer = EnvConfigSerializer(data={**attrs.get('env_overrides', {}), 'variant': attrs['env_name']})
        if not env_serializer.is_valid():
            raise serializers.ValidationError({'env_overrides': env_serializer.errors})
        attrs['env_overrides'] = {k: v for k, v in env_serializer.validated_data.items() if k != 'variant'}
        return attrs

    def to_config(self):
        data = dict(self.validated_data)
        data['hidden_sizes'] = tuple(data['hidden_sizes'])
        data['structure_type'] = BufferStructure(data['structure_type'])
        data['env_name'] = EnvVariant(data['env_name'])
        return ExperimentConfig(**data)


class EpisodeHeaderSerializer(serializers.Serializer):
    """
    First record of an episode file.

    Included Fields:
        - `episode_id` (str), `variant` (str), `length` (int), `success` (bool).
        - `hole_x` (float, m) and `hole_theta` (float, rad): hole frame the episode ran in.
    """

    episode_id = serializers.CharField(allow_blank=True)
    variant = serializers.CharField(allow_blank=True)
    hole_x = serializers.FloatField()
    hole_theta = serializers.FloatField()
    length = serializers.IntegerField(min_value=1)
    success = serializers.BooleanField()


class TransitionSerializer(serializers.Serializer):
    """
    One transition line: `s` (13 floats), `a` (6 floats), `s_next` (13 floats), `r`, `done`, `success`.

    Vector fields follow the Observation / Action layouts exactly.
    """

    s = serializers.ListField(child=serializers.FloatField(), min_length=OBS_DIM, max_length=OBS_DIM)
    a = serializers.ListField(child=serializers.FloatField(), min_length=ACT_DIM, max_length=ACT_DIM)
    s_next = serializers.ListField(child=serializers.FloatField(), min_length=OBS_DIM, max_length=OBS_DIM)
    r = serializers.FloatField()
    done = serializers.BooleanField()
    success = serializers.BooleanField()

    def validate(self, attrs):
        if attrs['success'] and not attrs['done']:
            raise serializers.ValidationError("A successful transition must also be terminal.")
        return attrs

    def to_representation(self, instance):
        return {
            's': instance.s.to_list(),
            'a': instance.a.to_list(),
            's_next': instance.s_next.to_list(),
            'r': float(instance.r),
            'done': bool(instance.done),
            'success': bool(instance.success),
        }

    def to_transition(self, a_max):
        data = self.validated_data
        return Transition(Observation(data['s']), Action(data['a'], a_max), Observation(data['s_next']),
                          data['r'], data['done'], data['success'])
