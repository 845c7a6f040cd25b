from pathlib import Path

import environ

BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env()
environ.Env.read_env(env_file=BASE_DIR / '.env')

# No request handling happens here, the key only satisfies Django's settings contract.
SECRET_KEY = env("SECRET_KEY", default="der-desk-scale")

DEBUG = env.bool("DEBUG", default=False)

ALLOWED_HOSTS = []

# Applications
INSTALLED_APPS = [
    'rest_framework',
    'der',
]

# Nothing is persisted through the ORM: runs write CSV files and checkpoints.
DATABASES = {}

LOG_LEVEL = env("LOG_LEVEL", default="INFO")

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'django.der': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}

# Where `train`, `ablate` and `demo_gen` write when no --output-dir is given.
RUNS_DIR = Path(env("DER_RUNS_DIR", default=str(BASE_DIR / 'runs')))

# Experiment defaults.
# Learning hyperparameters follow common Ape-X DDPG settings; buffer size and budgets have
# desk-scale values. Every key is overridable through
# `DER_<FIELD>` in .env or the process environment, and again by an experiment file.
EXPERIMENT_DEFAULTS = {
    # ablation cell
    'structure_type': env("DER_STRUCTURE_TYPE", default="NoDemos"),
    'der_enabled': env.bool("DER_DER_ENABLED", default=True),
    'num_buffers': env.int("DER_NUM_BUFFERS", default=6),
    'num_workers': env.int("DER_NUM_WORKERS", default=5),
    'num_demos': env.int("DER_NUM_DEMOS", default=6),
    'env_name': env("DER_ENV_NAME", default="peg_in_hole"),
    'seed': env.int("DER_SEED", default=0),
    'num_seeds': env.int("DER_NUM_SEEDS", default=3),
    'iteration_timesteps': env.int("DER_ITERATION_TIMESTEPS", default=10_000),
    'max_iterations': env.int("DER_MAX_ITERATIONS", default=150),
    'deterministic': env.bool("DER_DETERMINISTIC", default=False),

    # replay
    'buffer_capacity': env.int("DER_BUFFER_CAPACITY", default=20_000),
    'demo_fraction': env.float("DER_DEMO_FRACTION", default=0.01),
    'priority_alpha': env.float("DER_PRIORITY_ALPHA", default=0.5),
    'priority_beta': env.float("DER_PRIORITY_BETA", default=0.4),
    'priority_epsilon': env.float("DER_PRIORITY_EPSILON", default=1e-6),
    'train_batch_size': env.int("DER_TRAIN_BATCH_SIZE", default=512),
    'learning_starts': env.int("DER_LEARNING_STARTS", default=1_000),

    # dynamic experience replay
    'der_refresh_period': env.int("DER_DER_REFRESH_PERIOD", default=500),
    'pool_capacity': env.int("DER_POOL_CAPACITY", default=100),

    # learner
    'learning_rate': env.float("DER_LEARNING_RATE", default=1e-3),
    'actor_loss_coeff': env.float("DER_ACTOR_LOSS_COEFF", default=0.1),
    'critic_loss_coeff': env.float("DER_CRITIC_LOSS_COEFF", default=1.0),
    'gamma': env.float("DER_GAMMA", default=0.99),
    'target_update_freq': env.int("DER_TARGET_UPDATE_FREQ", default=2_000),
    'hidden_sizes': env.list("DER_HIDDEN_SIZES", cast=int, default=[64, 64]),
    'reward_scale': env.float("DER_REWARD_SCALE", default=1.0),
    'trainer_steps_per_episode': env.int("DER_TRAINER_STEPS_PER_EPISODE", default=10),
    'log_interval': env.int("DER_LOG_INTERVAL", default=100),

    # workers
    'action_max': env.float("DER_ACTION_MAX", default=0.05),
    'noise_sigma': env.float("DER_NOISE_SIGMA", default=0.005),
    'noise_ladder': env.bool("DER_NOISE_LADDER", default=False),
    'fragment_size': env.int("DER_FRAGMENT_SIZE", default=50),
    'max_episode_steps': env.int("DER_MAX_EPISODE_STEPS", default=300),
    'demo_jitter': env.float("DER_DEMO_JITTER", default=0.001),
}
