"""
Shared plumbing of the experiment commands.

`ExperimentCommand` adds the common flags and builds an `ExperimentConfig` with the precedence
CLI flag > experiment file > .env / environment > built-in default. Domain errors and
validation errors leave the command as `CommandError`.
"""

import argparse
import logging

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from ..core import BufferStructure, ExperimentConfig
from ..envs import EnvVariant
from ..exceptions import DerError

logger = logging.getLogger("django.der.logger")


class ExperimentCommand(BaseCommand):
    def add_arguments(self, parser):
        parser.add_argument('--config', help="Experiment file (KEY=value lines).")
        parser.add_argument('--output-dir', default=None, help="Where results are written (default: RUNS_DIR).")
        parser.add_argument('--seed', type=int)
        parser.add_argument('--env', dest='env_name', choices=EnvVariant.values)
        parser.add_argument('--structure', dest='structure_type', choices=BufferStructure.values)
        parser.add_argument('--der', dest='der_enabled', action=argparse.BooleanOptionalAction, default=None)
        parser.add_argument('--workers', dest='num_workers', type=int)
        parser.add_argument('--iterations', dest='max_iterations', type=int)
        parser.add_argument('--deterministic', action='store_true', default=None)

    CONFIG_OPTIONS = ('seed', 'env_name', 'structure_type', 'der_enabled', 'num_workers', 'max_iterations',
                      'deterministic')

    def load_config(self, options):
        overrides = {key: options.get(key) for key in self.CONFIG_OPTIONS}
        if options.get('config'):
            return ExperimentConfig.from_env_file(options['config'], **overrides)
        return ExperimentConfig.from_mapping(**overrides)

    def output_dir(self, options):
        return options.get('output_dir') or settings.RUNS_DIR

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except ValidationError as exc:
            raise CommandError(f"Invalid configuration: {exc.detail}") from exc
        except (DerError, ImproperlyConfigured) as exc:
            raise CommandError(str(exc)) from exc

    def run(self, **options):
        raise NotImplementedError
