from pathlib import Path

from ...harness import build_demos
from ...storage import write_episodes
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Generates scripted demonstrations and stores them as episode files."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--count', dest='num_demos', type=int, help="Number of demonstrations.")

    CONFIG_OPTIONS = ExperimentCommand.CONFIG_OPTIONS + ('num_demos',)

    def run(self, **options):
        config = self.load_config(options)
        directory = Path(self.output_dir(options)) / 'demos' / f"{config.env_name}_seed-{config.seed}"
        paths = write_episodes(directory, build_demos(config))
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(paths)} demonstration(s) to {directory}"))
