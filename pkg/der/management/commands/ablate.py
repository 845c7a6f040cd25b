from pathlib import Path

from ...harness import ablation_cells, run_experiment, summarize, write_summary
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Runs the four buffer structures with and without DER over every seed, then summarizes."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--seeds', dest='num_seeds', type=int, help="Seeds per cell, starting at --seed.")

    CONFIG_OPTIONS = ExperimentCommand.CONFIG_OPTIONS + ('num_seeds',)

    def run(self, **options):
        base = self.load_config(options)
        output_dir = self.output_dir(options)
        cells = ablation_cells(base)
        metrics = []
        for number, config in enumerate(cells, start=1):
            self.stdout.write(f"[{number}/{len(cells)}] {config.run_name}")
            run_experiment(config, output_dir)
            metrics.append(Path(output_dir) / f"{config.run_name}.csv")
        summary_path, thresholds_path = write_summary(summarize(metrics), output_dir)
        self.stdout.write(self.style.SUCCESS(
            f"{len(cells)} run(s) done; summary in {summary_path}, thresholds in {thresholds_path}"
        ))
