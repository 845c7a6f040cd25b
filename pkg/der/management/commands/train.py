from ...harness import ExperimentRunner
from ...storage import read_episodes
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Trains one ablation cell and writes its metrics CSV, training log and checkpoint."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--demos', help="Directory of episode files to use instead of scripted demos.")
        parser.add_argument('--worker-logs', action='store_true', help="Write one episode log per worker.")

    def run(self, **options):
        config = self.load_config(options)
        demos = read_episodes(options['demos'], config.action_max) if options.get('demos') else None
        runner = ExperimentRunner(config, self.output_dir(options), demos, options.get('worker_logs', False))
        records = runner.run()
        final = f", final success rate {records[-1].success_rate:.3f}" if records else ""
        self.stdout.write(self.style.SUCCESS(
            f"{config.run_name}: {len(records)} iteration(s){final}; metrics in {runner.paths.metrics}"
        ))
