from ...harness import evaluate
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Runs noise-free episodes with a trained checkpoint and reports the success count."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('checkpoint', help="Checkpoint written by `train`.")
        parser.add_argument('--episodes', type=int, default=10)

    def run(self, **options):
        config = self.load_config(options)
        result = evaluate(config, options['checkpoint'], options['episodes'])
        self.stdout.write(self.style.SUCCESS(
            f"{result.successes}/{result.episodes} successful episode(s), mean reward {result.mean_reward:.3f}"
        ))
