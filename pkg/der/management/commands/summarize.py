from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from ...harness import summarize, write_summary


class Command(BaseCommand):
    help = "Aggregates run metrics across seeds into summary.csv and thresholds.csv."

    def add_arguments(self, parser):
        parser.add_argument('inputs', nargs='+', help="Metrics CSV files or directories holding them.")
        parser.add_argument('--output-dir', default=None, help="Defaults to the first input directory.")

    def handle(self, *args, **options):
        paths = []
        for item in map(Path, options['inputs']):
            if item.is_dir():
                paths.extend(p for p in item.glob('*.csv')
                             if not p.name.endswith('.train.csv') and p.name not in ('summary.csv', 'thresholds.csv')
                             and '.worker-' not in p.name)
            elif item.is_file():
                paths.append(item)
            else:
                raise CommandError(f"{item} does not exist.")
        if not paths:
            raise CommandError("No metrics files found.")
        output_dir = options['output_dir'] or (Path(options['inputs'][0]) if Path(options['inputs'][0]).is_dir()
                                               else Path(options['inputs'][0]).parent)
        summary = summarize(paths)
        summary_path, thresholds_path = write_summary(summary, output_dir)
        self.stdout.write(self.style.SUCCESS(
            f"Summarized {len(summary.thresholds)} cell(s) into {summary_path} and {thresholds_path}"
        ))
