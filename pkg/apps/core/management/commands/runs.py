from django.core.management.base import BaseCommand

from apps.core.models import COMMAND_CHOICES, RUN_STATUS_CHOICES, PipelineRun


class Command(BaseCommand):
    help = "List recorded pipeline runs, newest first"

    def add_arguments(self, parser):
        parser.add_argument("--limit", type=int, default=20)
        parser.add_argument("--command", choices=[c for c, _ in COMMAND_CHOICES], default=None)
        parser.add_argument("--status", choices=[s for s, _ in RUN_STATUS_CHOICES], default=None)

    def handle(self, *args, **options):
        runs = PipelineRun.objects.all()
        if options["command"]:
            runs = runs.filter(command=options["command"])
        if options["status"]:
            runs = runs.filter(status=options["status"])

        for run in runs[: options["limit"]]:
            duration = f"{run.duration.total_seconds():.1f}s" if run.duration else "-"
            line = (
                f"{run.id}  {run.command:<10} {run.status:<10} seed={run.seed} "
                f"{duration:>8}  {run.config_hash[:12]}  {run.version}"
            )
            if run.status == "failed":
                self.stdout.write(self.style.ERROR(f"{line}  {run.error_message}"))
            else:
                self.stdout.write(line)
