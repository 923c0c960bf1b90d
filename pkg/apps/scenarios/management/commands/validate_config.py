from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import ParamError
from apps.core.exporters import dumps
from apps.scenarios.services import ScenarioService, load_config


class Command(BaseCommand):
    help = 'Check a scenario config and print diagnostics as JSON'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Path to the scenario config (JSON)')
        parser.add_argument('--set', action='append', default=[], dest='overrides',
                            metavar='KEY=VALUE', help='Override a scalar config field')

    def handle(self, *args, **options):
        try:
            data = load_config(options['config'], options['overrides'])
        except ParamError as e:
            raise CommandError(e.message, returncode=e.exit_code)

        diagnostics = ScenarioService().validate(data)
        self.stdout.write(dumps(diagnostics))
        if any(d['level'] == 'error' for d in diagnostics):
            raise CommandError('config has errors', returncode=ParamError.exit_code)
