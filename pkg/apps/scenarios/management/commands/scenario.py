from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import ParamError
from apps.scenarios.serializers import SCENARIOS
from apps.scenarios.services import ScenarioService, load_config


class Command(BaseCommand):
    help = 'Run a named predpack scenario from a JSON config'

    def add_arguments(self, parser):
        parser.add_argument('name', choices=SCENARIOS, help='Scenario to run')
        parser.add_argument(
            '--config',
            required=True,
            help='Path to the scenario config (JSON)',
        )
        parser.add_argument(
            '--set',
            action='append',
            default=[],
            dest='overrides',
            metavar='KEY=VALUE',
            help='Override a scalar config field, e.g. params.beta=50 (repeatable)',
        )
        parser.add_argument(
            '--out',
            help='Output directory (default: the config output_dir, then runs/<scenario>)',
        )

    def handle(self, *args, **options):
        service = ScenarioService()
        try:
            data = load_config(options['config'], options['overrides'])
        except ParamError as e:
            service.report_failure(options['name'], e, out=options['out'])
            raise CommandError(e.message, returncode=e.exit_code)

        if data.get('scenario', options['name']) != options['name']:
            error = ParamError(
                f"config is for scenario {data['scenario']!r}, not {options['name']!r}",
                field='scenario',
            )
            out = options['out'] or data.get('output_dir')
            service.report_failure(options['name'], error, out=out)
            raise CommandError(error.message, returncode=error.exit_code)
        data['scenario'] = options['name']

        outcome = service.run_scenario(data, out=options['out'])
        if outcome.exit_code:
            error = outcome.error['error']
            where = f" ({error['field']})" if error.get('field') else ''
            raise CommandError(f"{error['type']}: {error['message']}{where}",
                               returncode=outcome.exit_code)
        self.stdout.write(self.style.SUCCESS(
            f"{options['name']} finished in {outcome.output_dir} "
            f"({len(outcome.artifacts)} artifacts)"))
