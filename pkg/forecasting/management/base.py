from django.core.management.base import BaseCommand, CommandError

from ..exceptions import PatchcastError
from ..runs import resolve_flags


class ExperimentCommand(BaseCommand):
    """Base for the experiment commands.

    Subclasses set ``form_class`` and ``defaults`` and implement ``run``.
    Library errors leave the command as ``CommandError`` carrying the
    error class's exit code.
    """
    form_class = None
    defaults = None

    def add_arguments(self, parser):
        parser.add_argument('--out', help='Output directory (default: PATCHCAST["OUTPUT_DIR"])')
        parser.add_argument('--config', help='JSON file of flag values; a previous run manifest replays that run')
        parser.add_argument(
            '--desk-scale', action='store_const', const=True, default=None,
            help='Use the desk-scale preset from PATCHCAST["DESK_SCALE"]',
        )

    def handle(self, *args, **options):
        try:
            form, sections = resolve_flags(self.form_class, options, type(self).defaults, options.get('config'))
            self.run(form, sections)
        except PatchcastError as e:
            raise CommandError(str(e), returncode=e.exit_code) from e

    def run(self, form, sections):
        raise NotImplementedError
