#!/usr/bin/env python
"""Command-line entry point of the quenched EVT toolkit.

``python manage.py run <subcommand> [preset] --config PATH`` runs one
experiment; the other Django commands (``test``, ``check``) work as usual.
"""
import os
import sys


def main(argv=None):
    """Run a management command, by default the one named on the command line."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'config.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Install the packages of requirements.txt "
            "into the active environment."
        ) from exc
    execute_from_command_line(sys.argv if argv is None else argv)


if __name__ == '__main__':
    main()
