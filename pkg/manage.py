#!/usr/bin/env python
"""Entrypoint for the experiment commands: demo_gen, train, ablate, summarize, evaluate."""
import os
import sys


def main():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'config.settings')

    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError("Django not installed; run `pip install -r requirements.txt` first.") from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
