"""Command-line interface: `python -m cli <command> --config <path>`."""

__all__ = ['main', 'build_parser']

from .commands import build_parser, main
