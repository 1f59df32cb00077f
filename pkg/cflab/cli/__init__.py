from .commands import COMMANDS, run
from .parser import build_parser

__all__ = [
    'COMMANDS',
    'run',
    'build_parser',
]
