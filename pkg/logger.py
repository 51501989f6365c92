import os
import sys

DEBUG = 0
INFO = 1
WARNING = 2
ERROR = 3
levels = {DEBUG: "DEBUG", INFO: "INFO", WARNING: "WARNING", ERROR: "ERROR"}


def _level_from_env(value: str | None) -> int:
    if not value:
        return WARNING
    if value.isdigit():
        return int(value)
    by_name = {name: level for level, name in levels.items()}
    return by_name.get(value.upper(), WARNING)


LOGLEVEL = _level_from_env(os.environ.get("SHEETCHECK_LOGLEVEL"))


def set_level(loglevel: int | str):
    """Change the threshold at runtime (CLI -v, tests)"""
    global LOGLEVEL
    LOGLEVEL = loglevel if isinstance(loglevel, int) else _level_from_env(loglevel)


def log_message(loglevel: int, logmessage: str):
    """Simple logging function with levels; stdout is left to command output"""
    if loglevel >= LOGLEVEL:
        print(f"[{levels.get(loglevel, 'LOG')}] {logmessage}", file=sys.stderr)
