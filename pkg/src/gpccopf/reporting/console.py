"""
Terminal side of error reporting for the `gpccopf` command.

Every stage reports a failure twice: a rich rendering when stderr is a terminal, and one
JSON line (`error`, `code`, `message`, `context`) that scripts can parse. The process
exits with the error's `exit_code`. Logging goes through a RichHandler on the `gpccopf`
logger; library modules only call `logging.getLogger(__name__)`.

Environment: GPCCOPF_COLOR (auto | always | never) and GPCCOPF_PRETTY_WARNINGS
(auto | true | false) fill in whatever the caller leaves unset.
"""

from __future__ import annotations

import contextvars
import functools
import json
import logging
import os
import sys
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from typing import ParamSpec, TypeVar

from rich.console import Console
from rich.logging import RichHandler

from gpccopf.errors import GpccopfError
from gpccopf.reporting.diagnostics import Emitter, diagnostic_payload
from gpccopf.reporting.warnings_bridge import install_warnings_bridge

__all__ = [
    "use_diagnostics",
    "print_exception",
    "run_with_diagnostics",
    "configure_logging",
]

P = ParamSpec("P")
R = TypeVar("R")

PACKAGE_LOGGER = "gpccopf"

_active_console: contextvars.ContextVar[Console | None] = contextvars.ContextVar(
    "_active_console", default=None
)


def _setting(value: bool | str | None, env: str) -> str:
    if value is None:
        value = os.getenv(env, "auto")
    return str(value).lower()


@contextmanager
def use_diagnostics(
    *,
    color: str | None = None,
    pretty: bool | str | None = None,
    only_gpccopf: bool = True,
) -> Iterator[Console]:
    """Bind a stderr Console for the block and, if pretty, route gpccopf warnings to it."""
    color = _setting(color, "GPCCOPF_COLOR")
    mode = _setting(pretty, "GPCCOPF_PRETTY_WARNINGS")
    console = Console(
        stderr=True,
        force_terminal=color == "always",
        no_color=color == "never",
    )
    bridge = mode in {"true", "1"} or (mode == "auto" and sys.stderr.isatty())

    token = _active_console.set(console)
    uninstall = (
        install_warnings_bridge(emitter=Emitter(console), only_gpccopf=only_gpccopf)
        if bridge
        else None
    )
    try:
        yield console
    finally:
        if uninstall is not None:
            uninstall()
        _active_console.reset(token)


def print_exception(e: GpccopfError, *, machine_readable: bool = True) -> None:
    """
    Report a GpccopfError on stderr: rich rendering when attached to a terminal, and
    always one JSON line for scripts.
    """
    console = _active_console.get() or Console(stderr=True)
    if console.is_terminal:
        console.print(e)
    if machine_readable:
        payload = diagnostic_payload(e.diagnostic, kind=type(e).__name__)
        sys.stderr.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
        sys.stderr.flush()


def run_with_diagnostics(
    *,
    color: str | None = None,
    pretty: bool | str | None = None,
    exit_on_exception: bool = True,
) -> Callable[[Callable[P, R]], Callable[P, R]]:
    """
    Decorator: runs the function inside `use_diagnostics(...)`.
    If a GpccopfError escapes, report it and (by default) exit with its exit_code.
    """

    def deco(fn: Callable[P, R]) -> Callable[P, R]:
        @functools.wraps(fn)
        def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
            with use_diagnostics(color=color, pretty=pretty):
                try:
                    return fn(*args, **kwargs)
                except GpccopfError as e:
                    print_exception(e)
                    if exit_on_exception:
                        raise SystemExit(e.exit_code) from e
                    raise

        return wrapper

    return deco


def configure_logging(verbosity: int = 0, *, console: Console | None = None) -> logging.Logger:
    """
    Install a single RichHandler on the package logger. 0 → WARNING, 1 → INFO, 2+ → DEBUG.
    Calling again replaces the handler.
    """
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logger = logging.getLogger(PACKAGE_LOGGER)
    for h in list(logger.handlers):
        if isinstance(h, RichHandler):
            logger.removeHandler(h)
    handler = RichHandler(
        console=console or _active_console.get() or Console(stderr=True),
        show_path=verbosity >= 2,
        rich_tracebacks=False,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger
