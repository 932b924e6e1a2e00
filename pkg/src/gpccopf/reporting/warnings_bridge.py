"""
Warning categories raised by the library, and an opt-in bridge that shows them with rich.
The bridge only replaces `warnings.showwarning`; filters keep working. The CLI installs it,
library code never does.
"""

from __future__ import annotations

import warnings
from collections.abc import Callable
from typing import TextIO

from rich.console import Console

from gpccopf.reporting.diagnostics import Diagnostic, Emitter, Severity, plain_context

__all__ = [
    "GpccopfWarning",
    "DatasetWarning",
    "ValidationWarning",
    "StaleArtifactWarning",
    "warn_diagnostic",
    "install_warnings_bridge",
]


# ─────────── categories ───────────


class GpccopfWarning(Warning):
    """
    Base gpccopf warning category. Carries a Diagnostic; works fine without the bridge
    (plain text via str) and pretty-prints when the bridge is installed.
    """

    def __init__(self, diagnostic: Diagnostic) -> None:
        super().__init__(diagnostic.one_line())
        self.diagnostic = diagnostic


class DatasetWarning(GpccopfWarning):
    """Dropped or suspicious samples during dataset generation."""


class ValidationWarning(GpccopfWarning):
    """Monte-Carlo reports that should not be trusted as-is."""


class StaleArtifactWarning(GpccopfWarning):
    """An upstream artifact changed after the manifest recorded it."""


def warn_diagnostic(
    category: type[GpccopfWarning],
    message: str,
    *,
    code: str | None = None,
    hint: str | None = None,
    stacklevel: int = 2,
    **context: object,
) -> None:
    d = Diagnostic(
        message=message,
        severity=Severity.WARN,
        code=code,
        context=plain_context(context),
        hint=hint,
    )
    warnings.warn(category(d), stacklevel=stacklevel + 1)


# ─────────── bridge ───────────


def install_warnings_bridge(
    *,
    emitter: Emitter | None = None,
    only_gpccopf: bool = True,
) -> Callable[[], None]:
    """
    Route Python's warnings display for gpccopf warnings through Rich.

    - Returns an `uninstall()` function to restore the previous handler.
    - If `only_gpccopf=True` (default), other warnings are passed through unchanged.
    """
    # Default to stderr per warnings convention
    em = emitter or Emitter(Console(stderr=True))

    prev_showwarning = warnings.showwarning

    def _showwarning(
        message: Warning | str,
        category: type[Warning],
        filename: str,
        lineno: int,
        file: TextIO | None = None,
        line: str | None = None,
    ) -> None:
        if isinstance(message, GpccopfWarning):
            em.emit(message.diagnostic)
            return
        if only_gpccopf:
            return prev_showwarning(message, category, filename, lineno, file=file, line=line)
        em.console.print(f"{category.__name__}: {message} ({filename}:{lineno})")

    warnings.showwarning = _showwarning

    def uninstall() -> None:
        warnings.showwarning = prev_showwarning

    return uninstall
