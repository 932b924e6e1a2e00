"""
Shared diagnostic record for warnings and errors, its rich rendering and the JSON payload
the CLI writes to stderr.

Context values are facts about a numerical failure (a bus id, a residual, an iteration
count). Solvers often hand over numpy scalars, so every value passes through `plain()`
when a diagnostic is built.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from rich.console import Console, Group, RenderableType
from rich.panel import Panel
from rich.rule import Rule
from rich.table import Table
from rich.text import Text

__all__ = [
    "Severity",
    "Diagnostic",
    "Emitter",
    "plain",
    "plain_context",
    "render_diagnostic",
    "diagnostic_payload",
]

ContextValue = str | int | float | bool | None

MAX_FACTS = 12
FLOAT_DIGITS = 6


class Severity(StrEnum):
    INFO = "info"
    WARN = "warn"
    ERROR = "error"

    @property
    def style(self) -> str:
        return _HEADER_STYLE[self]


_HEADER_STYLE = {
    Severity.INFO: "bold cyan",
    Severity.WARN: "bold yellow",
    Severity.ERROR: "bold red",
}


def plain(value: object) -> ContextValue:
    """Reduce numpy scalars to Python ones; anything else non-scalar becomes its str form."""
    if isinstance(value, np.generic):
        value = value.item()
    if value is None or isinstance(value, str | bool | int | float):
        return value
    return str(value)


def plain_context(context: Mapping[str, object]) -> dict[str, ContextValue]:
    return {k: plain(v) for k, v in context.items()}


def _fmt(value: ContextValue) -> str:
    if isinstance(value, float):
        return f"{value:.{FLOAT_DIGITS}g}"
    return str(value)


@dataclass(frozen=True, slots=True)
class Diagnostic:
    message: str
    severity: Severity = Severity.ERROR
    code: str | None = None
    context: dict[str, ContextValue] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    hint: str | None = None

    def header(self) -> str:
        code = f" [{self.code}]" if self.code else ""
        return f"{self.severity.upper()}{code}: {self.message}"

    def one_line(self) -> str:
        facts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.context.items())
        return f"{self.header()} ({facts})" if facts else self.header()


def diagnostic_payload(d: Diagnostic, *, kind: str) -> dict[str, object]:
    return {
        "error": kind,
        "code": d.code,
        "message": d.message,
        "context": dict(d.context),
    }


def _facts(context: Mapping[str, ContextValue]) -> Table:
    table = Table.grid(padding=(0, 2))
    table.add_column(style="italic")
    table.add_column()
    items = list(context.items())
    for k, v in items[:MAX_FACTS]:
        table.add_row(k, _fmt(v))
    if len(items) > MAX_FACTS:
        table.add_row("...", f"{len(items) - MAX_FACTS} more")
    return table


def render_diagnostic(d: Diagnostic) -> RenderableType:
    style = d.severity.style
    blocks: list[RenderableType] = [Text(d.header(), style=style), Rule(style=style)]
    if d.context:
        blocks.append(Panel.fit(_facts(d.context), border_style=style, padding=(0, 1)))

    trailer = Text()
    for n in d.notes:
        trailer.append("\n• ", style="dim")
        trailer.append(n)
    if d.hint:
        trailer.append("\nHint: ", style="italic dim")
        trailer.append(d.hint)
    if trailer.plain:
        blocks.append(trailer)
    return Group(*blocks)


class Emitter:
    """Prints diagnostics on one Console so warnings and errors share a stream."""

    def __init__(self, console: Console | None = None) -> None:
        self.console = console or Console(stderr=True)

    def emit(self, d: Diagnostic) -> None:
        self.console.print(render_diagnostic(d))
