import time
from dataclasses import dataclass, field
from datetime import UTC, datetime


def now_iso() -> str:
    return datetime.now(UTC).isoformat()


@dataclass(slots=True)
class Stopwatch:
    """Wall-clock timer; `elapsed` keeps counting until `stop()`."""

    _start: float = field(default_factory=time.perf_counter)
    _stop: float | None = None

    def stop(self) -> float:
        self._stop = time.perf_counter()
        return self.elapsed

    @property
    def elapsed(self) -> float:
        end = self._stop if self._stop is not None else time.perf_counter()
        return end - self._start
