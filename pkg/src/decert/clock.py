from __future__ import annotations

import datetime
from typing import Callable

Clock = Callable[[], datetime.datetime]

UTC = datetime.timezone.utc


def system_clock() -> datetime.datetime:
    return datetime.datetime.now(UTC)


class FixedClock:
    """A settable clock for tests and fixture generation."""

    def __init__(self, at: datetime.datetime):
        self.at = as_utc(at)

    def __call__(self) -> datetime.datetime:
        return self.at

    def advance(self, delta: datetime.timedelta) -> None:
        self.at = self.at + delta


def as_utc(at: datetime.datetime) -> datetime.datetime:
    if at.tzinfo is None:
        return at.replace(tzinfo=UTC)
    return at.astimezone(UTC)


def whole_seconds(at: datetime.datetime) -> datetime.datetime:
    # X.509 times carry no sub-second part
    return as_utc(at).replace(microsecond=0)


def parse_instant(text: str, clock: Clock = system_clock) -> datetime.datetime:
    """Parse ``now`` or an RFC 3339 timestamp such as ``2025-01-01T00:00:00Z``."""
    if text == "now":
        return clock()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    return as_utc(datetime.datetime.fromisoformat(text))


def format_instant(at: datetime.datetime) -> str:
    return as_utc(at).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_duration(text: str) -> datetime.timedelta:
    """``90s``, ``5m``, ``6h``, ``30d`` or a bare number of seconds."""
    text = text.strip()
    units = {"s": 1, "m": 60, "h": 3600, "d": 86400}
    if text and text[-1] in units:
        return datetime.timedelta(seconds=float(text[:-1]) * units[text[-1]])
    return datetime.timedelta(seconds=float(text))
