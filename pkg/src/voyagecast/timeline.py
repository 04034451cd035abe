"""Discrete timeline: fixed-width half-open windows over UTC time.

Window ``t`` (t = 1, 2, ...) covers ``[epoch + (t-1)*delta, epoch + t*delta)``.
All external indices are 1-based. The epoch is assumed to sit on a UTC
midnight so that the within-day order index is well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

UTC = timezone.utc

DEFAULT_EPOCH = datetime(2021, 1, 1, tzinfo=UTC)

_US_PER_HOUR = 3_600_000_000


class TimelineError(ValueError):
    """Raised for timestamps or parameters outside the timeline's domain."""


def to_micros(ts: datetime) -> int:
    """UTC datetime -> integer microseconds since the Unix epoch.

    Integer arithmetic throughout; ``timestamp()`` would round-trip through a
    float and lose exactness for distant dates.
    """
    if ts.tzinfo is None:
        raise TimelineError(f"naive datetime not allowed: {ts!r}")
    delta = ts - datetime(1970, 1, 1, tzinfo=UTC)
    return (delta.days * 86_400 + delta.seconds) * 1_000_000 + delta.microseconds


_dt_to_us = to_micros


def from_micros(us: int) -> datetime:
    """Integer microseconds since the Unix epoch -> UTC datetime."""
    return datetime(1970, 1, 1, tzinfo=UTC) + timedelta(microseconds=int(us))


@dataclass(frozen=True)
class TimelineConfig:
    """Start instant and width of the discretization windows.

    ``delta_t_hours`` must divide 24 evenly so every calendar day holds a
    whole number of windows.
    """

    epoch: datetime = DEFAULT_EPOCH
    delta_t_hours: float = 6.0
    epoch_us: int = field(init=False, repr=False)
    delta_us: int = field(init=False, repr=False)

    def __post_init__(self):
        if self.delta_t_hours <= 0:
            raise TimelineError(f"delta_t_hours must be > 0, got {self.delta_t_hours}")
        wpd = 24.0 / self.delta_t_hours
        if abs(wpd - round(wpd)) > 1e-9:
            raise TimelineError(
                f"delta_t_hours={self.delta_t_hours} does not divide 24 evenly"
            )
        delta_us = self.delta_t_hours * _US_PER_HOUR
        if abs(delta_us - round(delta_us)) > 1e-6:
            raise TimelineError(
                f"delta_t_hours={self.delta_t_hours} is not representable at "
                "microsecond resolution"
            )
        object.__setattr__(self, "epoch_us", to_micros(self.epoch))
        object.__setattr__(self, "delta_us", int(round(delta_us)))

    @property
    def windows_per_day(self) -> int:
        return int(round(24.0 / self.delta_t_hours))


@dataclass(frozen=True)
class WindowIdentifier:
    """Calendar identity of a window: weekday code and within-day order."""

    g: int  # weekday of the window start, Monday=0 .. Sunday=6
    r: int  # 0-based position of the window within its calendar day


def window_of(ts: datetime, cfg: TimelineConfig) -> int:
    """Index of the unique window containing ``ts``.

    Raises ``TimelineError`` for timestamps before the epoch.
    """
    us = to_micros(ts)
    if us < cfg.epoch_us:
        raise TimelineError(f"timestamp {ts.isoformat()} precedes the epoch {cfg.epoch.isoformat()}")
    return int((us - cfg.epoch_us) // cfg.delta_us) + 1


def window_of_micros(us: np.ndarray, cfg: TimelineConfig) -> np.ndarray:
    """Vectorized ``window_of`` over int64 microsecond timestamps."""
    us = np.asarray(us, dtype=np.int64)
    if us.size and int(us.min()) < cfg.epoch_us:
        bad = from_micros(int(us.min()))
        raise TimelineError(f"timestamp {bad.isoformat()} precedes the epoch {cfg.epoch.isoformat()}")
    return ((us - cfg.epoch_us) // cfg.delta_us + 1).astype(np.int64)


def window_bounds(t: int, cfg: TimelineConfig) -> tuple[datetime, datetime]:
    """Half-open ``[start, end)`` instants of window ``t`` (t >= 1)."""
    if t < 1:
        raise TimelineError(f"window index must be >= 1, got {t}")
    start = cfg.epoch_us + (t - 1) * cfg.delta_us
    return from_micros(start), from_micros(start + cfg.delta_us)


def window_start_micros(t, cfg: TimelineConfig):
    """Start instant of window ``t`` in integer microseconds (scalar or array)."""
    t = np.asarray(t, dtype=np.int64)
    out = cfg.epoch_us + (t - 1) * cfg.delta_us
    return out if out.ndim else int(out)


def window_identifier(t: int, cfg: TimelineConfig) -> WindowIdentifier:
    """Weekday code (Monday=0) and within-day order index of window ``t``."""
    start, _ = window_bounds(t, cfg)
    midnight = start.replace(hour=0, minute=0, second=0, microsecond=0)
    offset_us = _dt_to_us(start) - _dt_to_us(midnight)
    r = int(offset_us // cfg.delta_us) % cfg.windows_per_day
    return WindowIdentifier(g=start.weekday(), r=r)


def window_identifiers(ts: np.ndarray, cfg: TimelineConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (g, r) arrays for an int64 array of window indices."""
    ts = np.asarray(ts, dtype=np.int64)
    start_us = cfg.epoch_us + (ts - 1) * cfg.delta_us
    days = start_us // (86_400 * 1_000_000)
    # 1970-01-01 was a Thursday (weekday 3)
    g = ((days + 3) % 7).astype(np.int64)
    within = start_us - days * 86_400 * 1_000_000
    r = (within // cfg.delta_us).astype(np.int64)
    return g, r
