"""Training-time event augmentations: EventDilation, EventDrop and x-axis flip.

All functions are pure and deterministic given their ``seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .events import EventHistogram, EventStream

DROP_MODES = ("random", "time-window", "spatial-region")


@dataclass(frozen=True)
class DilationConfig:
    """Bounds (in microseconds) of the uniformly drawn window length."""

    t_min: int
    t_max: int

    def __post_init__(self):
        if not (0 < self.t_min <= self.t_max):
            raise ValueError(f"need 0 < t_min <= t_max, got {self.t_min}, {self.t_max}")


@dataclass(frozen=True)
class DropConfig:
    # mode=None draws one of DROP_MODES with equal probability on every call
    mode: str | None = None
    ratio: float = 0.2

    def __post_init__(self):
        if self.mode is not None and self.mode not in DROP_MODES:
            raise ValueError(f"unknown EventDrop mode {self.mode!r}")
        if not (0.0 <= self.ratio < 1.0):
            raise ValueError(f"drop ratio must be in [0, 1), got {self.ratio}")


def sample_dilation_length(cfg: DilationConfig, seed: int) -> int:
    rng = np.random.default_rng(seed)
    return int(rng.integers(cfg.t_min, cfg.t_max, endpoint=True))


def dilation_window(t_c: int, dt: int) -> tuple[float, float]:
    return (t_c - dt / 2, t_c + dt / 2)


def event_dilation(
    stream: EventStream, t_c: int, cfg: DilationConfig, seed: int, dt: int | None = None
) -> EventStream:
    """Keep the events with ``t`` in the closed interval ``[t_c - dt/2, t_c + dt/2]``.

    ``dt`` is drawn uniformly from ``[cfg.t_min, cfg.t_max]`` unless given.
    The interval is closed on both ends, unlike histogram windows, so an
    event sitting exactly on the upper edge is kept here.
    """
    if dt is None:
        dt = sample_dilation_length(cfg, seed)
    # compare doubled integers so odd dt needs no floating point
    lo2 = 2 * int(t_c) - int(dt)
    hi2 = 2 * int(t_c) + int(dt)
    lo = np.searchsorted(2 * stream.t, lo2, side="left")
    hi = np.searchsorted(2 * stream.t, hi2, side="right")
    return stream.select(slice(lo, hi))


def event_drop(stream: EventStream, cfg: DropConfig, seed: int) -> EventStream:
    """Remove events (never add or reorder) along one dimension."""
    rng = np.random.default_rng(seed)
    mode = cfg.mode if cfg.mode is not None else DROP_MODES[int(rng.integers(len(DROP_MODES)))]
    n = len(stream)
    if cfg.ratio == 0.0 or n == 0:
        return stream
    if mode == "random":
        keep = rng.random(n) >= cfg.ratio
    elif mode == "time-window":
        t0, t1 = int(stream.t[0]), int(stream.t[-1]) + 1
        span = int(round(cfg.ratio * (t1 - t0)))
        start = t0 + int(rng.integers(0, (t1 - t0) - span, endpoint=True))
        keep = (stream.t < start) | (stream.t >= start + span)
    else:
        side = math.sqrt(cfg.ratio)
        rw = int(round(side * stream.width))
        rh = int(round(side * stream.height))
        x0 = int(rng.integers(0, stream.width - rw, endpoint=True))
        y0 = int(rng.integers(0, stream.height - rh, endpoint=True))
        inside = (stream.x >= x0) & (stream.x < x0 + rw) & (stream.y >= y0) & (stream.y < y0 + rh)
        keep = ~inside
    return stream.select(keep)


def flip_x(hist: EventHistogram) -> EventHistogram:
    return EventHistogram(np.ascontiguousarray(hist.counts[:, :, ::-1]), hist.window)
