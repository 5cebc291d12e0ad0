"""Event streams, histograms, file formats and place slicing.

Timestamps are integer microseconds everywhere in this module. Histogram
windows are half-open ``[t_start, t_end)`` so adjacent windows partition a
stream.
"""

from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GeometryError, MalformedRecordError, TrackTooShortError

log = logging.getLogger(__name__)

EVT_MAGIC = b"EVT1"
EVT_HEADER = struct.Struct("<4sHHI")
EVT_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "i1")])

EARTH_RADIUS_M = 6_371_008.8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered polarity events on a ``width x height`` sensor.

    Polarity is stored as +1/-1. ``n_reordered`` counts events that arrived
    out of timestamp order and were sorted on construction.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    n_reordered: int = 0

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        x = np.asarray(self.x, dtype=np.int32)
        y = np.asarray(self.y, dtype=np.int32)
        p = np.asarray(self.p, dtype=np.int8)
        if not (t.shape == x.shape == y.shape == p.shape) or t.ndim != 1:
            raise ValueError("event arrays must be 1-D and equally long")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"invalid geometry {self.width}x{self.height}")
        if len(t):
            if t.min() < 0:
                raise ValueError("timestamps must be non-negative")
            bad = (x < 0) | (x >= self.width) | (y < 0) | (y >= self.height)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise GeometryError(
                    f"event {i} at ({x[i]}, {y[i]}) outside {self.width}x{self.height} sensor"
                )
            if not np.all((p == 1) | (p == -1)):
                raise ValueError("polarity must be +1 or -1")
        n_reordered = self.n_reordered
        if len(t) > 1 and np.any(np.diff(t) < 0):
            order = np.argsort(t, kind="stable")
            n_reordered += int(np.count_nonzero(order != np.arange(len(t))))
            t, x, y, p = t[order], x[order], y[order], p[order]
            log.warning("sorted %d out-of-order events", n_reordered)
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "n_reordered", n_reordered)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def geometry(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def duration(self) -> int:
        return int(self.t[-1] - self.t[0]) if len(self.t) else 0

    def select(self, mask_or_index) -> "EventStream":
        """Sub-stream from a boolean mask or a sorted index array."""
        return EventStream(
            self.t[mask_or_index], self.x[mask_or_index], self.y[mask_or_index],
            self.p[mask_or_index], self.width, self.height,
        )

    def time_slice(self, t_start: int, t_end: int) -> "EventStream":
        """Events with ``t_start <= t < t_end``."""
        lo, hi = np.searchsorted(self.t, [t_start, t_end], side="left")
        return self.select(slice(lo, hi))

    def as_tuples(self) -> np.ndarray:
        return np.stack([self.t, self.x, self.y, self.p.astype(np.int64)], axis=1)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class EventHistogram:
    """Unnormalized 2-channel count grid; channel 0 is ON (+1), 1 is OFF (-1)."""

    counts: np.ndarray
    window: tuple[int, int]

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3 or c.shape[0] != 2:
            raise GeometryError(f"histogram must have shape [2, H, W], got {c.shape}")
        if not np.issubdtype(c.dtype, np.integer):
            raise TypeError("histogram counts must be integers")
        if c.size and c.min() < 0:
            raise ValueError("histogram counts must be non-negative")
        object.__setattr__(self, "counts", _frozen(c))

    @property
    def height(self) -> int:
        return self.counts.shape[1]

    @property
    def width(self) -> int:
        return self.counts.shape[2]

    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, EventHistogram):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.counts, other.counts)

    __hash__ = None


def build_histogram(stream: EventStream, window: tuple[int, int]) -> EventHistogram:
    t_start, t_end = int(window[0]), int(window[1])
    if t_start >= t_end:
        raise ValueError(f"empty or inverted window [{t_start}, {t_end})")
    part = stream.time_slice(t_start, t_end)
    h, w = stream.height, stream.width
    channel = (part.p < 0).astype(np.int64)
    flat = channel * (h * w) + part.y.astype(np.int64) * w + part.x
    counts = np.bincount(flat, minlength=2 * h * w).astype(np.int32).reshape(2, h, w)
    return EventHistogram(counts, (t_start, t_end))


def spatial_decimate(stream: EventStream, target_geometry: tuple[int, int]) -> EventStream:
    """Map events onto a smaller sensor with ``x' = floor(x * W' / W)``."""
    tw, th = int(target_geometry[0]), int(target_geometry[1])
    if tw > stream.width or th > stream.height:
        raise GeometryError(
            f"target {tw}x{th} larger than source {stream.width}x{stream.height}"
        )
    if tw <= 0 or th <= 0:
        raise GeometryError(f"invalid target geometry {tw}x{th}")
    x = (stream.x.astype(np.int64) * tw) // stream.width
    y = (stream.y.astype(np.int64) * th) // stream.height
    return EventStream(stream.t, x, y, stream.p, tw, th)


# --------------------------------------------------------------------------
# file formats


def _normalize_polarity(p: np.ndarray, where: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.int64)
    ok = (p == 1) | (p == -1) | (p == 0)
    if not ok.all():
        i = int(np.flatnonzero(~ok)[0])
        raise MalformedRecordError(f"bad polarity {p[i]} in {where} record {i}")
    return np.where(p == 0, -1, p).astype(np.int8)


def _read_csv_rows(path: Path, ncols: Sequence[int]) -> tuple[np.ndarray, int]:
    """Parse an integer/float CSV with an optional header, reporting bad lines."""
    rows = []
    first_data_line = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [s.strip() for s in line.split(",")]
            try:
                vals = [float(s) for s in parts]
            except ValueError:
                if first_data_line is None and not rows:
                    continue  # header
                raise MalformedRecordError(f"non-numeric field in {line!r}", line=lineno) from None
            if len(vals) not in ncols:
                raise MalformedRecordError(
                    f"expected {' or '.join(map(str, ncols))} columns, got {len(vals)}", line=lineno
                )
            if rows and len(vals) != len(rows[0]):
                raise MalformedRecordError("inconsistent column count", line=lineno)
            if first_data_line is None:
                first_data_line = lineno
            rows.append(vals)
    if not rows:
        return np.zeros((0, ncols[0])), first_data_line or 0
    return np.asarray(rows, dtype=np.float64), first_data_line


def _parse_csv_events(path: Path, geometry: tuple[int, int]) -> EventStream:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty file
            data = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2, comments="#")
        if data.size and data.shape[1] != 4:
            raise ValueError
    except ValueError:
        data = None
    if data is None:
        rows, first = _read_csv_rows(path, (4,))
        frac = rows != np.round(rows)
        if frac.any():
            i = int(np.flatnonzero(frac.any(axis=1))[0])
            raise MalformedRecordError("non-integer field", line=first + i)
        data = rows.astype(np.int64)
    if data.size == 0:
        return EventStream.empty(*geometry)
    p = _normalize_polarity(data[:, 3], "csv")
    return EventStream(data[:, 0], data[:, 1], data[:, 2], p, *geometry)


def _parse_evt_binary(path: Path, geometry: tuple[int, int] | None) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < EVT_HEADER.size:
        raise MalformedRecordError("truncated header", offset=len(raw))
    magic, width, height, reserved = EVT_HEADER.unpack_from(raw, 0)
    if magic != EVT_MAGIC:
        raise MalformedRecordError(f"bad magic {magic!r}", offset=0)
    if reserved != 0:
        raise MalformedRecordError("reserved header field must be 0", offset=8)
    if geometry is not None and tuple(geometry) != (width, height):
        raise GeometryError(f"file geometry {width}x{height} != expected {geometry[0]}x{geometry[1]}")
    body = len(raw) - EVT_HEADER.size
    if body % EVT_RECORD.itemsize:
        n_ok = body // EVT_RECORD.itemsize
        raise MalformedRecordError(
            "trailing partial record", offset=EVT_HEADER.size + n_ok * EVT_RECORD.itemsize
        )
    rec = np.frombuffer(raw, dtype=EVT_RECORD, offset=EVT_HEADER.size)
    if len(rec):
        if np.any(rec["pad"] != 0):
            i = int(np.flatnonzero(rec["pad"] != 0)[0])
            raise MalformedRecordError("non-zero pad byte", offset=EVT_HEADER.size + i * EVT_RECORD.itemsize)
        if rec["t"].max() > np.iinfo(np.int64).max:
            raise MalformedRecordError("timestamp overflow")
    p = _normalize_polarity(rec["p"], "evt-binary")
    return EventStream(rec["t"].astype(np.int64), rec["x"], rec["y"], p, width, height)


def parse_event_file(path, format: str = "evt-binary", geometry: tuple[int, int] | None = None) -> EventStream:
    """Read events from ``csv`` (needs ``geometry``) or ``evt-binary``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "csv":
        if geometry is None:
            raise ValueError("csv event files carry no geometry; pass geometry=(width, height)")
        return _parse_csv_events(path, geometry)
    if format == "evt-binary":
        return _parse_evt_binary(path, geometry)
    raise ValueError(f"unknown event format {format!r}")


def write_event_file(stream: EventStream, path, format: str = "evt-binary") -> None:
    path = Path(path)
    if format == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t_us,x,y,p\n")
            if len(stream):
                np.savetxt(fh, stream.as_tuples(), fmt="%d", delimiter=",")
    elif format == "evt-binary":
        rec = np.zeros(len(stream), dtype=EVT_RECORD)
        rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
        with open(path, "wb") as fh:
            fh.write(EVT_HEADER.pack(EVT_MAGIC, stream.width, stream.height, 0))
            fh.write(rec.tobytes())
    else:
        raise ValueError(f"unknown event format {format!r}")


def guess_format(path) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "evt-binary"


# --------------------------------------------------------------------------
# poses and places


@dataclass(frozen=True, eq=False)
class PoseTrack:
    """Timestamped positions: ``pos`` is (n,) arc length in metres or (n, 2) lat/lon degrees."""

    t: np.ndarray
    pos: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        pos = np.asarray(self.pos, dtype=np.float64)
        if pos.ndim not in (1, 2) or (pos.ndim == 2 and pos.shape[1] != 2) or len(pos) != len(t):
            raise ValueError("pose positions must be (n,) or (n, 2) matching timestamps")
        if not np.all(np.isfinite(pos)):
            raise ValueError("pose positions must be finite")
        if len(t) > 1 and np.any(np.diff(t) < 0):
            raise ValueError("pose track must be sorted by time")
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "pos", _frozen(pos))

    @property
    def mode(self) -> str:
        return "latlon" if self.pos.ndim == 2 else "1d"

    def __len__(self) -> int:
        return len(self.t)

    def arc_length(self) -> np.ndarray:
        """Cumulative travelled distance at each pose sample."""
        if len(self.t) == 0:
            return np.zeros(0)
        if self.mode == "1d":
            steps = np.abs(np.diff(self.pos))
        else:
            steps = haversine(self.pos[:-1], self.pos[1:])
        return np.concatenate([[0.0], np.cumsum(steps)])


def haversine(a, b) -> np.ndarray:
    a = np.radians(np.asarray(a, dtype=np.float64))
    b = np.radians(np.asarray(b, dtype=np.float64))
    dlat = b[..., 0] - a[..., 0]
    dlon = b[..., 1] - a[..., 1]
    h = np.sin(dlat / 2) ** 2 + np.cos(a[..., 0]) * np.cos(b[..., 0]) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def geo_distance(a, b, latlon: bool = False) -> np.ndarray:
    """Metres between positions; great-circle for (lat, lon), absolute difference for 1-D."""
    if latlon:
        return haversine(a, b)
    return np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))


def parse_pose_file(path) -> PoseTrack:
    rows, _ = _read_csv_rows(Path(path), (2, 3))
    if rows.size == 0:
        return PoseTrack(np.zeros(0, dtype=np.int64), np.zeros(0))
    t = rows[:, 0]
    if np.any(t != np.round(t)):
        raise MalformedRecordError("pose timestamps must be integer microseconds")
    pos = rows[:, 1] if rows.shape[1] == 2 else rows[:, 1:3]
    return PoseTrack(t.astype(np.int64), pos)


def write_pose_file(track: PoseTrack, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if track.mode == "1d":
            fh.write("t_us,pos\n")
            for t, s in zip(track.t, track.pos):
                fh.write(f"{int(t)},{float(s)!r}\n")
        else:
            fh.write("t_us,lat,lon\n")
            for t, (la, lo) in zip(track.t, track.pos):
                fh.write(f"{int(t)},{float(la)!r},{float(lo)!r}\n")


@dataclass(frozen=True)
class PlaceSample:
    place_id: int
    traverse_id: int
    position: float | tuple[float, float]
    window: tuple[int, int]
    stream_ref: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.window[0] >= self.window[1]:
            raise ValueError(f"place window must be non-empty, got {self.window}")

    @property
    def center(self) -> int:
        return (self.window[0] + self.window[1]) // 2


def slice_places(
    stream: EventStream | None,
    track: PoseTrack,
    spacing_m: float,
    half_window_us: int,
    traverse_id: int = 0,
) -> list[PlaceSample]:
    """One place per ``spacing_m`` of travelled distance along ``track``.

    Each place is centred on the pose sample nearest to the moment the
    travelled distance crosses ``k * spacing_m``.
    """
    if spacing_m <= 0:
        raise ValueError("spacing_m must be positive")
    if half_window_us <= 0:
        raise ValueError("half_window_us must be positive")
    if len(track) < 2:
        raise TrackTooShortError(f"pose track has {len(track)} samples, need at least 2")
    arc = track.arc_length()
    total = arc[-1]
    # tolerate float round-off when the route length is an exact multiple
    n = int(math.floor(total / spacing_m + 1e-9)) + 1
    places = []
    for k in range(n):
        s = min(k * spacing_m, total)
        j = int(np.searchsorted(arc, s, side="left"))
        if j == 0:
            idx = 0
        else:
            j = min(j, len(arc) - 1)
            a0, a1 = arc[j - 1], arc[j]
            t0, t1 = track.t[j - 1], track.t[j]
            frac = 0.0 if a1 == a0 else (s - a0) / (a1 - a0)
            t_cross = t0 + frac * (t1 - t0)
            idx = j - 1 if (t_cross - t0) <= (t1 - t_cross) else j
        t_c = int(track.t[idx])
        pos = track.pos[idx]
        position = float(pos) if track.mode == "1d" else (float(pos[0]), float(pos[1]))
        places.append(
            PlaceSample(k, traverse_id, position, (t_c - half_window_us, t_c + half_window_us), stream)
        )
    return places
