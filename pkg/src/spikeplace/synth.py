"""Deterministic multi-traverse synthetic event datasets.

A route is a horizontal strip of blocky grey-level textures, one patch per
place. A camera slides along the strip; every time it advances by one
texture pixel, each sensor pixel whose log intensity changes by at least
the contrast threshold emits one event per threshold step. Traverses differ
in speed profile, ambient light, camera height, start offset and
background noise.
Reverse traverses run the route backwards and see the scene mirrored.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .events import (
    EventStream,
    PlaceSample,
    PoseTrack,
    build_histogram,
    slice_places,
    write_event_file,
    write_pose_file,
)

US = 1_000_000


@dataclass(frozen=True)
class TraverseConfig:
    speed: float = 10.0           # m/s, mean
    speed_wobble: float = 0.0     # relative amplitude of slow speed variation along the route
    direction: str = "forward"
    ambient: float = 0.05         # added to intensity before the log; larger washes out contrast
    vertical_offset: int = 0      # camera height shift in texture pixels
    noise_rate: float | None = None  # events / pixel / s; None uses the route default
    start_offset_m: float = 0.0   # where the traverse starts relative to the route origin
    seed: int = 0

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError("traverse speed must be positive")
        if not (0 <= self.speed_wobble < 1):
            raise ValueError("speed_wobble must be in [0, 1)")
        if self.direction not in ("forward", "reverse"):
            raise ValueError("direction must be 'forward' or 'reverse'")
        if self.ambient < 0:
            raise ValueError("ambient must be non-negative")


@dataclass(frozen=True)
class RouteConfig:
    n_places: int = 20
    spacing_m: float = 50.0
    px_per_m: float = 1.0
    width: int = 32
    height: int = 32
    scene_seed: int = 0
    cell_px: int = 4
    contrast: float = 0.2
    noise_rate: float = 0.2
    max_vertical_offset: int = 4
    max_start_offset_m: float = 10.0
    pose_rate_hz: float = 50.0
    traverses: tuple[TraverseConfig, ...] = (TraverseConfig(),)

    def __post_init__(self):
        if self.n_places < 2:
            raise ValueError("need at least two places")
        if self.spacing_m <= 0 or self.px_per_m <= 0:
            raise ValueError("spacing and px_per_m must be positive")
        trav = tuple(t if isinstance(t, TraverseConfig) else TraverseConfig(**t) for t in self.traverses)
        object.__setattr__(self, "traverses", trav)
        for t in trav:
            if abs(t.vertical_offset) > self.max_vertical_offset:
                raise ValueError("vertical_offset exceeds max_vertical_offset")
            if abs(t.start_offset_m) > self.max_start_offset_m:
                raise ValueError("start_offset_m exceeds max_start_offset_m")

    @property
    def route_length_m(self) -> float:
        return (self.n_places + 1) * self.spacing_m

    def place_positions(self) -> np.ndarray:
        return self.spacing_m * np.arange(1, self.n_places + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["traverses"] = [asdict(t) for t in self.traverses]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RouteConfig":
        d = dict(d)
        d["traverses"] = tuple(TraverseConfig(**t) for t in d.get("traverses", ()))
        return cls(**d)


# --------------------------------------------------------------------------
# scene


def place_pattern(rng: np.random.Generator, height: int, width: int, cell: int) -> np.ndarray:
    """Blocky grey-level patch in [0.05, 1]."""
    ch = -(-height // cell)
    cw = -(-width // cell)
    coarse = rng.uniform(0.05, 1.0, size=(ch, cw))
    return np.kron(coarse, np.ones((cell, cell)))[:height, :width]


def perceptual_alias_pair(cfg: RouteConfig, similarity: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Two place patches sharing a ``similarity`` fraction of their texture cells."""
    if not 0.0 <= similarity <= 1.0:
        raise ValueError("similarity must be in [0, 1]")
    h = cfg.height + 2 * cfg.max_vertical_offset
    w = int(round(cfg.spacing_m * cfg.px_per_m))
    rng = np.random.default_rng([seed, 7])
    a = place_pattern(rng, h, w, cfg.cell_px)
    b_indep = place_pattern(rng, h, w, cfg.cell_px)
    ch, cw = -(-h // cfg.cell_px), -(-w // cfg.cell_px)
    shared = rng.random((ch, cw)) < similarity
    if similarity >= 1.0:
        shared[:] = True
    mask = np.kron(shared, np.ones((cfg.cell_px, cfg.cell_px)))[:h, :w].astype(bool)
    b = np.where(mask, a, b_indep)
    return a, b


def _margin_px(cfg: RouteConfig) -> int:
    return int(np.ceil(cfg.max_start_offset_m * cfg.px_per_m))


def scene_column(cfg: RouteConfig, route_px: int) -> int:
    """Scene column of the left sensor edge when the camera sits at ``route_px``."""
    return route_px + _margin_px(cfg)


def build_scene(cfg: RouteConfig) -> np.ndarray:
    """Texture strip covering the route plus margins for camera height and start offsets.

    Column ``scene_column(cfg, p) + width//2`` shows route pixel ``p``.
    """
    h = cfg.height + 2 * cfg.max_vertical_offset
    patch_w = int(round(cfg.spacing_m * cfg.px_per_m))
    route_px = int(round(cfg.route_length_m * cfg.px_per_m))
    total_w = route_px + 2 * _margin_px(cfg) + cfg.width + 2
    scene = np.empty((h, total_w))
    rng = np.random.default_rng([cfg.scene_seed, 0])
    scene[:] = place_pattern(rng, h, total_w, cfg.cell_px)
    half = cfg.width // 2
    for k, s in enumerate(cfg.place_positions()):
        centre = scene_column(cfg, int(round(s * cfg.px_per_m))) + half
        lo = centre - patch_w // 2
        scene[:, lo:lo + patch_w] = place_pattern(np.random.default_rng([cfg.scene_seed, 1, k]), h, patch_w, cfg.cell_px)
    return scene


def view(scene: np.ndarray, cam_px: int, cfg: RouteConfig, trav: TraverseConfig) -> np.ndarray:
    """Sensor image (height x width) with the left sensor edge at scene column ``cam_px``."""
    half = cfg.width // 2
    r0 = cfg.max_vertical_offset + trav.vertical_offset
    rows = scene[r0:r0 + cfg.height]
    if trav.direction == "forward":
        return rows[:, cam_px:cam_px + cfg.width]
    # mirrored view: sensor column x looks at scene column cam_px + 2*half - 1 - x
    start = cam_px + 2 * half - cfg.width
    return rows[:, start:start + cfg.width][:, ::-1]


def camera_events(scene, cam_px: np.ndarray, times_us: np.ndarray, cfg: RouteConfig,
                  trav: TraverseConfig, rng: np.random.Generator):
    """Events from moving the camera through integer positions ``cam_px`` at ``times_us``.

    Events between consecutive positions get timestamps spread uniformly
    over the interval to the next position change.
    """
    ts, xs, ys, ps = [], [], [], []
    log_prev = np.log(view(scene, int(cam_px[0]), cfg, trav) + trav.ambient)
    for i in range(1, len(cam_px)):
        if cam_px[i] == cam_px[i - 1]:
            continue
        log_now = np.log(view(scene, int(cam_px[i]), cfg, trav) + trav.ambient)
        diff = log_now - log_prev
        n = np.floor(np.abs(diff) / cfg.contrast).astype(np.int64)
        yy, xx = np.nonzero(n)
        if len(yy):
            reps = n[yy, xx]
            yy = np.repeat(yy, reps)
            xx = np.repeat(xx, reps)
            pol = np.where(diff[yy, xx] > 0, 1, -1)
            t0 = int(times_us[i])
            t1 = int(times_us[i + 1]) if i + 1 < len(times_us) else t0 + 1
            span = max(t1 - t0, 1)
            ts.append(t0 + rng.integers(0, span, size=len(yy)))
            xs.append(xx)
            ys.append(yy)
            ps.append(pol)
        log_prev = log_now
    if not ts:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, z
    return np.concatenate(ts), np.concatenate(xs), np.concatenate(ys), np.concatenate(ps)


def _speed_profile(s_m: np.ndarray, trav: TraverseConfig, route_len: float) -> np.ndarray:
    phase = 2 * np.pi * (trav.seed % 97) / 97.0
    return trav.speed * (1.0 + trav.speed_wobble * np.sin(2 * np.pi * 1.5 * s_m / route_len + phase))


def generate_traverse(cfg: RouteConfig, trav: TraverseConfig, scene: np.ndarray | None = None):
    """Render one traverse; returns ``(EventStream, PoseTrack)``."""
    scene = build_scene(cfg) if scene is None else scene
    rng = np.random.default_rng([cfg.scene_seed, trav.seed, 3])
    route_len = cfg.route_length_m
    route_px = int(round(route_len * cfg.px_per_m))
    px = np.arange(route_px + 1) + int(round(trav.start_offset_m * cfg.px_per_m))
    s_m = px / cfg.px_per_m  # route coordinate of each camera pixel position
    if trav.direction == "reverse":
        s_m = s_m[::-1]
        px = px[::-1]
    travelled = np.abs(s_m - s_m[0])
    speed = _speed_profile(travelled, trav, route_len)
    # time to cross each pixel step at the speed at its start
    dt = np.concatenate([[0.0], (1.0 / cfg.px_per_m) / speed[:-1]])
    times = np.round(np.cumsum(dt) * US).astype(np.int64)
    t, x, y, p = camera_events(scene, scene_column(cfg, 0) + px, times, cfg, trav, rng)

    duration = int(times[-1])
    noise = cfg.noise_rate if trav.noise_rate is None else trav.noise_rate
    n_noise = int(rng.poisson(noise * cfg.width * cfg.height * duration / US)) if noise > 0 else 0
    if n_noise:
        t = np.concatenate([t, rng.integers(0, duration + 1, n_noise)])
        x = np.concatenate([x, rng.integers(0, cfg.width, n_noise)])
        y = np.concatenate([y, rng.integers(0, cfg.height, n_noise)])
        p = np.concatenate([p, rng.choice(np.array([-1, 1]), n_noise)])
    order = np.lexsort((p, x, y, t))
    stream = EventStream(t[order], x[order], y[order], p[order], cfg.width, cfg.height)

    pose_t = np.arange(0, duration + 1, int(round(US / cfg.pose_rate_hz)), dtype=np.int64)
    if pose_t[-1] != duration:
        pose_t = np.append(pose_t, duration)
    pose_s = np.interp(pose_t, times, s_m)
    return stream, PoseTrack(pose_t, pose_s)


def generate(cfg: RouteConfig) -> list[tuple[EventStream, PoseTrack]]:
    scene = build_scene(cfg)
    return [generate_traverse(cfg, trav, scene) for trav in cfg.traverses]


# --------------------------------------------------------------------------
# datasets


@dataclass
class Traverse:
    traverse_id: int
    stream: EventStream
    track: PoseTrack
    places: list[PlaceSample] = field(default_factory=list)


@dataclass
class PlaceDataset:
    """Traverses with their place samples; histograms are built on demand."""

    traverses: list[Traverse]
    half_window_us: int
    spacing_m: float

    def traverse(self, tid: int) -> Traverse:
        for t in self.traverses:
            if t.traverse_id == tid:
                return t
        raise KeyError(f"no traverse {tid}")

    def samples(self, traverse_ids=None) -> list[PlaceSample]:
        out = []
        for t in self.traverses:
            if traverse_ids is None or t.traverse_id in traverse_ids:
                out.extend(t.places)
        return out

    def stream_of(self, sample: PlaceSample) -> EventStream:
        return self.traverse(sample.traverse_id).stream

    def histograms(self, samples) -> np.ndarray:
        return np.stack([build_histogram(self.stream_of(s), s.window).counts for s in samples])


def complete_places(places: list[PlaceSample], track: PoseTrack) -> list[PlaceSample]:
    """Drop places whose window is not fully covered by the pose track."""
    t0, t1 = int(track.t[0]), int(track.t[-1])
    return [s for s in places if s.window[0] >= t0 and s.window[1] <= t1]


def assemble(streams_tracks, spacing_m: float, half_window_us: int, traverse_ids=None) -> PlaceDataset:
    traverses = []
    for i, (stream, track) in enumerate(streams_tracks):
        tid = i if traverse_ids is None else traverse_ids[i]
        places = complete_places(slice_places(stream, track, spacing_m, half_window_us, tid), track)
        places = [replace(s, place_id=k, stream_ref=tid) for k, s in enumerate(places)]
        traverses.append(Traverse(tid, stream, track, places))
    return PlaceDataset(traverses, half_window_us, spacing_m)


def synthesize(cfg: RouteConfig, half_window_us: int) -> PlaceDataset:
    return assemble(generate(cfg), cfg.spacing_m, half_window_us)


def write_dataset(cfg: RouteConfig, out_dir, half_window_us: int | None = None) -> Path:
    """Write ``traverse_<i>.evt`` + ``traverse_<i>_pose.csv`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (stream, track) in enumerate(generate(cfg)):
        ev, pose = f"traverse_{i}.evt", f"traverse_{i}_pose.csv"
        write_event_file(stream, out / ev, "evt-binary")
        write_pose_file(track, out / pose)
        entries.append({"traverse_id": i, "events": ev, "pose": pose, "n_events": len(stream)})
    manifest = {
        "format_version": 1,
        "generator": "spikeplace.synth",
        "route": cfg.to_dict(),
        "spacing_m": cfg.spacing_m,
        "half_window_us": half_window_us,
        "traverses": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
