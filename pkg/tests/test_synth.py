import json

import numpy as np
import pytest

from spikeplace.events import parse_event_file, parse_pose_file
from spikeplace.retrieval import sad_distances
from spikeplace.synth import (
    RouteConfig,
    TraverseConfig,
    build_scene,
    camera_events,
    generate,
    perceptual_alias_pair,
    synthesize,
    view,
    write_dataset,
)

SMALL = dict(n_places=6, width=16, height=16)


def _route(*travs, **kw):
    return RouteConfig(traverses=tuple(travs), **{**SMALL, **kw})


def test_generation_is_deterministic():
    cfg = _route(TraverseConfig(seed=3, speed=8.0), TraverseConfig(seed=4, speed_wobble=0.4))
    a, b = generate(cfg), generate(cfg)
    for (sa, ta), (sb, tb) in zip(a, b):
        for k in ("t", "x", "y", "p"):
            assert np.array_equal(getattr(sa, k), getattr(sb, k))
        assert np.array_equal(ta.t, tb.t) and np.array_equal(ta.pos, tb.pos)


def test_traverse_seeds_change_noise_only():
    a, b = generate(_route(TraverseConfig(seed=0), TraverseConfig(seed=1)))
    assert len(a[0]) != len(b[0]) or not np.array_equal(a[0].t, b[0].t)
    assert np.array_equal(a[1].pos, b[1].pos)


def test_faster_traverse_packs_more_events_per_window():
    hw = 500_000
    ds = synthesize(_route(TraverseConfig(speed=5.0, noise_rate=0.0),
                           TraverseConfig(speed=10.0, noise_rate=0.0)), hw)
    slow = ds.histograms(ds.samples([0])).sum(axis=(1, 2, 3))
    fast = ds.histograms(ds.samples([1])).sum(axis=(1, 2, 3))
    assert len(slow) == len(fast) == 6
    assert fast.sum() > slow.sum()
    assert np.all(fast >= slow)


def test_stationary_camera_is_silent():
    cfg = _route(TraverseConfig())
    scene = build_scene(cfg)
    cam = np.full(40, 30)
    t, x, y, p = camera_events(scene, cam, np.arange(40) * 1000, cfg, cfg.traverses[0],
                               np.random.default_rng(0))
    assert len(t) == 0


def test_pose_track_and_window_timing():
    speed = 10.0
    cfg = _route(TraverseConfig(speed=speed, noise_rate=0.0))
    ds = synthesize(cfg, 200_000)
    track = ds.traverses[0].track
    step = speed / cfg.pose_rate_hz
    assert abs((track.pos[-1] - track.pos[0]) - cfg.route_length_m) <= step
    centres = np.array([(a + b) / 2 for a, b in (s.window for s in ds.samples([0]))])
    gaps = np.diff(centres) / 1e6
    np.testing.assert_allclose(gaps, cfg.spacing_m / speed, atol=2 / cfg.pose_rate_hz)


def test_reverse_view_is_mirrored():
    cfg = _route(TraverseConfig(), TraverseConfig(direction="reverse"))
    scene = build_scene(cfg)
    fwd = view(scene, 25, cfg, cfg.traverses[0])
    rev = view(scene, 25, cfg, cfg.traverses[1])
    assert np.array_equal(rev, fwd[:, ::-1])


def test_reverse_traverse_runs_backwards():
    cfg = _route(TraverseConfig(), TraverseConfig(direction="reverse"))
    (_, fwd), (_, rev) = generate(cfg)
    assert np.all(np.diff(fwd.pos) >= 0) and np.all(np.diff(rev.pos) <= 0)
    assert rev.pos[0] == pytest.approx(fwd.pos[-1])


def test_config_validation():
    with pytest.raises(ValueError):
        TraverseConfig(speed=0.0)
    with pytest.raises(ValueError):
        TraverseConfig(direction="sideways")
    with pytest.raises(ValueError):
        RouteConfig(n_places=1)
    with pytest.raises(ValueError):
        _route(TraverseConfig(vertical_offset=9))


def test_route_dict_round_trip():
    cfg = _route(TraverseConfig(seed=2, speed=7.5, direction="reverse"))
    assert RouteConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


# -- aliasing ---------------------------------------------------------------------

def test_alias_extremes():
    cfg = RouteConfig(**SMALL)
    a, b = perceptual_alias_pair(cfg, 1.0)
    assert np.array_equal(a, b)
    a, b = perceptual_alias_pair(cfg, 0.0)
    assert np.mean(a == b) < 0.05
    with pytest.raises(ValueError):
        perceptual_alias_pair(cfg, 1.5)


def _sweep_histogram(pattern, cfg):
    """Noise-free event counts from sliding the sensor across one patch."""
    trav = TraverseConfig()
    cam = np.arange(pattern.shape[1] - cfg.width + 1)
    _, x, y, p = camera_events(pattern, cam, cam * 1000, cfg, trav, np.random.default_rng(0))
    h = np.zeros((2, cfg.height, cfg.width), np.int64)
    np.add.at(h, ((p > 0).astype(int), y, x), 1)
    return h


def test_alias_sad_decreases_with_similarity():
    cfg = RouteConfig(**SMALL)
    # single pairs are noisy at low similarity; average over pair seeds
    sads = []
    for sim in np.linspace(0.0, 1.0, 6):
        total = 0
        for seed in range(10):
            a, b = perceptual_alias_pair(cfg, float(sim), seed=seed)
            ha, hb = _sweep_histogram(a, cfg), _sweep_histogram(b, cfg)
            total += int(sad_distances(ha[None], hb)[0])
        sads.append(total / 10)
    assert all(b <= a for a, b in zip(sads, sads[1:]))
    assert sads[-1] == 0 and sads[0] > 0


# -- on-disk layout -------------------------------------------------------------------

def test_write_dataset(tmp_path):
    cfg = _route(TraverseConfig(seed=0), TraverseConfig(seed=1, speed=12.0))
    manifest = write_dataset(cfg, tmp_path, half_window_us=300_000)
    m = json.loads(manifest.read_text())
    assert RouteConfig.from_dict(m["route"]) == cfg
    assert [e["traverse_id"] for e in m["traverses"]] == [0, 1]
    for (stream, track), e in zip(generate(cfg), m["traverses"]):
        back = parse_event_file(tmp_path / e["events"])
        assert np.array_equal(back.t, stream.t) and np.array_equal(back.p, stream.p)
        assert e["n_events"] == len(stream)
        pose = parse_pose_file(tmp_path / e["pose"])
        np.testing.assert_allclose(pose.pos, track.pos)
