import math

import numpy as np
import pytest

from spikeplace.arch import DESK_SMALL, SpikeVPR
from spikeplace.contrastive import LossConfig
from spikeplace.errors import CheckpointError, NonFiniteGradientError
from spikeplace.events import EventStream, PlaceSample
from spikeplace.retrieval import EvalConfig
from spikeplace.synth import RouteConfig, TraverseConfig, synthesize
from spikeplace.train import (
    AugmentConfig,
    EvalSplit,
    OptimConfig,
    TrainState,
    adamw_step,
    clip_by_global_norm,
    evaluate,
    load_checkpoint,
    load_encoder,
    lr_at,
    sample_histogram,
    save_checkpoint,
    train,
)

HW = 500_000


@pytest.fixture(scope="module")
def route_ds():
    trav = (TraverseConfig(seed=0), TraverseConfig(seed=1, speed=7.0, ambient=0.1),
            TraverseConfig(seed=2, speed=13.0, ambient=0.02), TraverseConfig(seed=3, speed=8.5))
    return synthesize(RouteConfig(traverses=trav), HW)


# -- schedule ----------------------------------------------------------------

def test_lr_examples():
    cfg = OptimConfig(base_lr=0.1, warmup_steps=10, total_steps=110)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(10, cfg) == 0.1
    assert lr_at(110, cfg) == pytest.approx(0.0, abs=1e-15)
    assert lr_at(60, cfg) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        lr_at(111, cfg)
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_lr_continuous_and_nonnegative():
    cfg = OptimConfig(base_lr=1.0, warmup_steps=20, total_steps=200)
    vals = [lr_at(s, cfg) for s in range(201)]
    assert min(vals) >= 0
    assert max(abs(a - b) for a, b in zip(vals, vals[1:])) <= 1.0 / 20 + 1e-12


def test_optim_config_validation():
    with pytest.raises(ValueError):
        OptimConfig(warmup_steps=5, total_steps=5)
    with pytest.raises(ValueError):
        OptimConfig(base_lr=0.0)
    assert OptimConfig.with_warmup_fraction(200).warmup_steps == 10


# -- AdamW -------------------------------------------------------------------

class _Scalar:
    """Stand-in model with one float64 parameter."""

    def __init__(self, value):
        from spikeplace.nn import Module
        self.mod = Module()
        self.mod.params["w"] = np.array([value], dtype=np.float64)

    def named_parameters(self):
        return self.mod.named_parameters()

    def named_modules(self):
        return self.mod.named_modules()


def test_adamw_hand_unrolled():
    cfg = OptimConfig(base_lr=0.1, weight_decay=0.01, warmup_steps=0, total_steps=3, betas=(0.9, 0.999))
    model = _Scalar(1.0)
    state = TrainState(model)
    grads = [0.5, -0.25, 1.0]
    w, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        lr = 0.1 * 0.5 * (1 + math.cos(math.pi * t / 3))
        w = w * (1 - lr * 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - lr * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        adamw_step(state, {"w": np.array([g])}, cfg)
        assert model.mod.params["w"][0] == w
    assert state.step == 3


def test_adamw_zero_grad_fixed_point():
    model = SpikeVPR(DESK_SMALL)
    before = {k: p.copy() for k, p in model.named_parameters()}
    state = TrainState(model)
    cfg = OptimConfig(base_lr=0.1, weight_decay=0.0, total_steps=5)
    adamw_step(state, {k: np.zeros_like(p) for k, p in before.items()}, cfg)
    for k, p in model.named_parameters():
        assert np.array_equal(p, before[k])


def test_adamw_decay_only():
    model = _Scalar(2.0)
    state = TrainState(model)
    cfg = OptimConfig(base_lr=0.1, weight_decay=0.5, warmup_steps=0, total_steps=4)
    expected = 2.0
    for t in range(1, 4):
        adamw_step(state, {"w": np.zeros(1)}, cfg)
        expected *= 1 - lr_at(t, cfg) * 0.5
        assert model.mod.params["w"][0] == pytest.approx(expected, rel=1e-15)


def test_adamw_rejects_non_finite():
    model = _Scalar(1.0)
    state = TrainState(model)
    with pytest.raises(NonFiniteGradientError):
        adamw_step(state, {"w": np.array([np.nan])}, OptimConfig(total_steps=2))
    assert state.step == 0 and state.rejected_steps == 1
    assert model.mod.params["w"][0] == 1.0


def test_adamw_order_independent():
    a, b = SpikeVPR(DESK_SMALL, seed=1), SpikeVPR(DESK_SMALL, seed=1)
    rng = np.random.default_rng(0)
    grads = {k: rng.normal(size=p.shape).astype(p.dtype) for k, p in a.named_parameters()}
    cfg = OptimConfig(base_lr=0.01, total_steps=3)
    adamw_step(TrainState(a), grads, cfg)
    adamw_step(TrainState(b), dict(reversed(list(grads.items()))), cfg)
    for (k, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(p, q), k


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(g, 1.0) == pytest.approx(5.0)
    assert math.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)


# -- augmentation plumbing -----------------------------------------------------

def test_sample_histogram_dilation_window():
    t = np.arange(0, 1000, 10)
    s = EventStream(t, np.zeros_like(t), np.zeros_like(t), np.ones_like(t), 2, 2)
    place = PlaceSample(0, 0, 0.0, (400, 600))
    aug = AugmentConfig(dilation=True, t_min=40, t_max=40)
    h = sample_histogram(s, place, aug, seed=0)
    # closed interval [480, 520] holds 480, 490, 500, 510, 520
    assert h.total() == 5
    assert sample_histogram(s, place, None, seed=0).total() == 20


def test_augment_labels():
    a = AugmentConfig.from_label("D+X+E", t_min=1, t_max=2)
    assert (a.dilation, a.flip, a.drop) == (True, True, True)
    assert a.label == "D+X+E"
    assert AugmentConfig.from_label("None").label == "None"
    with pytest.raises(ValueError):
        AugmentConfig.from_label("Q")
    with pytest.raises(ValueError):
        AugmentConfig(dilation=True)


# -- training loop ---------------------------------------------------------------

def _run(ds, epochs, seed=0, aug=None, bpe=2, model=None):
    model = model or SpikeVPR(DESK_SMALL, seed=seed)
    opt = OptimConfig.with_warmup_fraction(epochs * bpe, base_lr=3e-2, seed=seed)
    return train(ds, model, opt, LossConfig(), aug, epochs, [0, 1, 2], EvalSplit(0, (3,)),
                 n_pairs=10, batches_per_epoch=bpe)


def test_training_is_deterministic(route_ds):
    aug = AugmentConfig.from_label("D+X+E", t_min=HW, t_max=3 * HW)
    a = _run(route_ds, 1, aug=aug)
    b = _run(route_ds, 1, aug=aug)
    assert a.csv_text() == b.csv_text()
    for (k, p), (_, q) in zip(a.state.model.named_parameters(), b.state.model.named_parameters()):
        assert np.array_equal(p, q), k


def test_thirty_epochs_reduce_loss(route_ds):
    res = _run(route_ds, 30, bpe=1)
    losses = [r["loss"] for r in res.log_rows if r["epoch"] > 0]
    assert len(losses) == 30
    assert losses[-1] < losses[0]
    assert res.csv_text().splitlines()[0] == "epoch,step,lr,loss,val_recall1"


def test_total_steps_must_match(route_ds):
    opt = OptimConfig.with_warmup_fraction(7)
    with pytest.raises(ValueError):
        train(route_ds, SpikeVPR(DESK_SMALL), opt, LossConfig(), None, 2, [0, 1, 2],
              n_pairs=10, batches_per_epoch=2)


# -- checkpoints --------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(route_ds):
    return _run(route_ds, 3)


def test_checkpoint_round_trip(trained, route_ds, tmp_path):
    p = save_checkpoint(trained.state, tmp_path / "ck.json")
    back = load_checkpoint(p)
    for (k, a), (_, b) in zip(trained.state.model.state_dict().items(), back.model.state_dict().items()):
        assert np.array_equal(a, b), k
    assert back.step == trained.state.step
    probe = route_ds.histograms(route_ds.samples([3])).astype(np.float32)
    assert np.array_equal(trained.state.model.embed(probe), back.model.embed(probe))
    p2 = save_checkpoint(back, tmp_path / "ck2.json")
    assert (tmp_path / "ck.bin").read_bytes() == (tmp_path / "ck2.bin").read_bytes()
    assert p.read_text().replace("ck.bin", "ck2.bin") == p2.read_text()


def test_truncated_blob(trained, tmp_path):
    p = save_checkpoint(trained.state, tmp_path / "ck.json")
    blob = tmp_path / "ck.bin"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_version_mismatch(trained, tmp_path):
    p = save_checkpoint(trained.state, tmp_path / "ck.json")
    p.write_text(p.read_text().replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_load_encoder_only(trained, tmp_path):
    p = save_checkpoint(trained.state, tmp_path / "ck.json")
    fresh = SpikeVPR(DESK_SMALL, seed=42)
    agg_before = {k: v.copy() for k, v in fresh.aggregator.state_dict().items()}
    loaded = load_encoder(fresh, p)
    assert loaded and all(k.startswith("encoder.") for k in loaded)
    for k, v in trained.state.model.encoder.state_dict().items():
        assert np.array_equal(fresh.encoder.state_dict()[k], v)
    for k, v in fresh.aggregator.state_dict().items():
        assert np.array_equal(v, agg_before[k])


def test_pretrained_encoder_not_worse_at_start(route_ds, tmp_path):
    pre = _run(route_ds, 40, bpe=2)
    p = save_checkpoint(pre.state, tmp_path / "pre.json")
    split, ec = EvalSplit(0, (3,)), EvalConfig(30.0, (1,))
    random_r1, warm_r1 = [], []
    for seed in range(5):
        cold = SpikeVPR(DESK_SMALL, seed=100 + seed)
        x = route_ds.histograms(route_ds.samples([0, 1, 2])).astype(np.float32)
        cold.train()
        cold.forward(x)
        random_r1.append(evaluate(cold, route_ds, split, ec)[1][0][1])
        warm = SpikeVPR(DESK_SMALL, seed=100 + seed)
        load_encoder(warm, p)
        f = warm.eval().encoder.forward(x)
        warm.aggregator.train().forward(f)  # fresh aggregator needs BN statistics
        warm.eval()
        warm_r1.append(evaluate(warm, route_ds, split, ec)[1][0][1])
    assert np.median(warm_r1) >= np.median(random_r1)
