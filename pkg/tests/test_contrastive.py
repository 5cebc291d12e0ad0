import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikeplace.contrastive import LossConfig, PairBatch, build_batch, cosine_sim, nt_xent
from spikeplace.errors import DegenerateBatchError, InsufficientPositivesError
from spikeplace.events import PlaceSample


def brute_nt_xent(z, pair, tau):
    """Per-anchor loop straight from the definition."""
    n2 = len(z)

    def sim(a, b):
        return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

    total = 0.0
    for i in range(n2):
        num = math.exp(sim(z[i], z[pair[i]]) / tau)
        den = sum(math.exp(sim(z[i], z[k]) / tau) for k in range(n2) if k != i)
        total += -math.log(num / den)
    return total / n2


def numeric_grad(z, pair, tau, h=1e-6):
    g = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        g[idx] = (brute_nt_xent(zp, pair, tau) - brute_nt_xent(zm, pair, tau)) / (2 * h)
    return g


def test_cosine_examples(rng):
    u = rng.normal(size=6)
    assert cosine_sim(u, u) == pytest.approx(1.0)
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim(u, 3.5 * u) == pytest.approx(1.0)
    assert cosine_sim(u, -0.2 * u) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        cosine_sim([0, 0], [1, 0])


def test_identical_descriptors():
    z = np.ones((4, 5))
    loss, _ = nt_xent(PairBatch.from_halves(z[:2], z[2:]), LossConfig(tau=0.07))
    assert abs(loss - (-math.log(1 / 3))) < 1e-9


def test_orthogonal_negatives_closed_form():
    n, tau = 3, 0.07
    base = np.eye(n, 8)
    loss, _ = nt_xent(PairBatch.from_halves(base, 2 * base), LossConfig(tau))
    e = math.exp(1 / tau)
    assert loss == pytest.approx(-math.log(e / (e + 2 * n - 2)), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force_n4(seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(8, 8))
    batch = PairBatch.from_halves(z[:4], z[4:])
    loss, grad = nt_xent(batch, LossConfig(0.5))
    assert abs(loss - brute_nt_xent(z, batch.pair, 0.5)) < 1e-6
    np.testing.assert_allclose(grad, numeric_grad(z, batch.pair, 0.5), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 100.0))
def test_invariances(seed, scale):
    r = np.random.default_rng(seed)
    z = r.normal(size=(6, 5))
    batch = PairBatch.from_halves(z[:3], z[3:])
    loss, _ = nt_xent(batch)
    assert loss > 0
    assert nt_xent(PairBatch(z * scale, batch.pair))[0] == pytest.approx(loss, rel=1e-9)
    perm = r.permutation(6)
    inv = np.argsort(perm)
    permuted = PairBatch(z[perm], inv[batch.pair[perm]])
    assert nt_xent(permuted)[0] == pytest.approx(loss, rel=1e-9)


def test_loss_monotone_in_positive_similarity():
    # anchor 0 and positive 2 rotate towards each other; negatives held orthogonal
    tau = 0.1
    losses = []
    for angle in np.linspace(1.2, 0.0, 7):
        z = np.zeros((4, 4))
        z[0] = [1, 0, 0, 0]
        z[2] = [np.cos(angle), 0, np.sin(angle), 0]
        z[1] = [0, 1, 0, 0]
        z[3] = [0, 1, 0, 1e-3]
        losses.append(nt_xent(PairBatch.from_halves(z[:2], z[2:]), LossConfig(tau))[0])
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_degenerate_batch():
    with pytest.raises(DegenerateBatchError):
        nt_xent(PairBatch.from_halves(np.ones((1, 3)), np.ones((1, 3))))


def test_pairing_must_be_involution():
    with pytest.raises(ValueError):
        PairBatch(np.ones((4, 2)), [1, 2, 3, 0])
    with pytest.raises(ValueError):
        PairBatch(np.ones((4, 2)), [0, 1, 3, 2])


def _places(traverse, positions):
    return [PlaceSample(i, traverse, float(p), (i * 10, i * 10 + 5)) for i, p in enumerate(positions)]


def test_identical_traverses_pair_by_id():
    pos = np.arange(0, 500, 50.0)
    data = _places(0, pos) + _places(1, pos)
    pb = build_batch(data, LossConfig(batch_size=8), theta_m=30.0, seed=2)
    assert len(pb.anchors) == 4
    for a, p in zip(pb.anchors, pb.positives):
        assert a.place_id == p.place_id and a.traverse_id != p.traverse_id


def test_theta_zero_with_jitter_fails(rng):
    pos = np.arange(0, 500, 50.0)
    data = _places(0, pos) + _places(1, pos + rng.uniform(1, 2, len(pos)))
    with pytest.raises(InsufficientPositivesError):
        build_batch(data, LossConfig(batch_size=8), theta_m=0.0, seed=0)


@pytest.mark.parametrize("seed", range(10))
def test_pairs_within_theta_scan(seed):
    r = np.random.default_rng(seed)
    data = []
    for t in range(3):
        data += _places(t, np.arange(0, 1000, 50.0) + r.uniform(-12, 12, 20))
    theta = 30.0
    pb = build_batch(data, LossConfig(batch_size=12), theta_m=theta, seed=seed)
    ids = [(a.traverse_id, a.place_id) for a in pb.anchors]
    assert len(set(ids)) == len(ids)
    for a, p in zip(pb.anchors, pb.positives):
        assert abs(a.position - p.position) <= theta and a.traverse_id != p.traverse_id
    assert build_batch(data, LossConfig(batch_size=12), theta, seed).anchors == pb.anchors
