"""Cosine similarity, NT-Xent loss and geographic positive-pair sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateBatchError, InsufficientPositivesError
from .events import PlaceSample, geo_distance


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    batch_size: int = 64

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities between rows of ``a`` and rows of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine similarity of a zero vector is undefined")
    return (a / na) @ (b / nb).T


@dataclass(frozen=True)
class PairBatch:
    """``2N`` descriptors and the pairing ``pair[i] = j(i)`` (an involution without fixed points)."""

    z: np.ndarray
    pair: np.ndarray

    def __post_init__(self):
        pair = np.asarray(self.pair, dtype=np.int64)
        n2 = len(pair)
        if np.asarray(self.z).shape[0] != n2:
            raise ValueError("descriptor count must match pairing length")
        if n2 % 2 or not np.array_equal(np.sort(pair), np.arange(n2)):
            raise ValueError("pairing must be a permutation of 0..2N-1")
        if np.any(pair[pair] != np.arange(n2)) or np.any(pair == np.arange(n2)):
            raise ValueError("pairing must be an involution without fixed points")
        object.__setattr__(self, "pair", pair)

    @classmethod
    def from_halves(cls, anchors, positives) -> "PairBatch":
        anchors = np.asarray(anchors)
        n = len(anchors)
        z = np.concatenate([anchors, np.asarray(positives)], axis=0)
        pair = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
        return cls(z, pair)

    @property
    def n(self) -> int:
        return len(self.pair) // 2


def nt_xent(batch: PairBatch, cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """Mean NT-Xent loss over all ``2N`` anchors and its gradient w.r.t. ``batch.z``."""
    if batch.n < 2:
        raise DegenerateBatchError(f"NT-Xent needs N >= 2 pairs, got {batch.n}")
    z = np.asarray(batch.z, dtype=np.float64)
    n2 = len(z)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero descriptor in batch")
    u = z / norms
    sim = u @ u.T
    logits = sim / cfg.tau
    np.fill_diagonal(logits, -np.inf)
    rows = np.arange(n2)
    lse = logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[rows, batch.pair]))

    soft = np.exp(logits - lse[:, None])
    soft[rows, batch.pair] -= 1.0
    g_sim = soft / (cfg.tau * n2)
    g_u = (g_sim + g_sim.T) @ u
    g_z = (g_u - u * np.sum(g_u * u, axis=1, keepdims=True)) / norms
    return loss, g_z


@dataclass(frozen=True)
class SamplePairs:
    """Anchor/positive place samples chosen for one training batch."""

    anchors: list[PlaceSample]
    positives: list[PlaceSample]

    def samples(self) -> list[PlaceSample]:
        return list(self.anchors) + list(self.positives)


def _position_array(samples: Sequence[PlaceSample]) -> np.ndarray:
    return np.asarray([s.position for s in samples], dtype=np.float64)


def positive_candidates(samples: Sequence[PlaceSample], theta_m: float) -> list[np.ndarray]:
    """For each sample, indices of samples on other traverses within ``theta_m``."""
    pos = _position_array(samples)
    latlon = pos.ndim == 2
    trav = np.asarray([s.traverse_id for s in samples])
    out = []
    for i in range(len(samples)):
        d = geo_distance(pos[i], pos, latlon)
        ok = (d <= theta_m) & (trav != trav[i])
        out.append(np.flatnonzero(ok))
    return out


def build_batch(
    dataset: Sequence[PlaceSample], cfg: LossConfig, theta_m: float, seed: int,
    n_pairs: int | None = None,
) -> SamplePairs:
    """Sample ``N`` mutually distant anchors, each with one cross-traverse positive.

    ``N`` is ``cfg.batch_size // 2`` (the batch holds ``2N`` samples) unless
    ``n_pairs`` is given. Anchors are kept more than ``theta_m`` apart so no
    two batch members are unintended positives of one another.
    """
    n = n_pairs if n_pairs is not None else cfg.batch_size // 2
    if len({s.traverse_id for s in dataset}) < 2:
        raise ValueError("batch building needs at least two traverses")
    rng = np.random.default_rng(seed)
    pos = _position_array(dataset)
    latlon = pos.ndim == 2
    cands = positive_candidates(dataset, theta_m)
    anchors: list[int] = []
    for i in rng.permutation(len(dataset)):
        if len(anchors) == n:
            break
        if anchors and np.any(geo_distance(pos[i], pos[anchors], latlon) <= theta_m):
            continue
        if len(cands[i]) == 0:
            s = dataset[i]
            raise InsufficientPositivesError(
                f"place {s.place_id} on traverse {s.traverse_id} has no positive within {theta_m} m"
            )
        anchors.append(int(i))
    if len(anchors) < n:
        raise ValueError(f"only {len(anchors)} geographically distinct anchors available, need {n}")
    positives = [int(rng.choice(cands[i])) for i in anchors]
    return SamplePairs([dataset[i] for i in anchors], [dataset[j] for j in positives])
