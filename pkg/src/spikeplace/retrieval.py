"""Exact descriptor retrieval, Recall@N / precision-recall metrics, and the
SAD and PCA histogram baselines."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDatabaseError, GeometryError
from .events import geo_distance


@dataclass(frozen=True)
class EvalConfig:
    theta_m: float = 30.0
    n_values: tuple[int, ...] = (1, 5, 10, 20)

    def __post_init__(self):
        if not self.theta_m > 0:
            raise ValueError("theta_m must be positive")
        object.__setattr__(self, "n_values", tuple(sorted({int(n) for n in self.n_values})))
        if any(n < 1 for n in self.n_values):
            raise ValueError("N values must be >= 1")


@dataclass(frozen=True, eq=False)
class DescriptorDB:
    """Reference descriptors with per-row place metadata."""

    descriptors: np.ndarray
    place_ids: np.ndarray
    positions: np.ndarray
    traverse_ids: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.descriptors, dtype=np.float64)
        if d.ndim != 2:
            raise GeometryError("descriptor matrix must be 2-D")
        pid = np.asarray(self.place_ids, dtype=np.int64)
        pos = np.asarray(self.positions, dtype=np.float64)
        trav = np.zeros(len(pid), np.int64) if self.traverse_ids is None else np.asarray(self.traverse_ids, np.int64)
        if not (len(d) == len(pid) == len(pos) == len(trav)):
            raise ValueError("descriptor rows and metadata must have equal length")
        keys = set(zip(trav.tolist(), pid.tolist()))
        if len(keys) != len(pid):
            raise ValueError("duplicate (traverse, place_id) rows")
        norms = np.linalg.norm(d, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero descriptor in database")
        object.__setattr__(self, "descriptors", d)
        object.__setattr__(self, "place_ids", pid)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "traverse_ids", trav)
        object.__setattr__(self, "_unit", d / norms)

    def __len__(self) -> int:
        return len(self.place_ids)

    @property
    def latlon(self) -> bool:
        return self.positions.ndim == 2

    def similarities(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        nq = np.linalg.norm(q, axis=-1, keepdims=True)
        if np.any(nq == 0):
            raise ValueError("zero query descriptor")
        return (q / nq) @ self._unit.T


def rank_rows(scores: np.ndarray, place_ids: np.ndarray, descending: bool = True) -> np.ndarray:
    """Row order by score, ties broken by ascending place id (then row index)."""
    key = -scores if descending else scores
    return np.lexsort((np.arange(len(scores)), place_ids, key))


def query_topn(db: DescriptorDB, q, n: int) -> list[tuple[int, float]]:
    """Top-``n`` ``(row, similarity)`` pairs for one query descriptor."""
    if len(db) == 0:
        raise EmptyDatabaseError("descriptor database is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    sims = db.similarities(q)
    order = rank_rows(sims, db.place_ids)[:n]
    return [(int(i), float(sims[i])) for i in order]


@dataclass
class RetrievalResult:
    """Ranked candidates per query (rows of ``ranks`` index the database)."""

    query_ids: np.ndarray
    ranks: np.ndarray
    scores: np.ndarray
    distances: np.ndarray
    correct: np.ndarray
    has_match: np.ndarray
    place_ids: np.ndarray = field(default=None)

    @property
    def n_queries(self) -> int:
        return len(self.query_ids)

    @property
    def n_excluded(self) -> int:
        return int(np.count_nonzero(~self.has_match))


def _finish(db, order, scores, query_positions, query_ids, theta_m) -> RetrievalResult:
    qpos = np.asarray(query_positions, dtype=np.float64)
    dist = np.stack([geo_distance(qpos[i], db.positions[order[i]], db.latlon) for i in range(len(order))]) \
        if len(order) else np.zeros((0, order.shape[1]))
    all_d = np.stack([geo_distance(qpos[i], db.positions, db.latlon) for i in range(len(qpos))]) \
        if len(qpos) else np.zeros((0, len(db)))
    return RetrievalResult(
        query_ids=np.asarray(query_ids if query_ids is not None else np.arange(len(qpos))),
        ranks=order,
        scores=scores,
        distances=dist,
        correct=dist <= theta_m,
        has_match=(all_d <= theta_m).any(axis=1),
        place_ids=db.place_ids[order],
    )


def retrieve(db: DescriptorDB, queries, query_positions, cfg: EvalConfig, n: int | None = None,
             query_ids=None) -> RetrievalResult:
    if len(db) == 0:
        raise EmptyDatabaseError("descriptor database is empty")
    n = min(n or max(cfg.n_values), len(db))
    sims = db.similarities(np.atleast_2d(queries))
    order = np.stack([rank_rows(s, db.place_ids)[:n] for s in sims]) if len(sims) else np.zeros((0, n), np.int64)
    scores = np.take_along_axis(sims, order, axis=1) if len(sims) else np.zeros((0, n))
    return _finish(db, order, scores, query_positions, query_ids, cfg.theta_m)


def recall_at_n(results: RetrievalResult, cfg: EvalConfig) -> list[tuple[int, float]]:
    """``(N, recall)`` pairs over queries that have a reference within ``theta_m``."""
    valid = results.has_match
    m = int(valid.sum())
    out = []
    for n in cfg.n_values:
        if m == 0:
            out.append((n, float("nan")))
            continue
        hit = results.correct[valid, :n].any(axis=1)
        out.append((n, float(hit.sum()) / m))
    return out


@dataclass
class PRCurve:
    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def precision_at_full_recall(self) -> float:
        """Precision once every query is accepted (reported as "Precision@100")."""
        return float(self.precision[-1]) if len(self.precision) else float("nan")

    def auc(self) -> float:
        if len(self.recall) == 0:
            return float("nan")
        r = np.concatenate([[0.0], self.recall])
        p = np.concatenate([[self.precision[0]], self.precision])
        return float(np.sum(np.diff(r) * p[1:]))


def precision_recall(results: RetrievalResult, cfg: EvalConfig | None = None) -> PRCurve:
    """Sweep the acceptance threshold over the top-1 scores, highest first.

    A query is accepted when its top-1 similarity is at least the threshold.
    TP = accepted and correct, FP = accepted and wrong, FN = rejected. Only
    queries with a reference inside the tolerance take part.
    """
    valid = results.has_match
    s = results.scores[valid, 0]
    c = results.correct[valid, 0]
    thresholds = np.unique(s)[::-1]
    tp = np.array([np.count_nonzero((s >= t) & c) for t in thresholds], dtype=np.int64)
    acc = np.array([np.count_nonzero(s >= t) for t in thresholds], dtype=np.int64)
    fp = acc - tp
    fn = len(s) - acc
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(acc > 0, tp / np.maximum(acc, 1), 1.0)
        recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
    return PRCurve(thresholds, recall.astype(float), precision.astype(float), tp, fp, fn)


# --------------------------------------------------------------------------
# histogram baselines


def _flatten_refs(refs) -> np.ndarray:
    refs = np.asarray(refs)
    return refs.reshape(len(refs), -1)


def sad_distances(refs, query) -> np.ndarray:
    refs = np.asarray(refs)
    query = np.asarray(query)
    if refs.shape[1:] != query.shape:
        raise GeometryError(f"query shape {query.shape} != reference shape {refs.shape[1:]}")
    return np.abs(_flatten_refs(refs).astype(np.int64) - query.reshape(-1).astype(np.int64)).sum(axis=1)


def sad_rank(refs, query, place_ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Reference rows by ascending sum of absolute differences; returns ``(order, distances)``."""
    d = sad_distances(refs, query)
    pid = np.arange(len(d)) if place_ids is None else np.asarray(place_ids)
    order = rank_rows(d.astype(np.float64), pid, descending=False)
    return order, d[order]


@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (k, D)
    singular_values: np.ndarray

    def project(self, x) -> np.ndarray:
        """Project a batch of samples (any trailing shape) to ``[M, k]``."""
        x = np.asarray(x, dtype=np.float64)
        return (x.reshape(len(x), -1) - self.mean) @ self.components.T


def fit_pca(refs, k: int, rtol: float = 1e-10) -> PCAModel:
    x = _flatten_refs(refs).astype(np.float64)
    m, d = x.shape
    if m < 2:
        raise ValueError("PCA needs at least two references")
    if not 1 <= k <= min(m, d):
        raise ValueError(f"k must be in [1, {min(m, d)}], got {k}")
    mean = x.mean(axis=0)
    _, sv, vt = np.linalg.svd(x - mean, full_matrices=False)
    rank = int(np.count_nonzero(sv > rtol * max(sv[0] if len(sv) else 0.0, 1e-300)))
    if k > rank:
        warnings.warn(f"PCA k={k} exceeds data rank {rank}; using k={rank}", RuntimeWarning, stacklevel=2)
        k = rank
    return PCAModel(mean, vt[:k], sv[:k])


def pca_rank(refs, query, k: int = 64, place_ids=None, model: PCAModel | None = None):
    """Rank references by Euclidean distance after projecting on the top ``k`` components."""
    refs = np.asarray(refs)
    query = np.asarray(query)
    if refs.shape[1:] != query.shape:
        raise GeometryError(f"query shape {query.shape} != reference shape {refs.shape[1:]}")
    model = model or fit_pca(refs, k)
    pr = model.project(refs)
    pq = model.project(query[None])[0]
    d = np.linalg.norm(pr - pq, axis=1)
    pid = np.arange(len(d)) if place_ids is None else np.asarray(place_ids)
    order = rank_rows(d, pid, descending=False)
    return order, d[order]


def baseline_retrieve(method: str, ref_hists, ref_ids, ref_positions, query_hists, query_positions,
                      cfg: EvalConfig, k: int = 64, query_ids=None) -> RetrievalResult:
    """Run the SAD or PCA baseline over a set of queries; scores are negated distances."""
    ref_hists = np.asarray(ref_hists)
    ref_ids = np.asarray(ref_ids)
    db = _MetaOnly(np.asarray(ref_ids, np.int64), np.asarray(ref_positions, np.float64))
    n = min(max(cfg.n_values), len(ref_ids))
    if method == "sad":
        rank = lambda q: sad_rank(ref_hists, q, ref_ids)
    elif method == "pca":
        model = fit_pca(ref_hists, min(k, len(ref_hists), ref_hists[0].size))
        rank = lambda q: pca_rank(ref_hists, q, k, ref_ids, model)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    orders, scores = [], []
    for q in query_hists:
        o, d = rank(q)
        orders.append(o[:n])
        scores.append(-np.asarray(d[:n], dtype=np.float64))
    order = np.asarray(orders, dtype=np.int64).reshape(len(orders), n)
    return _finish(db, order, np.asarray(scores).reshape(len(orders), n), query_positions, query_ids, cfg.theta_m)


@dataclass
class _MetaOnly:
    place_ids: np.ndarray
    positions: np.ndarray

    @property
    def latlon(self) -> bool:
        return self.positions.ndim == 2


# --------------------------------------------------------------------------
# outputs


def write_recall_csv(curve: Sequence[tuple[int, float]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,recall\n")
        for n, r in curve:
            fh.write(f"{n},{r:.6f}\n")


def write_pr_csv(pr: PRCurve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold,recall,precision\n")
        for t, r, p in zip(pr.thresholds, pr.recall, pr.precision):
            fh.write(f"{t:.9g},{r:.6f},{p:.6f}\n")


def write_match_report(results: RetrievalResult, path, n: int = 5) -> None:
    rows = []
    for i in range(results.n_queries):
        top = []
        for j in range(min(n, results.ranks.shape[1])):
            top.append({
                "place_id": int(results.place_ids[i, j]),
                "similarity": float(results.scores[i, j]),
                "distance_m": float(results.distances[i, j]),
                "correct": bool(results.correct[i, j]),
            })
        rows.append({"query_id": int(results.query_ids[i]), "has_match": bool(results.has_match[i]), "top": top})
    Path(path).write_text(json.dumps(rows, indent=1) + "\n")
