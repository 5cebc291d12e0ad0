import json

import numpy as np
import pytest

from spikeplace.errors import EmptyDatabaseError, GeometryError
from spikeplace.retrieval import (
    DescriptorDB,
    EvalConfig,
    fit_pca,
    pca_rank,
    precision_recall,
    query_topn,
    recall_at_n,
    retrieve,
    sad_distances,
    sad_rank,
    write_match_report,
    write_pr_csv,
    write_recall_csv,
)


def brute_topn(desc, ids, q, n):
    """Exhaustive scan: cosine score, ties by place id."""
    rows = []
    for i, d in enumerate(desc):
        s = float(np.dot(d, q) / (np.linalg.norm(d) * np.linalg.norm(q)))
        rows.append((-s, int(ids[i]), i))
    rows.sort()
    return [r[2] for r in rows[:n]]


def _db(rng, m=200, dim=16):
    return DescriptorDB(rng.normal(size=(m, dim)), np.arange(m), np.arange(m) * 50.0)


def test_self_retrieval(rng):
    db = _db(rng)
    top = query_topn(db, db.descriptors[17], 1)
    assert top[0][0] == 17 and top[0][1] == pytest.approx(1.0)


def test_exhaustive_n(rng):
    db = _db(rng, m=10)
    top = query_topn(db, rng.normal(size=16), 50)
    assert len(top) == 10
    assert all(a[1] >= b[1] for a, b in zip(top, top[1:]))


def test_topn_matches_brute_force(rng):
    db = _db(rng)
    for _ in range(20):
        q = rng.normal(size=16)
        assert [r for r, _ in query_topn(db, q, 10)] == brute_topn(db.descriptors, db.place_ids, q, 10)


def test_tie_break_by_place_id():
    d = np.array([[1.0, 0], [1.0, 0], [0, 1.0]])
    db = DescriptorDB(d, [7, 3, 1], [0.0, 1.0, 2.0])
    assert [r for r, _ in query_topn(db, [1.0, 0], 3)] == [1, 0, 2]


def test_empty_db():
    db = DescriptorDB(np.zeros((0, 4)), [], [])
    with pytest.raises(EmptyDatabaseError):
        query_topn(db, np.ones(4), 1)


def test_duplicate_rows_rejected():
    with pytest.raises(ValueError):
        DescriptorDB(np.ones((2, 3)), [1, 1], [0.0, 1.0], [0, 0])


def _instance(rng, m=40, nq=50, dim=8, theta=30.0):
    db = DescriptorDB(rng.normal(size=(m, dim)), np.arange(m), np.arange(m) * 50.0)
    qpos = rng.uniform(-60, m * 50 + 60, nq)
    q = rng.normal(size=(nq, dim))
    return db, q, qpos, EvalConfig(theta, (1, 2, 5, 10, m))


def test_recall_matches_scan_oracle(rng):
    db, q, qpos, cfg = _instance(rng)
    res = retrieve(db, q, qpos, cfg)
    curve = dict(recall_at_n(res, cfg))
    valid = [i for i in range(len(q)) if np.min(np.abs(db.positions - qpos[i])) <= cfg.theta_m]
    assert res.n_excluded == len(q) - len(valid)
    for n in cfg.n_values:
        hits = 0
        for i in valid:
            top = brute_topn(db.descriptors, db.place_ids, q[i], n)
            hits += any(abs(db.positions[r] - qpos[i]) <= cfg.theta_m for r in top)
        assert curve[n] == hits / len(valid)
    values = [curve[n] for n in cfg.n_values]
    assert values == sorted(values) and values[-1] == 1.0


def test_perfect_retrieval(rng):
    m = 12
    d = rng.normal(size=(m, 6))
    db = DescriptorDB(d, np.arange(m), np.arange(m) * 50.0)
    cfg = EvalConfig(30.0, (1,))
    res = retrieve(db, d * 2.0, np.arange(m) * 50.0 + 3.0, cfg)
    assert recall_at_n(res, cfg) == [(1, 1.0)]
    pr = precision_recall(res)
    assert np.all(pr.precision == 1.0)
    assert pr.recall[-1] == 1.0


def test_half_correct_precision():
    # 4 queries, uniform top-1 score, two land on the right place
    d = np.eye(4)
    db = DescriptorDB(d, np.arange(4), np.arange(4) * 100.0)
    q = np.eye(4)[[0, 1, 0, 1]]
    res = retrieve(db, q, [0.0, 100.0, 200.0, 300.0], EvalConfig(30.0, (1,)))
    pr = precision_recall(res)
    assert len(pr.thresholds) == 1
    assert pr.precision_at_full_recall == 0.5
    assert pr.recall[-1] == 1.0


def test_pr_counts_consistent(rng):
    db, q, qpos, cfg = _instance(rng, nq=80)
    res = retrieve(db, q, qpos, cfg)
    pr = precision_recall(res, cfg)
    n_valid = int(res.has_match.sum())
    s = res.scores[res.has_match, 0]
    for t, tp, fp, fn in zip(pr.thresholds, pr.tp, pr.fp, pr.fn):
        assert tp + fp == np.count_nonzero(s >= t)
        assert tp + fp + fn == n_valid
    assert pr.recall[0] >= 0 and pr.recall[-1] == 1.0
    assert np.all(np.diff(pr.recall) >= 0)


def test_rescaling_invariance(rng):
    db, q, qpos, cfg = _instance(rng)
    res = retrieve(db, q, qpos, cfg)
    db2 = DescriptorDB(db.descriptors * 7.5, db.place_ids, db.positions)
    res2 = retrieve(db2, q * 0.01, qpos, cfg)
    assert np.array_equal(res.ranks, res2.ranks)
    assert recall_at_n(res, cfg) == recall_at_n(res2, cfg)
    np.testing.assert_array_equal(precision_recall(res).precision, precision_recall(res2).precision)


def test_latlon_ground_truth():
    d = np.eye(2)
    db = DescriptorDB(d, [0, 1], [[-27.0, 153.0], [-27.01, 153.0]])
    res = retrieve(db, [[1.0, 0.0]], [[-27.0001, 153.0]], EvalConfig(30.0, (1,)))
    assert res.correct[0, 0] and res.distances[0, 0] == pytest.approx(11.12, abs=0.01)


# -- baselines -------------------------------------------------------------------

def test_sad_exact_match_and_symmetry(rng):
    refs = rng.integers(0, 5, (6, 2, 3, 3))
    order, dist = sad_rank(refs, refs[4])
    assert order[0] == 4 and dist[0] == 0
    a, b = refs[0], refs[1]
    assert sad_distances(a[None], b)[0] == sad_distances(b[None], a)[0]


def test_sad_scan_oracle(rng):
    refs = rng.integers(0, 9, (5, 2, 3, 3))
    q = rng.integers(0, 9, (2, 3, 3))
    expect = []
    for r in refs:
        total = 0
        for c in range(2):
            for y in range(3):
                for x in range(3):
                    total += abs(int(q[c, y, x]) - int(r[c, y, x]))
        expect.append(total)
    assert list(sad_distances(refs, q)) == expect


def test_sad_geometry_mismatch(rng):
    with pytest.raises(GeometryError):
        sad_rank(rng.integers(0, 3, (3, 2, 4, 4)), np.zeros((2, 3, 4)))


def test_pca_full_rank_equals_euclidean(rng):
    refs = rng.normal(size=(8, 5))
    q = rng.normal(size=5)
    order, _ = pca_rank(refs, q, k=5)
    assert list(order) == list(np.argsort(np.linalg.norm(refs - q, axis=1)))


def test_pca_degenerate_collapses(rng):
    refs = np.tile(rng.normal(size=(1, 6)), (4, 1))
    with pytest.warns(RuntimeWarning):
        model = fit_pca(refs + 0.0, 2)
    assert model.components.shape[0] == 0
    _, d = pca_rank(refs, rng.normal(size=6), model=model)
    assert np.all(d == d[0])


def test_pca_known_axis(rng):
    axis = np.array([np.cos(0.3), np.sin(0.3)])
    t = rng.normal(scale=5.0, size=400)
    perp = np.array([-axis[1], axis[0]])
    pts = t[:, None] * axis + rng.normal(scale=0.1, size=400)[:, None] * perp
    comp = fit_pca(pts, 1).components[0]
    assert min(np.abs(comp - axis).max(), np.abs(comp + axis).max()) < 1e-2
    # exactly rank-one data: alignment to machine precision
    comp = fit_pca(t[:, None] * axis, 1).components[0]
    assert min(np.abs(comp - axis).max(), np.abs(comp + axis).max()) < 1e-6


# -- outputs ------------------------------------------------------------------------

def test_output_files(rng, tmp_path):
    db, q, qpos, cfg = _instance(rng, nq=5)
    res = retrieve(db, q, qpos, cfg)
    write_recall_csv(recall_at_n(res, cfg), tmp_path / "r.csv")
    write_pr_csv(precision_recall(res), tmp_path / "p.csv")
    write_match_report(res, tmp_path / "m.json", n=3)
    assert (tmp_path / "r.csv").read_text().startswith("n,recall\n")
    assert (tmp_path / "p.csv").read_text().startswith("threshold,recall,precision\n")
    rows = json.loads((tmp_path / "m.json").read_text())
    assert len(rows) == 5 and len(rows[0]["top"]) == 3
    assert set(rows[0]["top"][0]) == {"place_id", "similarity", "distance_m", "correct"}
