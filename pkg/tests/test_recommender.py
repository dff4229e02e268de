import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import helpers
import oracles
from clusterrec.clustering import Shortlist, build_shortlist
from clusterrec.dataset import UserRecord
from clusterrec.errors import ArtifactMismatch
from clusterrec.model import forward
from clusterrec.recommender import (
    recommend,
    recommend_batch,
    scored_candidates_count,
    vote,
    write_recommendations_csv,
)


def _shortlist(clusters, n_items=10):
    items = tuple(np.array(list(c), dtype=np.int64) for c in clusters)
    scores = tuple(np.array(list(c.values()), dtype=float) for c in clusters)
    return Shortlist(items, scores, tuple(np.ones(a.size) for a in items), n_items, None, None)


def test_vote_example():
    sl = _shortlist([{4: 0.9, 1: 0.3}, {4: 0.5, 2: 0.6}])
    items, scores, n = vote(sl, [0, 1], [0.8, 0.2], top_n=None)
    got = dict(zip(items.tolist(), scores.tolist()))
    assert got[4] == pytest.approx(0.82, abs=1e-12)
    assert got[1] == pytest.approx(0.3) and got[2] == pytest.approx(0.6)
    assert n == 3
    assert items.tolist() == [4, 2, 1]


def test_single_cluster_returns_its_scores():
    sl = _shortlist([{3: 0.7, 5: 0.9, 1: 0.7}])
    items, scores, _ = vote(sl, [0], [0.37], exclude=[5], top_n=None)
    assert items.tolist() == [1, 3]
    assert scores == pytest.approx([0.7, 0.7], abs=1e-12)


def test_exclude_everything():
    sl = _shortlist([{0: 0.5, 1: 0.4}])
    items, _, n = vote(sl, [0], [0.9], exclude=[0, 1])
    assert items.size == 0 and n == 2


def test_candidate_bound():
    sl = _shortlist([{i: 0.5 for i in range(c * 50, c * 50 + 50)} for c in range(4)],
                    n_items=1000)
    assert scored_candidates_count(sl, 2) == 100
    assert scored_candidates_count(sl, 4) == 200


@pytest.fixture(scope="module")
def trained():
    cat = helpers.catalog(20, 3, seed=11)
    params = helpers.model(cat, seed=11, n_clusters=6)
    ds = helpers.dataset(40, 20, seed=11)
    return cat, params, ds, build_shortlist(params, cat, ds.users, 3)


def test_matches_reference_loops(trained):
    cat, params, ds, sl = trained
    net = lambda u: forward(params, cat, u)[0]
    table = {c: sl.cluster(c) for c in range(sl.n_clusters)}
    for user in ds.users[:10]:
        want = oracles.reference_vote(net, user, table, 3)
        rec = recommend(params, cat, sl, user, k=3, top_n=None, exclude_seen=False)
        assert rec.items.tolist() == [i for i, _ in want]
        assert np.allclose(rec.scores, [s for _, s in want], atol=1e-9, rtol=0)


def test_excludes_seen(trained):
    cat, params, ds, sl = trained
    for user in ds.users[:10]:
        rec = recommend(params, cat, sl, user, k=3, top_n=None)
        assert not set(rec.items.tolist()) & set(user.items.tolist())
        assert len(set(rec.items.tolist())) == len(rec)
        assert np.all(np.diff(rec.scores) <= 0)


def test_batch_equals_single(trained):
    cat, params, ds, sl = trained
    batch = recommend_batch(params, cat, sl, ds.users, 3, 5)
    for user, rec in zip(ds.users, batch):
        one = recommend(params, cat, sl, user, 3, 5)
        assert rec.items.tolist() == one.items.tolist()
        assert np.allclose(rec.scores, one.scores, atol=1e-12)


def test_scored_within_bound(trained):
    cat, params, ds, sl = trained
    bound = scored_candidates_count(sl, 3)
    assert all(r.n_scored <= bound for r in recommend_batch(params, cat, sl, ds.users, 3))


def test_cold_start_user(trained):
    cat, params, _, sl = trained
    rec = recommend(params, cat, sl, UserRecord("new", [], [], [], []), k=2, top_n=4)
    assert len(rec) == 4 and rec.cluster_ids.size == 2


def test_version_mismatch(trained):
    cat, params, _, sl = trained
    other = params.copy()
    other.embed[0, 0] += 1.0
    other.bump()
    with pytest.raises(ArtifactMismatch):
        recommend(other, cat, sl, UserRecord("u", [], [], [], []))


@settings(max_examples=60)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 4))
def test_vote_is_convex_combination(seed, k):
    rng = np.random.default_rng(seed)
    clusters = [{int(i): float(rng.uniform(0.01, 1)) for i in rng.choice(15, 6, replace=False)}
                for _ in range(4)]
    sl = _shortlist(clusters, 15)
    chosen = rng.choice(4, k, replace=False)
    conf = rng.uniform(0.01, 1, size=k)
    items, scores, _ = vote(sl, chosen, conf, top_n=None)
    for item, score in zip(items.tolist(), scores.tolist()):
        listed = [clusters[c][item] for c in chosen if item in clusters[c]]
        assert min(listed) - 1e-12 <= score <= max(listed) + 1e-12


def test_csv_output(trained):
    cat, params, ds, sl = trained
    recs = recommend_batch(params, cat, sl, ds.users[:2], 3, 2)
    buf = io.StringIO()
    assert write_recommendations_csv(buf, zip(["a", "b"], recs), cat.item_ids) == 2
    lines = buf.getvalue().splitlines()
    assert lines[0] == "user,rank,item,score"
    assert [ln.split(",")[:2] for ln in lines[1:]] == [["a", "1"], ["a", "2"], ["b", "1"],
                                                        ["b", "2"]]
    assert lines[1].split(",")[2] == cat.item_ids[recs[0].items[0]]
