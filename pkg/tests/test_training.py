import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import helpers
from oracles import central_difference, rel_err
from clusterrec.dataset import RatingsDataset, UserRecord, split_dataset
from clusterrec.errors import NumericalError, SamplingError, ValidationError
from clusterrec.model import ModelConfig, preference_vectors
from clusterrec.training import (
    TrainConfig,
    pair_distances,
    sample_triplets_group,
    sample_triplets_interaction,
    train,
    triplet_loss,
    triplet_loss_grad,
    write_loss_csv,
)


def test_loss_examples():
    a = [0.5, 0.5, 0.5, 0.5]
    assert triplet_loss(a, [0.5, 0.5, 0.5, 0.9], [0.1] * 4, 0.2) == pytest.approx(0.1, abs=1e-12)
    assert triplet_loss(a, a, a, 0.2) == pytest.approx(0.2)
    # a = p and the scaled negative distance already exceeds the margin
    assert triplet_loss([0.0, 0.0], [0.0, 0.0], [1.0, 1.0], 0.2) == 0.0


def test_loss_length_mismatch():
    with pytest.raises(ValidationError):
        triplet_loss([0.1, 0.2], [0.1], [0.3, 0.3], 0.2)


@settings(max_examples=100)
@given(st.integers(1, 16).flatmap(lambda b: st.tuples(
    *[st.lists(st.floats(0, 1), min_size=b, max_size=b) for _ in range(3)])),
       st.floats(0.01, 2.0))
def test_loss_nonnegative(vecs, margin):
    assert triplet_loss(*vecs, margin) >= 0.0


@settings(max_examples=50)
@given(seed=st.integers(0, 10_000), b=st.integers(2, 8))
def test_hinge_gradient_matches_finite_differences(seed, b):
    rng = np.random.default_rng(seed)
    a, p, n = rng.uniform(size=(3, b))
    margin = 1.0  # keeps the hinge active: scaled distances stay below 1
    loss, ga, gp, gn = triplet_loss_grad(a, p, n, margin)
    assert loss > 0
    for vec, g in ((a, ga), (p, gp), (n, gn)):
        fd = central_difference(lambda: triplet_loss(a, p, n, margin), vec)
        assert rel_err(g, fd).max() < 1e-3


def test_inactive_hinge_has_zero_gradient():
    _, ga, gp, gn = triplet_loss_grad([0.0, 0.0], [0.0, 0.0], [1.0, 1.0], 0.2)
    assert not ga.any() and not gp.any() and not gn.any()


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(margin=0)
    with pytest.raises(ValidationError):
        TrainConfig(strategy="nope")


def _labelled(labels, q=4):
    users = [UserRecord(f"u{i}", np.arange(q), np.full(q, 0.5), np.arange(q), [], lab)
             for i, lab in enumerate(labels)]
    return RatingsDataset(tuple(users), q)


def test_interaction_negative_forced():
    ds = _labelled(["a", "b"])
    splits, _ = split_dataset(ds)
    for spec in sample_triplets_interaction(ds, splits, 50, seed=1):
        assert spec.negative == 1 - spec.anchor
        assert spec.anchor == spec.positive
        assert (spec.anchor_part, spec.positive_part) == ("warmup", "mask")


def test_interaction_single_label_fails():
    ds = _labelled(["a", "a", "a"])
    splits, _ = split_dataset(ds)
    with pytest.raises(SamplingError):
        sample_triplets_interaction(ds, splits, 10, seed=0)


def test_interaction_unlabelled_fallback():
    ds = _labelled([None, None, None])
    splits, _ = split_dataset(ds)
    for spec in sample_triplets_interaction(ds, splits, 30, seed=0):
        assert spec.negative != spec.anchor


def test_sampling_deterministic():
    ds = _labelled(["a", "b", "a", "c", "b"] * 10)
    splits, _ = split_dataset(ds)
    assert sample_triplets_interaction(ds, splits, 1000, 5) == \
        sample_triplets_interaction(ds, splits, 1000, 5)
    assert sample_triplets_group(ds, 1000, 5) == sample_triplets_group(ds, 1000, 5)


def test_group_triplets_forced():
    ds = _labelled(["A", "A", "B"])
    for spec in sample_triplets_group(ds, 40, seed=2):
        assert {spec.anchor, spec.positive} == {0, 1}
        assert spec.negative == 2


def test_group_single_group_fails():
    with pytest.raises(SamplingError):
        sample_triplets_group(_labelled(["A", "A", "A"]), 10, 0)


def test_group_without_pairs_fails():
    with pytest.raises(SamplingError):
        sample_triplets_group(_labelled(["A", "B", "C"]), 10, 0)


SMALL = ModelConfig(embed_dim=4, hidden=(16,), n_clusters=4, seed=0)


def test_zero_learning_rate_is_a_no_op():
    cat, ds = helpers.separable()
    from clusterrec.model import init_params
    start = init_params(cat.n_items, cat.n_features, 0, SMALL)
    params, hist = train(ds, cat, TrainConfig(lr=0.0, epochs=3, batch_size=8), SMALL,
                         params=start.copy())
    for (_, a), (_, b) in zip(start.arrays(), params.arrays()):
        assert np.array_equal(a, b)
    # same triplets are not resampled each epoch, but the model never moves
    assert all(h.mean_loss > 0 for h in hist)


@pytest.mark.parametrize("strategy", ["interaction_split", "group_split"])
def test_separable_data_converges(strategy):
    cat, ds = helpers.separable()
    cfg = TrainConfig(lr=0.01, epochs=20, batch_size=8, strategy=strategy)
    params, hist = train(ds, cat, cfg, SMALL)
    assert hist[-1].mean_loss < hist[0].mean_loss
    z = preference_vectors(params, cat, ds.users)
    pos, neg = pair_distances(z, [u.group_label for u in ds.users], 2000, seed=0)
    assert pos < neg


def test_same_seed_same_history():
    cat, ds = helpers.separable()
    cfg = TrainConfig(lr=0.01, epochs=4, batch_size=8)
    p1, h1 = train(ds, cat, cfg, SMALL)
    p2, h2 = train(ds, cat, cfg, SMALL)
    assert [h.mean_loss for h in h1] == [h.mean_loss for h in h2]
    for (_, a), (_, b) in zip(p1.arrays(), p2.arrays()):
        assert a.tobytes() == b.tobytes()


def test_diverging_training_aborts():
    from clusterrec.model import init_params
    cat, ds = helpers.separable()
    params = init_params(cat.n_items, cat.n_features, 0, SMALL)
    # overflowing hidden units meet mixed-sign output weights: inf - inf
    params.embed[...] = 1.0
    params.weights[0][...] = 1e308
    with pytest.raises(NumericalError):
        with np.errstate(all="ignore"):
            train(ds, cat, TrainConfig(epochs=1, batch_size=8), SMALL, params=params)


def test_loss_csv(tmp_path):
    cat, ds = helpers.separable()
    _, hist = train(ds, cat, TrainConfig(epochs=2, batch_size=8), SMALL)
    write_loss_csv(tmp_path / "loss.csv", hist)
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,active_triplet_frac" and len(lines) == 3


def test_pair_distances_needs_both_kinds():
    with pytest.raises(SamplingError):
        pair_distances(np.zeros((3, 2)), ["a", "b", "c"], 10)
