import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import helpers
from oracles import central_difference, rel_err, sigmoid
from clusterrec.dataset import ItemCatalog, UserRecord
from clusterrec.errors import ArtifactMismatch, DataError, ValidationError
from clusterrec.model import (
    ModelConfig,
    ModelParams,
    backward,
    forward,
    forward_batch,
    init_params,
    item_feature,
    load_model,
    param_count,
    preference_vectors,
    read_model_header,
    save_model,
    user_embedding,
)


def test_item_feature_concatenates():
    cat = ItemCatalog(np.array([[0.5, -0.5]]), ("x",))
    params = init_params(1, 2, 0, ModelConfig(embed_dim=2, hidden=(2,), n_clusters=2))
    params.embed[0] = [0.1, 0.2]
    assert item_feature(params, cat, 0).tolist() == [0.5, -0.5, 0.1, 0.2]
    params.embed[0] = 0.0
    assert item_feature(params, cat, 0).tolist() == [0.5, -0.5, 0.0, 0.0]
    with pytest.raises(IndexError):
        item_feature(params, cat, 1)


def test_user_embedding_examples():
    cat = helpers.catalog(5, 3, seed=1)
    params = helpers.model(cat)
    f2 = item_feature(params, cat, 2)
    assert np.allclose(user_embedding(params, cat, [(2, 1.0)]), f2)
    assert np.allclose(user_embedding(params, cat, [(2, 1.0), (2, -1.0)]), 0.0)
    mixed = [(0, 0.5), (3, -0.25), (4, 1.0)]
    brute = sum(r * np.concatenate([cat.features[i], params.embed[i]]) for i, r in mixed) / 3
    assert np.allclose(user_embedding(params, cat, mixed), brute, atol=1e-12)


def test_zero_params_give_half():
    cat = helpers.catalog(4, 2)
    params = helpers.model(cat, demo_dim=2)
    for _, a in params.arrays():
        a[...] = 0.0
    user = UserRecord("u", [0, 3], [0.4, -0.9], [0, 0], [0.3, 0.1])
    z, _ = forward(params, cat, user)
    assert z.tolist() == [0.5] * 4


def test_hand_computed_two_layer():
    cat = ItemCatalog(np.array([[1.0], [0.5]]), ("a", "b"))
    params = ModelParams(
        embed=np.array([[0.2], [-0.4]]),
        weights=[np.array([[1.0, -1.0], [2.0, 0.5]]), np.array([[0.5, -1.0], [3.0, 2.0]])],
        biases=[np.array([0.1, -0.2]), np.array([0.0, 0.25])],
        feat_dim=1, demo_dim=0,
    )
    user = UserRecord("u", [0, 1], [1.0, -0.5], [0, 0], [])
    # x = ([1, .2] - .5 * [.5, -.4]) / 2 = [.375, .2]; hidden = relu([.875, -.475])
    # logits = [.875 * .5, .875 * -1 + .25]
    z, _ = forward(params, cat, user)
    assert abs(z[0] - sigmoid(0.4375)) < 1e-9
    assert abs(z[1] - sigmoid(-0.625)) < 1e-9


def test_identical_users_identical_output():
    cat = helpers.catalog(6, 2)
    params = helpers.model(cat, demo_dim=1)
    a = UserRecord("a", [1, 4], [0.3, -0.2], [0, 0], [0.5])
    b = UserRecord("b", [1, 4], [0.3, -0.2], [9, 9], [0.5])
    za, _ = forward(params, cat, a)
    zb, _ = forward(params, cat, b)
    assert za.tobytes() == zb.tobytes()


def test_demographic_width_checked():
    cat = helpers.catalog(3, 2)
    params = helpers.model(cat, demo_dim=2)
    with pytest.raises(ValidationError):
        forward(params, cat, UserRecord("u", [0], [1.0], [0], [0.1]))


def test_catalog_mismatch():
    params = helpers.model(helpers.catalog(3, 2))
    with pytest.raises(ArtifactMismatch):
        forward(params, helpers.catalog(4, 2), UserRecord("u", [0], [1.0], [0], []))


def test_empty_history_is_valid():
    cat = helpers.catalog(3, 2)
    params = helpers.model(cat, demo_dim=2)
    z, _ = forward(params, cat, UserRecord("u", [], [], [], [0.0, 0.0]))
    assert z.shape == (4,) and np.all((z > 0) & (z < 1))


def test_param_count_example():
    params = init_params(100, 10, 2, ModelConfig(embed_dim=8, hidden=(16,), n_clusters=32))
    assert params.layer_dims == [20, 16, 32]
    assert param_count(params) == 1680


def test_param_count_ignores_users():
    cat = helpers.catalog(10, 2)
    params = helpers.model(cat)
    before = param_count(params)
    preference_vectors(params, cat, list(helpers.dataset(500, 10).users))
    assert param_count(params) == before


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), q=st.integers(1, 6))
def test_permutation_invariance(seed, q):
    rng = np.random.default_rng(seed)
    cat = helpers.catalog(8, 2, seed=seed)
    params = helpers.model(cat, seed=seed)
    items = rng.choice(8, size=q, replace=False)
    ratings = rng.uniform(-1, 1, size=q)
    perm = rng.permutation(q)
    z1, _ = forward(params, cat, UserRecord("u", items, ratings, np.zeros(q), []))
    z2, _ = forward(params, cat, UserRecord("u", items[perm], ratings[perm], np.zeros(q), []))
    assert np.allclose(z1, z2, atol=1e-12)
    assert np.all((z1 >= 0) & (z1 <= 1))


def _linear_loss(params, cat, histories, demo, coef):
    z, _ = forward_batch(params, cat, histories, demo)
    return float((coef * z).sum())


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    cat = helpers.catalog(6, 2, seed=3)
    params = helpers.model(cat, demo_dim=2, hidden=(5, 3), n_clusters=3, seed=3)
    histories = [(np.array([0, 2, 5]), np.array([0.7, -0.3, 0.9])),
                 (np.array([1, 2]), np.array([-0.2, 0.6]))]
    demo = rng.normal(size=(2, 2))
    coef = rng.normal(size=(2, 3))
    _, trace = forward_batch(params, cat, histories, demo)
    grads = backward(params, trace, coef)
    f = lambda: _linear_loss(params, cat, histories, demo, coef)
    analytic = [grads.dense_embed(6)] + grads.weights + grads.biases
    arrays = [params.embed] + params.weights + params.biases
    for a, g in zip(arrays, analytic):
        assert rel_err(g, central_difference(f, a)).max() < 1e-3


def test_absent_items_get_zero_gradient():
    cat = helpers.catalog(6, 2)
    params = helpers.model(cat)
    z, trace = forward_batch(params, cat, [(np.array([1, 3]), np.array([0.5, 0.5]))],
                             np.zeros((1, 0)))
    g = backward(params, trace, np.ones_like(z)).dense_embed(6)
    assert np.all(g[[0, 2, 4, 5]] == 0.0)
    assert np.any(g[[1, 3]] != 0.0)


def test_zero_loss_grad_gives_zero_gradients():
    cat = helpers.catalog(4, 2)
    params = helpers.model(cat)
    z, trace = forward_batch(params, cat, [(np.array([1]), np.array([1.0]))], np.zeros((1, 0)))
    g = backward(params, trace, np.zeros_like(z))
    assert all(not w.any() for w in g.weights + g.biases) and not g.embed_grad.any()


def test_stale_trace_rejected():
    cat = helpers.catalog(4, 2)
    params = helpers.model(cat)
    z, trace = forward_batch(params, cat, [(np.array([1]), np.array([1.0]))], np.zeros((1, 0)))
    params.bump()
    with pytest.raises(ArtifactMismatch):
        backward(params, trace, np.ones_like(z))


def test_model_file_roundtrip(tmp_path):
    cat = helpers.catalog(7, 3)
    params = helpers.model(cat, demo_dim=2, hidden=(5, 4))
    # exactly representable in float32 so the round trip is lossless
    for _, a in params.arrays():
        a[...] = a.astype(np.float32)
    path = tmp_path / "m.bin"
    save_model(path, params, (0.5, 5.0), {"note": "x"})
    loaded, header = load_model(path)
    for (name, a), (_, b) in zip(params.arrays(), loaded.arrays()):
        assert a.tobytes() == b.tobytes(), name
    assert header["rating_scale"] == [0.5, 5.0]
    assert header["meta"] == {"note": "x"}
    assert read_model_header(path)["fingerprint"] == params.fingerprint()
    assert loaded.fingerprint() == params.fingerprint()
    save_model(tmp_path / "again.bin", loaded, (0.5, 5.0), {"note": "x"})
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_corrupt_model_file(tmp_path):
    path = tmp_path / "m.bin"
    path.write_bytes(b"not a model at all")
    with pytest.raises(DataError):
        load_model(path)
