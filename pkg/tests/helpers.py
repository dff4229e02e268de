"""Random problem generators shared by the test modules."""

import numpy as np

from clusterrec.dataset import ItemCatalog, RatingsDataset, UserRecord
from clusterrec.model import ModelConfig, init_params


def catalog(n_items, n_features, seed=0, genres=0):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n_items, n_features))
    cols = [f"f{i}" for i in range(n_features)]
    if genres:
        tags = np.zeros((n_items, genres))
        tags[np.arange(n_items), np.arange(n_items) % genres] = 1.0
        feats = np.concatenate([tags, feats], axis=1)
        cols = [f"genre:g{g}" for g in range(genres)] + cols
    return ItemCatalog(feats, tuple(f"i{j}" for j in range(n_items)), tuple(cols))


def dataset(n_users, n_items, seed=0, demo_dim=0, max_q=8, min_q=0, p_liked=0.6):
    rng = np.random.default_rng(seed)
    users = []
    for u in range(n_users):
        q = int(rng.integers(min_q, max_q + 1))
        items = rng.choice(n_items, size=min(q, n_items), replace=False)
        signs = np.where(rng.random(items.size) < p_liked, 1.0, -1.0)
        ratings = signs * rng.uniform(0.05, 1.0, size=items.size)
        users.append(UserRecord(f"u{u}", items, ratings, np.arange(items.size, dtype=float),
                                rng.normal(size=demo_dim)))
    return RatingsDataset(tuple(users), n_items, demo_dim)


def model(cat, demo_dim=0, embed_dim=3, hidden=(4,), n_clusters=4, seed=0):
    return init_params(cat.n_items, cat.n_features, demo_dim,
                       ModelConfig(embed_dim, tuple(hidden), n_clusters, seed))


def separable(n_per_group=20, items_per_group=10, seed=0):
    """Two groups whose liked items are disjoint; group label = genre."""
    rng = np.random.default_rng(seed)
    n_items = 2 * items_per_group
    feats = np.zeros((n_items, 2))
    feats[:items_per_group, 0] = 1.0
    feats[items_per_group:, 1] = 1.0
    cat = ItemCatalog(feats, tuple(f"i{j}" for j in range(n_items)), ("genre:a", "genre:b"))
    users = []
    for g in range(2):
        pool = np.arange(g * items_per_group, (g + 1) * items_per_group)
        for u in range(n_per_group):
            items = rng.choice(pool, size=items_per_group // 2 + 2, replace=False)
            ratings = rng.uniform(0.3, 1.0, size=items.size)
            users.append(UserRecord(f"g{g}u{u}", items, ratings,
                                    np.arange(items.size, dtype=float), [],
                                    group_label="ab"[g]))
    return cat, RatingsDataset(tuple(users), n_items, 0)
