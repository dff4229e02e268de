"""Recommendation by soft user clustering over interaction embeddings.

A user is never looked up by id: their preference vector is computed from
the items they interacted with (plus optional demographics), so model size
and serving cost do not grow with the user base.
"""

from clusterrec.dataset import (
    Interaction,
    ItemCatalog,
    RatingScale,
    RatingsDataset,
    TripletSplit,
    UserRecord,
    assign_group_labels,
    interaction_split,
    load_demographics,
    load_items,
    load_ratings,
    normalize_rating,
)
from clusterrec.model import ModelConfig, ModelParams, forward, init_params, param_count
from clusterrec.training import TrainConfig, train, triplet_loss
from clusterrec.clustering import (
    Shortlist,
    assign_clusters,
    build_shortlist,
    finalize_shortlist,
    merge_partials,
)
from clusterrec.recommender import Recommendation, recommend, scored_candidates_count
from clusterrec.eval import precision_at_k

__version__ = "0.1.0"

__all__ = [
    "Interaction",
    "ItemCatalog",
    "ModelConfig",
    "ModelParams",
    "RatingScale",
    "RatingsDataset",
    "Recommendation",
    "Shortlist",
    "TrainConfig",
    "TripletSplit",
    "UserRecord",
    "assign_clusters",
    "assign_group_labels",
    "build_shortlist",
    "finalize_shortlist",
    "forward",
    "init_params",
    "interaction_split",
    "load_demographics",
    "load_items",
    "load_ratings",
    "merge_partials",
    "normalize_rating",
    "param_count",
    "precision_at_k",
    "recommend",
    "scored_candidates_count",
    "train",
    "triplet_loss",
]
