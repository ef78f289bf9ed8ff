"""Semantic-component hashing.

Learns compact binary codes for retrieval by alternating two phases:
fitting a two-level latent component structure (Gaussian mixture over
codes, k-means over its means) and optimizing a small hash encoder with
component-weighted contrastive and component-alignment objectives.
"""

from .components import (
    CoarseLevel,
    ComponentStructure,
    FineLevel,
    build_structure,
    coarse_assignments,
    fine_assignments,
    fit_coarse,
    fit_gmm,
)
from .data import FeatureSet, synthetic_clusters
from .encoder import (
    BinaryCodes,
    HashModel,
    encode_binary,
    encode_relaxed,
    init_model,
    load_model,
    save_model,
)
from .losses import (
    AugmentedBatch,
    PairWeights,
    loss_baseline,
    loss_component,
    loss_instance,
    pair_similarity,
    total_loss,
)
from .retrieval import RetrievalReport, evaluate, hamming_distance, map_at_k, pr_curve
from .training import AdamState, TrainConfig, TrainResult, ablation_run, adam_step, augment, run_em

__version__ = "0.1.0"
