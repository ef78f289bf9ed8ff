"""In-memory dataset container and synthetic cluster fixtures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import seeds
from .errors import ContractError
from .ndmath import as_tensor


@dataclass
class FeatureSet:
    """Real-valued feature rows with optional multi-hot labels."""

    features: np.ndarray  # (n, d) float64
    labels: Optional[np.ndarray] = None  # (n, c) 0/1

    def __post_init__(self):
        self.features = np.atleast_2d(as_tensor(self.features))
        if self.labels is not None:
            self.labels = np.atleast_2d(np.asarray(self.labels, dtype=np.uint8))
            if self.labels.shape[0] != self.features.shape[0]:
                raise ContractError(
                    f"label rows {self.labels.shape[0]} do not match feature rows {self.features.shape[0]}"
                )
            if not self.labels.any(axis=1).all():
                raise ContractError("every labeled sample needs at least one positive label")

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def synthetic_clusters(
    clusters: int,
    train_n: int,
    query_n: int,
    d: int,
    sigma: float,
    seed: int,
) -> tuple[FeatureSet, FeatureSet]:
    """Gaussian blobs around shared unit-norm random centers.

    Returns (train, query) sets drawn around the same centers, with
    single-class multi-hot labels assigned cyclically so classes stay
    balanced and interleaved.
    """
    if clusters < 1 or train_n < clusters or query_n < 1 or d < 1:
        raise ContractError(
            f"synthetic_clusters: bad sizes clusters={clusters}, train_n={train_n}, query_n={query_n}, d={d}"
        )
    rng = seeds.stream(seed, seeds.SYNTH)
    centers = rng.standard_normal((clusters, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    def draw(n: int) -> FeatureSet:
        assign = np.arange(n) % clusters
        X = centers[assign] + sigma * rng.standard_normal((n, d))
        labels = np.zeros((n, clusters), dtype=np.uint8)
        labels[np.arange(n), assign] = 1
        return FeatureSet(features=X, labels=labels)

    return draw(train_n), draw(query_n)
