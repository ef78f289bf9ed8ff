"""Contrastive and component-alignment objectives over relaxed codes.

All losses accept either taped code views (for training) or plain arrays
(for finite-difference verification).  Pair weights derive from the
cosine similarity of fine-level assignment vectors over the full data
set; within a mini-batch the weights are renormalized over the batch
pairs so the quadruple view sum keeps its global normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .components import ComponentStructure
from .errors import ContractError, DegenerateInputError
from .ndmath import (
    add,
    as_tensor,
    concat_rows,
    gram,
    logsumexp_all,
    logsumexp_rows,
    matmul,
    normalize_rows,
    scale,
    sub,
    sum_all,
    weighted_sum,
)


@dataclass
class PairWeights:
    """Assignment-cosine similarities and their normalized pair weights.

    ``similarity`` is symmetric with unit diagonal; ``weights`` is
    similarity / (4 * total similarity), so all weights sum to 1/4.
    """

    similarity: np.ndarray  # (n, n) in [0, 1]
    weights: np.ndarray  # (n, n)


@dataclass
class ComponentWeights:
    """Per-sample component weights: prior times posterior responsibility."""

    fine: np.ndarray  # (n, m1)
    coarse: np.ndarray  # (n, m2)


@dataclass
class AugmentedBatch:
    """Two augmented views of the same source rows plus their code views."""

    indices: np.ndarray
    view_a: np.ndarray
    view_b: np.ndarray
    codes_a: object  # (nb, r) Var or ndarray
    codes_b: object

    @property
    def size(self) -> int:
        return len(self.indices)


def pair_similarity(P1: np.ndarray) -> PairWeights:
    """Cosine similarity between assignment rows, normalized to weights."""
    P1 = as_tensor(P1)
    if np.any(P1 < 0.0):
        raise ContractError("pair_similarity: assignment entries must be nonnegative")
    norms = np.linalg.norm(P1, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"pair_similarity: zero assignment row {int(np.argmin(norms))}")
    Pn = P1 / norms
    S = Pn @ Pn.T
    S = 0.5 * (S + S.T)
    np.clip(S, 0.0, 1.0, out=S)
    np.fill_diagonal(S, 1.0)
    return PairWeights(similarity=S, weights=S / (4.0 * S.sum()))


def component_weights(structure: ComponentStructure, indices: np.ndarray) -> ComponentWeights:
    """beta weights (prior * responsibility) for the given sample rows."""
    idx = np.asarray(indices)
    return ComponentWeights(
        fine=structure.fine_assignments[idx] * structure.fine.priors[None, :],
        coarse=structure.coarse_assignments[idx] * structure.coarse.priors[None, :],
    )


def discretized_centers(means: np.ndarray) -> np.ndarray:
    """Sign-quantized component centers; sign(0) -> -1."""
    return np.where(as_tensor(means) > 0.0, 1.0, -1.0)


def _stacked_unit_codes(batch: AugmentedBatch):
    """Row-normalized stack of both code views, view a first."""
    return normalize_rows(concat_rows(batch.codes_a, batch.codes_b))


def loss_baseline(batch: AugmentedBatch, tau: float):
    """Per-anchor InfoNCE over the two views.

    For each anchor code the positive is the other view of the same
    sample; the denominator adds every other-view and cross-sample term
    (the anchor itself excluded).  Averaged with 1/n over samples, both
    views summed.
    """
    nb = batch.size
    if nb < 2:
        raise ContractError("loss_baseline: batch must contain at least 2 samples")
    logits = scale(gram(_stacked_unit_codes(batch)), 1.0 / tau)
    lse = logsumexp_rows(logits, exclude_diag=True)
    pos = np.zeros((2 * nb, 2 * nb))
    rows = np.arange(nb)
    pos[rows, rows + nb] = 1.0
    pos[rows + nb, rows] = 1.0
    return scale(sub(sum_all(lse), weighted_sum(pos, logits)), 1.0 / nb)


def _batch_alpha(weights: PairWeights, indices: np.ndarray) -> np.ndarray:
    Sb = weights.similarity[np.ix_(indices, indices)]
    return Sb / (4.0 * Sb.sum())


def _instance_from(unit_codes, alpha: np.ndarray, tau: float):
    C = gram(unit_codes)
    log_denom = logsumexp_all(scale(C, 1.0 / tau))
    positive = scale(weighted_sum(np.tile(alpha, (2, 2)), C), 1.0 / tau)
    return sub(scale(log_denom, 4.0 * float(alpha.sum())), positive)


def loss_instance(batch: AugmentedBatch, weights: PairWeights, tau: float):
    """Pair-weighted contrastive loss across views and samples.

    Every ordered view pair (aa, ab, ba, bb) of every sample pair (i, j)
    contributes -alpha_ij * log softmax of its cosine logit against one
    shared denominator that sums over all 4*nb^2 view/sample combinations,
    self pairs included.
    """
    if batch.size < 1:
        raise ContractError("loss_instance: empty batch")
    alpha = _batch_alpha(weights, batch.indices)
    return _instance_from(_stacked_unit_codes(batch), alpha, tau)


def _component_from(unit_codes, structure, indices, tau: float, levels: Sequence[int]):
    beta = component_weights(structure, indices)
    per_level = {1: (beta.fine, structure.fine.means), 2: (beta.coarse, structure.coarse.means)}
    total = None
    for level in levels:
        if level not in per_level:
            raise ContractError(f"loss_component: unknown level {level}")
        b, means = per_level[level]
        centers = discretized_centers(means)
        # Rows of sign(mu) all have norm sqrt(r), so unit centers are a
        # constant rescale and the matmul below yields plain cosines.
        centers_unit_t = centers.T / np.sqrt(centers.shape[1])
        beta_both = np.concatenate([b, b], axis=0)  # view a rows, then view b
        logits = scale(matmul(unit_codes, centers_unit_t), 1.0 / tau)
        lse = logsumexp_rows(logits)
        term = sub(weighted_sum(beta_both.sum(axis=1), lse), weighted_sum(beta_both, logits))
        total = term if total is None else add(total, term)
    if total is None:
        raise ContractError("loss_component: no levels requested")
    return total


def loss_component(
    batch: AugmentedBatch,
    structure: ComponentStructure,
    tau: float,
    levels: Sequence[int] = (1, 2),
):
    """Pull each code view toward its discretized component centers.

    For each hierarchy level the center directions sign(mu) are fixed
    constants; the beta weight of sample i and component j multiplies the
    negative log softmax (over components) of cos(h_i, sign(mu_j))/tau.
    Both views contribute.
    """
    return _component_from(_stacked_unit_codes(batch), structure, batch.indices, tau, levels)


def total_loss(
    batch: AugmentedBatch,
    weights: PairWeights,
    structure: ComponentStructure,
    tau: float,
    lam: float,
    levels: Sequence[int] = (1, 2),
):
    """Instance loss plus lam times the component loss.

    The normalized code stack is shared between both parts, so the tape
    stays small and plain evaluations stay cheap.
    """
    if batch.size < 1:
        raise ContractError("total_loss: empty batch")
    unit_codes = _stacked_unit_codes(batch)
    alpha = _batch_alpha(weights, batch.indices)
    instance = _instance_from(unit_codes, alpha, tau)
    if lam == 0.0:
        return instance
    component = _component_from(unit_codes, structure, batch.indices, tau, levels)
    return add(instance, scale(component, lam))
