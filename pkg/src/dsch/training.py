"""EM-style training loop: structure construction alternating with
mini-batch gradient steps on the hash encoder.

Each epoch first encodes the full (unaugmented) training set and rebuilds
the two-level component structure from those codes, then runs one pass of
shuffled mini-batches minimizing the selected objective with Adam.  The
structure and the pair weights stay frozen for the whole epoch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import retrieval, seeds
from .components import ComponentStructure, build_structure
from .data import FeatureSet
from .encoder import BinaryCodes, HashModel, encode_binary, encode_relaxed, fit_standardizer, init_model
from .errors import ContractError, TrainingDivergedError
from .losses import AugmentedBatch, PairWeights, loss_baseline, loss_component, loss_instance, pair_similarity
from .ndmath import Tape, add, backward, narrow, scale

LOSS_DIVERGENCE_BOUND = 1e6

VARIANT_BASE = "base"
VARIANT_IC = "base+ic"
VARIANT_IC_CCF = "base+ic+ccf"
VARIANT_FULL = "full"
VARIANTS = (VARIANT_BASE, VARIANT_IC, VARIANT_IC_CCF, VARIANT_FULL)
# Hierarchy levels the component loss uses, per variant.
_VARIANT_LEVELS = {VARIANT_IC_CCF: (1,), VARIANT_FULL: (1, 2)}


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    code_len: int = 16
    fine_components: int = 12
    coarse_components: int = 4
    temperature: float = 1.0
    component_weight: float = 0.1
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 5e-4
    seed: int = 0
    noise_scale: float = 0.1
    mask_rate: float = 0.1
    gmm_warm_start: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ContractError(f"batch size must be >= 2, got {self.batch_size}")
        if not self.fine_components >= self.coarse_components >= 1:
            raise ContractError(
                f"need fine >= coarse >= 1 components, got {self.fine_components}, {self.coarse_components}"
            )
        if self.temperature <= 0.0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if self.learning_rate <= 0.0:
            raise ContractError(f"learning rate must be positive, got {self.learning_rate}")
        if self.code_len < 1:
            raise ContractError(f"code length must be >= 1, got {self.code_len}")
        if self.noise_scale < 0.0 or not 0.0 <= self.mask_rate < 1.0:
            raise ContractError(
                f"bad augmentation parameters: noise_scale={self.noise_scale}, mask_rate={self.mask_rate}"
            )


@dataclass
class AdamState:
    """First/second moment accumulators with the usual defaults."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: HashModel) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in model.params()],
            v=[np.zeros_like(p) for p in model.params()],
        )


def adam_step(model: HashModel, grads: list[np.ndarray], opt: AdamState, eta: float):
    """One bias-corrected Adam update, in declaration order of parameters."""
    params = model.params()
    if len(grads) != len(params):
        raise ContractError(f"adam_step: {len(grads)} gradients for {len(params)} parameters")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise ContractError(f"adam_step: gradient shape {g.shape} does not match parameter shape {p.shape}")
    opt.step += 1
    t = opt.step
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= eta * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return model, opt


def augment(
    X: np.ndarray,
    seed: Union[int, np.random.Generator],
    noise_scale: float,
    mask_rate: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Two independent views: additive Gaussian noise, then entry dropout."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def view() -> np.ndarray:
        noisy = X + noise_scale * rng.standard_normal(X.shape)
        mask = rng.random(X.shape) >= mask_rate
        return noisy * mask

    return view(), view()


@dataclass
class TrainResult:
    model: HashModel
    log: list[dict] = field(repr=False)
    codes: BinaryCodes = field(repr=False)


def _epoch_structure_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _batch_loss(variant, batch, weights, structure, cfg):
    """Returns (taped total, instance part value, component part value)."""
    if variant == VARIANT_BASE:
        main = loss_baseline(batch, cfg.temperature)
        return main, float(main.value), 0.0
    main = loss_instance(batch, weights, cfg.temperature)
    levels = _VARIANT_LEVELS.get(variant)
    if levels is None or cfg.component_weight == 0.0:
        return main, float(main.value), 0.0
    comp = loss_component(batch, structure, cfg.temperature, levels)
    total = add(main, scale(comp, cfg.component_weight))
    return total, float(main.value), float(comp.value)


def run_em(features: FeatureSet, cfg: TrainConfig, variant: str = VARIANT_FULL) -> TrainResult:
    """Alternate structure construction and encoder optimization.

    The per-epoch log records both loss parts, the mixture log-likelihood
    and wall-clock seconds of both phases.  Raises TrainingDivergedError
    (with the offending batch attached) if the loss leaves [0, 1e6] or
    becomes non-finite.
    """
    variant = variant.lower()
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    X = features.features
    n = X.shape[0]
    if n < cfg.fine_components:
        raise ContractError(f"need at least {cfg.fine_components} samples, got {n}")

    model = init_model(X.shape[1], cfg.code_len, cfg.seed)
    fit_standardizer(model, X)
    opt = AdamState.for_model(model)

    log: list[dict] = []
    structure: Optional[ComponentStructure] = None
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        H = encode_relaxed(model, X)
        structure = build_structure(
            H,
            cfg.fine_components,
            cfg.coarse_components,
            _epoch_structure_seed(cfg.seed, epoch),
            gmm_init=structure.fine if (cfg.gmm_warm_start and structure is not None) else None,
        )
        weights: PairWeights = pair_similarity(structure.fine_assignments)
        t1 = time.perf_counter()

        perm = seeds.stream(cfg.seed, seeds.SHUFFLE, epoch).permutation(n)
        sum_total = sum_main = sum_comp = 0.0
        batches = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            if idx.size < 2:
                continue  # a 1-sample remainder cannot form contrastive pairs
            xa, xb = augment(
                X[idx],
                seeds.stream(cfg.seed, seeds.AUGMENT, epoch, b),
                cfg.noise_scale,
                cfg.mask_rate,
            )
            tape = Tape()
            h = encode_relaxed(model, np.vstack([xa, xb]), tape)
            batch = AugmentedBatch(
                indices=idx,
                view_a=xa,
                view_b=xb,
                codes_a=narrow(h, 0, idx.size),
                codes_b=narrow(h, idx.size, 2 * idx.size),
            )
            total, main_val, comp_val = _batch_loss(variant, batch, weights, structure, cfg)
            total_val = float(total.value)
            if not np.isfinite(total_val) or total_val > LOSS_DIVERGENCE_BOUND:
                raise TrainingDivergedError(
                    f"loss {total_val} at epoch {epoch}, batch {b}",
                    epoch=epoch,
                    batch_indices=idx.tolist(),
                    loss=total_val,
                )
            grads = backward(tape, total).for_leaves()
            adam_step(model, grads, opt, cfg.learning_rate)
            sum_total += total_val
            sum_main += main_val
            sum_comp += comp_val
            batches += 1
        t2 = time.perf_counter()

        log.append(
            {
                "epoch": epoch,
                "loss_total": sum_total / batches,
                "loss_L1": sum_main / batches,
                "loss_L2": sum_comp / batches,
                "gmm_loglik": structure.stats.gmm_loglik,
                "estep_seconds": t1 - t0,
                "mstep_seconds": t2 - t1,
            }
        )

    return TrainResult(model=model, log=log, codes=encode_binary(model, X))


def ablation_run(
    features: FeatureSet,
    cfg: TrainConfig,
    variant: str,
    queries: Optional[FeatureSet] = None,
    k: int = 50,
) -> retrieval.RetrievalReport:
    """Train one variant and evaluate Hamming ranking against the set.

    Without an explicit query set the training set queries itself, with
    each query's own row excluded from its ranking.
    """
    if features.labels is None:
        raise ContractError("ablation_run: training features need labels for evaluation")
    result = run_em(features, cfg, variant)
    if queries is None:
        return retrieval.evaluate(
            result.codes, features.labels, result.codes, features.labels, k=k, exclude_self=True
        )
    if queries.labels is None:
        raise ContractError("ablation_run: query features need labels for evaluation")
    query_codes = encode_binary(result.model, queries.features)
    return retrieval.evaluate(query_codes, queries.labels, result.codes, features.labels, k=k)
