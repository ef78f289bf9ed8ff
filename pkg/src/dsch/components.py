"""Two-level semantic component structure over code representations.

The fine level is a full-covariance Gaussian mixture fitted to the
relaxed codes; the coarse level clusters the fine means with k-means and
inherits sample assignments through the fine level by summing fine
responsibilities per coarse member set.  Responsibilities are always
computed in log space with max subtraction; densities are never
exponentiated before normalization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import seeds
from .errors import ContractError
from .ndmath import as_tensor, mvn_logpdf_rows

GMM_MAX_ITER = 100
GMM_REL_TOL = 1e-6
KMEANS_MAX_ITER = 300
# A component owning less than this fraction of one sample's worth of
# responsibility is considered collapsed and gets re-seeded.
DEAD_COMPONENT_FRACTION = 1e-8


@dataclass
class FineLevel:
    """Gaussian mixture over codes: priors, means, full covariances."""

    priors: np.ndarray  # (m1,)
    means: np.ndarray  # (m1, r)
    covariances: np.ndarray  # (m1, r, r)
    loglik_history: list[float] = field(default_factory=list, repr=False)
    repaired_iterations: list[int] = field(default_factory=list, repr=False)

    @property
    def count(self) -> int:
        return self.means.shape[0]


@dataclass
class CoarseLevel:
    """k-means over fine means; uniform priors by construction."""

    priors: np.ndarray  # (m2,), all 1/m2
    means: np.ndarray  # (m2, r)
    membership: np.ndarray  # (m1,) ints in [0, m2)
    iterations: int = field(default=0, repr=False)

    @property
    def count(self) -> int:
        return self.means.shape[0]


@dataclass
class StructureStats:
    """Work and allocation counters for one structure build."""

    n: int
    fine_count: int
    coarse_count: int
    code_len: int
    gmm_iterations: int
    kmeans_iterations: int
    gmm_loglik: float
    density_evaluations: int
    assignment_bytes: int
    covariance_bytes: int
    seconds_gmm: float
    seconds_kmeans: float
    seconds_total: float


@dataclass
class ComponentStructure:
    fine: FineLevel
    coarse: CoarseLevel
    fine_assignments: np.ndarray  # (n, m1), rows sum to 1
    coarse_assignments: np.ndarray  # (n, m2), rows sum to 1
    stats: Optional[StructureStats] = None


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.flags.writeable = False


# ---------------------------------------------------------------------------
# k-means++ seeding (shared by the mixture init and the coarse clustering)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of k seed points chosen by squared-distance weighting."""
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"kmeans_plusplus: need 1 <= k <= n, got k={k}, n={n}")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = int(rng.integers(n))
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining points duplicate a chosen seed; take the lowest
            # unchosen index for determinism.
            mask = np.ones(n, dtype=bool)
            mask[chosen[:j]] = False
            idx = int(np.flatnonzero(mask)[0])
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen[j] = idx
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return chosen


# ---------------------------------------------------------------------------
# fine level: full-covariance Gaussian mixture


def _log_joint(H: np.ndarray, priors: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """log(pi_j) + log N(h_i | mu_j, Sigma_j) for all samples and components."""
    n, m = H.shape[0], means.shape[0]
    out = np.empty((n, m))
    with np.errstate(divide="ignore"):
        log_pi = np.log(priors)
    for j in range(m):
        out[:, j] = log_pi[j] + mvn_logpdf_rows(H, means[j], covs[j])
    return out


def fit_gmm(
    H: np.ndarray,
    m1: int,
    seed: int,
    max_iter: int = GMM_MAX_ITER,
    rel_tol: float = GMM_REL_TOL,
    diag_covariance: bool = False,
    init: Optional[FineLevel] = None,
) -> FineLevel:
    """EM fit of an m1-component mixture to the rows of ``H``.

    Means are seeded with k-means++, covariances start at the global data
    covariance, priors uniform.  Components whose total responsibility
    drops below DEAD_COMPONENT_FRACTION * n are re-seeded at the sample
    the current mixture explains worst (one repair pass per iteration);
    the log-likelihood is non-decreasing between repair-free iterations.

    ``diag_covariance`` keeps only the diagonal of each covariance update,
    a cheaper fallback for long codes.  ``init`` warm-starts from an
    existing fit instead of re-seeding.
    """
    H = as_tensor(H)
    n, r = H.shape
    if not 1 <= m1 <= n:
        raise ContractError(f"fit_gmm: need 1 <= m1 <= n, got m1={m1}, n={n}")

    global_cov = np.cov(H, rowvar=False, bias=True).reshape(r, r)
    if diag_covariance:
        global_cov = np.diag(np.diag(global_cov))

    if init is not None:
        if init.count != m1:
            raise ContractError(f"fit_gmm: warm start has {init.count} components, expected {m1}")
        priors = init.priors.copy()
        means = init.means.copy()
        covs = init.covariances.copy()
    else:
        rng = seeds.stream(seed, seeds.GMM)
        means = H[kmeans_plusplus(H, m1, rng)].copy()
        priors = np.full(m1, 1.0 / m1)
        covs = np.broadcast_to(global_cov, (m1, r, r)).copy()

    history: list[float] = []
    repaired: list[int] = []
    prev_ll = -np.inf
    for it in range(max_iter):
        # E: responsibilities in log space.
        lj = _log_joint(H, priors, means, covs)
        row_lse = logsumexp(lj, axis=1)
        ll = float(row_lse.sum())
        history.append(ll)
        if abs(ll - prev_ll) < rel_tol * max(1.0, abs(ll)):
            break
        prev_ll = ll
        resp = np.exp(lj - row_lse[:, None])

        # M: update parameters from responsibilities.
        weight = resp.sum(axis=0)
        dead = np.flatnonzero(weight < DEAD_COMPONENT_FRACTION * n)
        live = weight > 0
        priors = weight / n
        for j in range(m1):
            if not live[j]:
                continue
            w = resp[:, j]
            mu = (w @ H) / weight[j]
            diff = H - mu
            cov = (diff * w[:, None]).T @ diff / weight[j]
            cov = 0.5 * (cov + cov.T)
            if diag_covariance:
                cov = np.diag(np.diag(cov))
            means[j] = mu
            covs[j] = cov

        if dead.size:
            # Repair pass: re-seed each collapsed component at the sample
            # the mixture currently fits worst.
            repaired.append(it)
            fit_quality = row_lse.copy()
            for j in dead:
                worst = int(np.argmin(fit_quality))
                means[j] = H[worst]
                covs[j] = global_cov
                priors[j] = 1.0 / m1
                fit_quality[worst] = np.inf
            priors = priors / priors.sum()

    return FineLevel(
        priors=priors,
        means=means,
        covariances=covs,
        loglik_history=history,
        repaired_iterations=repaired,
    )


def fine_assignments(H: np.ndarray, fine: FineLevel) -> np.ndarray:
    """Posterior responsibility of each fine component for each code row."""
    H = as_tensor(H)
    lj = _log_joint(H, fine.priors, fine.means, fine.covariances)
    return np.exp(lj - logsumexp(lj, axis=1)[:, None])


# ---------------------------------------------------------------------------
# coarse level: k-means over fine means


def fit_coarse(fine: FineLevel, m2: int, seed: int, max_iter: int = KMEANS_MAX_ITER) -> CoarseLevel:
    """Cluster the fine means into m2 groups; coarse means are the
    unweighted averages of their member fine means, priors uniform."""
    X = fine.means
    m1 = X.shape[0]
    if not 1 <= m2 <= m1:
        raise ContractError(f"fit_coarse: need 1 <= m2 <= m1, got m2={m2}, m1={m1}")
    rng = seeds.stream(seed, seeds.KMEANS)
    centers = X[kmeans_plusplus(X, m2, rng)].copy()

    assign = np.full(m1, -1, dtype=np.int64)
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)  # ties: lowest center index
        counts = np.bincount(new_assign, minlength=m2)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # One repair pass: hand each empty cluster the point that is
            # currently farthest from its own centroid.
            fit_d2 = d2[np.arange(m1), new_assign].copy()
            for k in empty:
                worst = int(np.argmax(fit_d2))
                centers[k] = X[worst]
                new_assign[worst] = k
                fit_d2[worst] = -np.inf
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for k in range(m2):
            members = assign == k
            centers[k] = X[members].mean(axis=0)

    # Coarse representation: plain average over member fine means.
    means = np.empty((m2, X.shape[1]))
    for k in range(m2):
        means[k] = X[assign == k].mean(axis=0)
    return CoarseLevel(priors=np.full(m2, 1.0 / m2), means=means, membership=assign, iterations=iterations)


def membership_matrix(membership: np.ndarray, m2: int) -> np.ndarray:
    """0/1 indicator M with M[j, k] = 1 iff fine j belongs to coarse k."""
    m1 = membership.shape[0]
    M = np.zeros((m1, m2))
    M[np.arange(m1), membership] = 1.0
    return M


def coarse_assignments(P1: np.ndarray, coarse: CoarseLevel) -> np.ndarray:
    """Chain the fine responsibilities through the coarse membership.

    Equivalent to P1 @ M for the 0/1 membership indicator M; columns are
    accumulated in ascending fine index so the result is bit-identical to
    that product evaluated in the same order.
    """
    P1 = as_tensor(P1)
    membership = coarse.membership
    if P1.shape[1] != membership.shape[0]:
        raise ContractError(
            f"coarse_assignments: {P1.shape[1]} fine columns vs membership of length {membership.shape[0]}"
        )
    P2 = np.zeros((P1.shape[0], coarse.count))
    for j in range(membership.shape[0]):
        P2[:, membership[j]] += P1[:, j]
    return P2


# ---------------------------------------------------------------------------
# full structure


def build_structure(
    H: np.ndarray,
    m1: int,
    m2: int,
    seed: int,
    diag_covariance: bool = False,
    gmm_init: Optional[FineLevel] = None,
) -> ComponentStructure:
    """Fine mixture, coarse clustering and both assignment matrices.

    Records wall-clock and work counters; total work is linear in the
    number of samples for fixed (m1, m2, r).
    """
    H = as_tensor(H)
    n = H.shape[0]
    if not (n >= m1 >= m2 >= 1):
        raise ContractError(f"build_structure: need n >= m1 >= m2 >= 1, got n={n}, m1={m1}, m2={m2}")

    t0 = time.perf_counter()
    fine = fit_gmm(H, m1, seed, diag_covariance=diag_covariance, init=gmm_init)
    P1 = fine_assignments(H, fine)
    t1 = time.perf_counter()
    coarse = fit_coarse(fine, m2, seed)
    P2 = coarse_assignments(P1, coarse)
    t2 = time.perf_counter()

    gmm_iters = len(fine.loglik_history)
    stats = StructureStats(
        n=n,
        fine_count=m1,
        coarse_count=m2,
        code_len=H.shape[1],
        gmm_iterations=gmm_iters,
        kmeans_iterations=coarse.iterations,
        gmm_loglik=fine.loglik_history[-1] if fine.loglik_history else float("nan"),
        density_evaluations=n * m1 * (gmm_iters + 1),
        assignment_bytes=P1.nbytes + P2.nbytes,
        covariance_bytes=fine.covariances.nbytes,
        seconds_gmm=t1 - t0,
        seconds_kmeans=t2 - t1,
        seconds_total=t2 - t0,
    )
    _freeze(fine.priors, fine.means, fine.covariances, coarse.priors, coarse.means, coarse.membership, P1, P2)
    return ComponentStructure(fine=fine, coarse=coarse, fine_assignments=P1, coarse_assignments=P2, stats=stats)
