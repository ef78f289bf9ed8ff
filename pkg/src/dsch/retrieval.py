"""Hamming-ranking evaluation of packed binary codes.

Rankings sort the database by Hamming distance with ties broken by
ascending database index; relevance between multi-hot label rows means
sharing at least one label.  Average precision at cutoff K divides by
the number of relevant items actually retrieved within K.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import BinaryCodes
from .errors import ContractError

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

_QUERY_CHUNK = 512


def hamming_distance(b1: np.ndarray, b2: np.ndarray, r: int) -> int:
    """Number of disagreeing bits between two packed code rows.

    Equals (r - <s1, s2>)/2 for the underlying sign vectors; computed by
    popcount over the XOR of the packed bytes (pad bits are zero in both).
    """
    b1 = np.asarray(b1, dtype=np.uint8).ravel()
    b2 = np.asarray(b2, dtype=np.uint8).ravel()
    if b1.shape != b2.shape:
        raise ContractError(f"hamming_distance: packed lengths differ ({b1.shape[0]} vs {b2.shape[0]} bytes)")
    return int(_POPCOUNT[np.bitwise_xor(b1, b2)].sum())


def hamming_matrix(queries: BinaryCodes, database: BinaryCodes) -> np.ndarray:
    """(n_queries, n_database) matrix of Hamming distances."""
    if queries.code_len != database.code_len:
        raise ContractError(
            f"code lengths differ: queries {queries.code_len}, database {database.code_len}"
        )
    Q, D = queries.packed, database.packed
    out = np.empty((Q.shape[0], D.shape[0]), dtype=np.int32)
    for start in range(0, Q.shape[0], _QUERY_CHUNK):
        block = Q[start : start + _QUERY_CHUNK]
        xor = np.bitwise_xor(block[:, None, :], D[None, :, :])
        out[start : start + block.shape[0]] = _POPCOUNT[xor].sum(axis=2, dtype=np.int32)
    return out


def relevance(q: np.ndarray, d: np.ndarray) -> int:
    """1 iff the two multi-hot label rows share a positive class."""
    q = np.asarray(q).ravel()
    d = np.asarray(d).ravel()
    if q.shape != d.shape:
        raise ContractError(f"relevance: class counts differ ({q.shape[0]} vs {d.shape[0]})")
    return int(bool((q & d).any()))


def relevance_matrix(query_labels: np.ndarray, db_labels: np.ndarray) -> np.ndarray:
    ql = np.atleast_2d(np.asarray(query_labels, dtype=np.int64))
    dl = np.atleast_2d(np.asarray(db_labels, dtype=np.int64))
    if ql.shape[1] != dl.shape[1]:
        raise ContractError(f"relevance: class counts differ ({ql.shape[1]} vs {dl.shape[1]})")
    return (ql @ dl.T) > 0


def _ranking_inputs(query_codes, query_labels, db_codes, db_labels, exclude_self):
    if db_codes.count == 0:
        raise ContractError("empty database")
    dist = hamming_matrix(query_codes, db_codes)
    rel = relevance_matrix(query_labels, db_labels)
    if exclude_self:
        if query_codes.count != db_codes.count:
            raise ContractError("self-exclusion requires query and database sets of equal size")
        diag = np.arange(query_codes.count)
        dist = dist.copy()
        rel = rel.copy()
        dist[diag, diag] = query_codes.code_len + 1  # ranks last, never within any radius
        rel[diag, diag] = False
    return dist, rel


def map_at_k(
    query_codes: BinaryCodes,
    query_labels: np.ndarray,
    db_codes: BinaryCodes,
    db_labels: np.ndarray,
    k: int,
    exclude_self: bool = False,
) -> float:
    """Mean average precision over the top-k Hamming ranking."""
    if k < 1:
        raise ContractError(f"map_at_k: k must be >= 1, got {k}")
    dist, rel = _ranking_inputs(query_codes, query_labels, db_codes, db_labels, exclude_self)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    rel_sorted = np.take_along_axis(rel, order, axis=1)
    ranks = np.arange(1, rel_sorted.shape[1] + 1)
    cum = np.cumsum(rel_sorted, axis=1)
    ap_sum = (np.where(rel_sorted, cum / ranks, 0.0)).sum(axis=1)
    n_rel = rel_sorted.sum(axis=1)
    ap = np.where(n_rel > 0, ap_sum / np.maximum(n_rel, 1), 0.0)
    return float(ap.mean())


def precision_at_k(
    query_codes: BinaryCodes,
    query_labels: np.ndarray,
    db_codes: BinaryCodes,
    db_labels: np.ndarray,
    ks: list[int],
    exclude_self: bool = False,
) -> list[tuple[int, float]]:
    """Mean fraction of relevant items among the top-k, for each k."""
    dist, rel = _ranking_inputs(query_codes, query_labels, db_codes, db_labels, exclude_self)
    kmax = max(ks)
    order = np.argsort(dist, axis=1, kind="stable")[:, :kmax]
    rel_sorted = np.take_along_axis(rel, order, axis=1)
    cum = np.cumsum(rel_sorted, axis=1)
    out = []
    for k in ks:
        if not 1 <= k <= rel_sorted.shape[1]:
            raise ContractError(f"precision_at_k: k={k} outside [1, {rel_sorted.shape[1]}]")
        out.append((k, float((cum[:, k - 1] / k).mean())))
    return out


def pr_curve(
    query_codes: BinaryCodes,
    query_labels: np.ndarray,
    db_codes: BinaryCodes,
    db_labels: np.ndarray,
    exclude_self: bool = False,
) -> list[tuple[float, float]]:
    """Micro-averaged (recall, precision) at every Hamming radius 0..r.

    At a radius retrieving nothing the precision is 1.0 by convention, so
    curves stay plottable from recall 0.
    """
    dist, rel = _ranking_inputs(query_codes, query_labels, db_codes, db_labels, exclude_self)
    total_rel = int(rel.sum())
    if total_rel == 0:
        raise ContractError("pr_curve: no relevant pairs between query and database labels")
    r = query_codes.code_len
    # Histogram distances once; cumulative sums give every radius sweep.
    all_hist = np.bincount(dist.ravel(), minlength=r + 2)[: r + 1]
    rel_hist = np.bincount(dist[rel], minlength=r + 2)[: r + 1]
    retrieved = np.cumsum(all_hist)
    true_pos = np.cumsum(rel_hist)
    curve = []
    for radius in range(r + 1):
        tp = int(true_pos[radius])
        ret = int(retrieved[radius])
        precision = tp / ret if ret > 0 else 1.0
        curve.append((tp / total_rel, precision))
    return curve


@dataclass
class RetrievalReport:
    """Hamming-ranking quality of one query set against one database."""

    map_at_k: float
    k: int
    precision_at_k: list[tuple[int, float]]
    pr_curve: list[tuple[float, float]]
    query_count: int
    database_count: int

    def to_dict(self) -> dict:
        return {
            "map_at_k": self.map_at_k,
            "k": self.k,
            "precision_at_k": [[k, p] for k, p in self.precision_at_k],
            "pr_curve": [[rec, prec] for rec, prec in self.pr_curve],
            "query_count": self.query_count,
            "database_count": self.database_count,
        }


_DEFAULT_PRECISION_KS = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000)


def default_precision_ks(k: int, db_count: int) -> list[int]:
    cap = min(k, db_count)
    ks = [v for v in _DEFAULT_PRECISION_KS if v <= cap]
    if not ks:
        ks = [cap]
    return ks


def evaluate(
    query_codes: BinaryCodes,
    query_labels: np.ndarray,
    db_codes: BinaryCodes,
    db_labels: np.ndarray,
    k: int,
    precision_ks: list[int] | None = None,
    exclude_self: bool = False,
) -> RetrievalReport:
    """Full report: MAP@k, precision at sampled cutoffs, PR curve."""
    ks = precision_ks or default_precision_ks(k, db_codes.count)
    return RetrievalReport(
        map_at_k=map_at_k(query_codes, query_labels, db_codes, db_labels, k, exclude_self),
        k=k,
        precision_at_k=precision_at_k(query_codes, query_labels, db_codes, db_labels, ks, exclude_self),
        pr_curve=pr_curve(query_codes, query_labels, db_codes, db_labels, exclude_self),
        query_count=query_codes.count,
        database_count=db_codes.count,
    )
