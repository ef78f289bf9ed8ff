"""Dense numeric kernels and reverse-mode gradients.

Everything trains in double precision; all operations are pure functions
of their inputs and safe to run concurrently on distinct tapes.
"""

from .fdcheck import finite_diff_check
from .gaussian import cholesky_with_ridge, mvn_logpdf, mvn_logpdf_rows
from .tape import (
    Gradients,
    Tape,
    Tensor,
    Var,
    add,
    as_tensor,
    backward,
    concat_rows,
    cosine_sim,
    gram,
    logsumexp_all,
    logsumexp_rows,
    matmul,
    mean_all,
    mul,
    narrow,
    neg,
    normalize_rows,
    relu,
    reshape,
    scale,
    sub,
    sum_all,
    tanh,
    transpose,
    weighted_sum,
)

__all__ = [
    "Gradients",
    "Tape",
    "Tensor",
    "Var",
    "add",
    "as_tensor",
    "backward",
    "cholesky_with_ridge",
    "concat_rows",
    "cosine_sim",
    "finite_diff_check",
    "gram",
    "logsumexp_all",
    "logsumexp_rows",
    "matmul",
    "mean_all",
    "mul",
    "mvn_logpdf",
    "mvn_logpdf_rows",
    "narrow",
    "neg",
    "normalize_rows",
    "relu",
    "reshape",
    "scale",
    "sub",
    "sum_all",
    "tanh",
    "transpose",
    "weighted_sum",
]
