"""Reverse-mode gradient tape over dense float64 arrays.

Every operation here is dual-mode: called on plain numpy arrays it just
computes the value, called on tape variables it also records a node with
the corresponding vector-Jacobian product.  The same code path therefore
serves both gradient evaluation and the (much cheaper) plain evaluations
used by central-difference verification; each op starts with an explicit
untaped fast path because those verifications run the function tens of
thousands of times.  Untaped slicing ops may return views.

A tape is an append-only Wengert list; node ids are topologically ordered
by construction.  The backward sweep visits nodes in reverse id order and
accumulates parent gradients sequentially, so gradient results are
bit-deterministic for a fixed graph.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import ContractError, DegenerateInputError, ShapeError

Tensor = np.ndarray
"""Dense row-major float64 array; the value type carried by every node."""


def as_tensor(x) -> Tensor:
    """Coerce ``x`` to a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


class _Node:
    __slots__ = ("op", "value", "parents", "vjp")

    def __init__(self, op, value, parents, vjp):
        self.op = op
        self.value = value
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of primitive operations.

    Single-writer: recording and backward must not interleave across
    threads.  Distinct tapes are fully independent.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaf_ids: list[int] = []

    def __len__(self):
        return len(self._nodes)

    def leaf(self, value, name="leaf") -> "Var":
        """Register a parameter leaf; gradients are reported per leaf."""
        var = self._push(name, as_tensor(value), (), None)
        self._leaf_ids.append(var.nid)
        return var

    def _push(self, op, value, parents, vjp) -> "Var":
        self._nodes.append(_Node(op, np.asarray(value), parents, vjp))
        return Var(self, len(self._nodes) - 1)


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "nid")

    def __init__(self, tape: Tape, nid: int):
        self.tape = tape
        self.nid = nid

    @property
    def value(self) -> Tensor:
        return self.tape._nodes[self.nid].value

    @property
    def shape(self):
        return self.value.shape

    def __float__(self):
        return float(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(node={self.nid}, op={self.tape._nodes[self.nid].op!r}, shape={self.value.shape})"


def _tape_of(*args) -> Optional[Tape]:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif tape is not a.tape:
                raise ContractError("operands recorded on different tapes")
    return tape


def _val(x) -> Tensor:
    if isinstance(x, Var):
        return x.value
    if type(x) is np.ndarray:
        return x
    return as_tensor(x)


def _pid(x) -> Optional[int]:
    return x.nid if isinstance(x, Var) else None


def _compatible(a_shape, b_shape) -> bool:
    # Same shape, a scalar operand, or a row vector against matrix rows.
    if a_shape == b_shape or a_shape == () or b_shape == ():
        return True
    for mat, vec in ((a_shape, b_shape), (b_shape, a_shape)):
        if len(mat) == 2 and len(vec) == 1 and mat[1] == vec[0]:
            return True
    return False


def _unbroadcast(g: Tensor, shape) -> Tensor:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # (n, k) gradient pulled back to a (k,) row-vector operand
    if len(shape) == 1 and g.ndim == 2 and g.shape[1] == shape[0]:
        return g.sum(axis=0)
    raise ShapeError(f"cannot reduce gradient of shape {g.shape} to operand shape {shape}")


# ---------------------------------------------------------------------------
# primitive operations


def add(a, b):
    av, bv = _val(a), _val(b)
    if not _compatible(av.shape, bv.shape):
        raise ShapeError(f"add: incompatible shapes {av.shape} and {bv.shape}")
    out = av + bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    ash, bsh = av.shape, bv.shape

    def vjp(g):
        return (_unbroadcast(g, ash), _unbroadcast(g, bsh))

    return tape._push("add", out, (_pid(a), _pid(b)), vjp)


def sub(a, b):
    av, bv = _val(a), _val(b)
    if not _compatible(av.shape, bv.shape):
        raise ShapeError(f"sub: incompatible shapes {av.shape} and {bv.shape}")
    out = av - bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    ash, bsh = av.shape, bv.shape

    def vjp(g):
        return (_unbroadcast(g, ash), _unbroadcast(-g, bsh))

    return tape._push("sub", out, (_pid(a), _pid(b)), vjp)


def neg(a):
    av = _val(a)
    out = -av
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape._push("neg", out, (_pid(a),), lambda g: (-g,))


def mul(a, b):
    """Elementwise product; either operand may be a scalar."""
    av, bv = _val(a), _val(b)
    if not _compatible(av.shape, bv.shape):
        raise ShapeError(f"mul: incompatible shapes {av.shape} and {bv.shape}")
    out = av * bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    ash, bsh = av.shape, bv.shape

    def vjp(g):
        return (_unbroadcast(g * bv, ash), _unbroadcast(g * av, bsh))

    return tape._push("mul", out, (_pid(a), _pid(b)), vjp)


def scale(a, c: float):
    """Multiply by a plain (non-differentiated) scalar constant."""
    c = float(c)
    if not isinstance(a, Var):
        return _val(a) * c
    return a.tape._push("scale", a.value * c, (a.nid,), lambda g: (g * c,))


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul: expects matrices, got shapes {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for shapes {av.shape} and {bv.shape}")
    out = av @ bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    need_a, need_b = isinstance(a, Var), isinstance(b, Var)

    def vjp(g):
        return (
            g @ bv.T if need_a else None,
            av.T @ g if need_b else None,
        )

    return tape._push("matmul", out, (_pid(a), _pid(b)), vjp)


def gram(a):
    """a @ a.T in a single node."""
    av = _val(a)
    if av.ndim != 2:
        raise ShapeError(f"gram: expects a matrix, got shape {av.shape}")
    out = av @ av.T
    if not isinstance(a, Var):
        return out

    def vjp(g):
        return ((g + g.T) @ av,)

    return a.tape._push("gram", out, (a.nid,), vjp)


def transpose(a):
    av = _val(a)
    if not isinstance(a, Var):
        return av.T
    return a.tape._push("transpose", av.T.copy(), (a.nid,), lambda g: (g.T,))


def reshape(a, shape):
    av = _val(a)
    out = av.reshape(shape)
    if not isinstance(a, Var):
        return out
    orig = av.shape
    return a.tape._push("reshape", out, (a.nid,), lambda g: (g.reshape(orig),))


def narrow(a, start: int, stop: int):
    """Slice rows [start, stop) along axis 0."""
    av = _val(a)
    if not (0 <= start <= stop <= av.shape[0]):
        raise ContractError(f"narrow: range [{start}, {stop}) outside axis of length {av.shape[0]}")
    if not isinstance(a, Var):
        return av[start:stop]
    full = av.shape

    def vjp(g):
        ga = np.zeros(full)
        ga[start:stop] = g
        return (ga,)

    return a.tape._push("narrow", av[start:stop].copy(), (a.nid,), vjp)


def concat_rows(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[1]:
        raise ShapeError(f"concat_rows: incompatible shapes {av.shape} and {bv.shape}")
    out = np.concatenate([av, bv], axis=0)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    na = av.shape[0]

    def vjp(g):
        return (g[:na], g[na:])

    return tape._push("concat_rows", out, (_pid(a), _pid(b)), vjp)


def relu(a):
    av = _val(a)
    out = np.maximum(av, 0.0)
    if not isinstance(a, Var):
        return out
    mask = av > 0.0

    def vjp(g):
        return (g * mask,)

    return a.tape._push("relu", out, (a.nid,), vjp)


def tanh(a):
    av = _val(a)
    out = np.tanh(av)
    if not isinstance(a, Var):
        return out

    def vjp(g):
        return (g * (1.0 - out * out),)

    return a.tape._push("tanh", out, (a.nid,), vjp)


def sum_all(a):
    av = _val(a)
    out = np.asarray(av.sum())
    if not isinstance(a, Var):
        return out
    shape = av.shape

    def vjp(g):
        return (np.full(shape, float(g)),)

    return a.tape._push("sum_all", out, (a.nid,), vjp)


def mean_all(a):
    av = _val(a)
    out = np.asarray(av.mean())
    if not isinstance(a, Var):
        return out
    shape = av.shape
    inv = 1.0 / av.size

    def vjp(g):
        return (np.full(shape, float(g) * inv),)

    return a.tape._push("mean_all", out, (a.nid,), vjp)


def normalize_rows(a):
    """Scale each row to unit L2 norm; zero rows are degenerate."""
    av = _val(a)
    if av.ndim != 2:
        raise ShapeError(f"normalize_rows: expects a matrix, got shape {av.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", av, av))[:, None]
    if not norms.all():
        row = int(np.argmin(norms))
        raise DegenerateInputError(f"normalize_rows: row {row} has zero norm")
    out = av / norms
    if not isinstance(a, Var):
        return out

    def vjp(g):
        # d(x/|x|) pulls back g to (g - (g.y) y)/|x| per row, y = x/|x|.
        coeff = (g * out).sum(axis=1, keepdims=True)
        return ((g - coeff * out) / norms,)

    return a.tape._push("normalize_rows", out, (a.nid,), vjp)


def cosine_sim(x, y):
    """Cosine similarity of two vectors, in [-1, 1]."""
    xv, yv = _val(x), _val(y)
    if xv.ndim != 1 or yv.ndim != 1 or xv.shape != yv.shape:
        raise ShapeError(f"cosine_sim: expects equal-length vectors, got shapes {xv.shape} and {yv.shape}")
    nx = float(np.linalg.norm(xv))
    ny = float(np.linalg.norm(yv))
    if nx == 0.0 or ny == 0.0:
        raise DegenerateInputError("cosine_sim: zero-norm argument")
    c = float(xv @ yv) / (nx * ny)
    out = np.asarray(c)
    tape = _tape_of(x, y)
    if tape is None:
        return out

    def vjp(g):
        gs = float(g)
        gx = gs * (yv / (nx * ny) - c * xv / (nx * nx))
        gy = gs * (xv / (nx * ny) - c * yv / (ny * ny))
        return (gx, gy)

    return tape._push("cosine_sim", out, (_pid(x), _pid(y)), vjp)


def _lse_rows(work: Tensor, exclude_diag: bool):
    m = work.max(axis=1, keepdims=True)
    e = np.exp(work - m)
    if exclude_diag:
        np.fill_diagonal(e, 0.0)
    s = e.sum(axis=1, keepdims=True)
    return (m + np.log(s)).ravel(), e, s


def logsumexp_rows(a, exclude_diag: bool = False):
    """Row-wise log-sum-exp; optionally leaves out the diagonal entry."""
    av = _val(a)
    if av.ndim != 2:
        raise ShapeError(f"logsumexp_rows: expects a matrix, got shape {av.shape}")
    if exclude_diag:
        if av.shape[0] != av.shape[1]:
            raise ShapeError(f"logsumexp_rows: diagonal exclusion needs a square matrix, got {av.shape}")
        if av.shape[0] < 2:
            raise ContractError("logsumexp_rows: diagonal exclusion leaves an empty row for size < 2")
        work = av.copy()
        np.fill_diagonal(work, -np.inf)
    else:
        work = av
    out, e, s = _lse_rows(work, exclude_diag)
    if not isinstance(a, Var):
        return out
    soft = e / s  # row softmax over included entries

    def vjp(g):
        return (soft * g[:, None],)

    return a.tape._push("logsumexp_rows", out, (a.nid,), vjp)


def logsumexp_all(a):
    """log sum exp over every entry of ``a``."""
    av = _val(a)
    m = float(av.max())
    e = np.exp(av - m)
    s = float(e.sum())
    out = np.asarray(m + np.log(s))
    if not isinstance(a, Var):
        return out
    soft = e / s

    def vjp(g):
        return (soft * float(g),)

    return a.tape._push("logsumexp_all", out, (a.nid,), vjp)


def weighted_sum(w, a):
    """sum(w * a) for a constant weight array ``w``."""
    wv = _val(w)
    av = _val(a)
    if wv.shape != av.shape:
        raise ShapeError(f"weighted_sum: weight shape {wv.shape} does not match value shape {av.shape}")
    out = np.asarray(np.vdot(wv, av))
    if not isinstance(a, Var):
        return out

    def vjp(g):
        return (wv * float(g),)

    return a.tape._push("weighted_sum", out, (a.nid,), vjp)


# ---------------------------------------------------------------------------
# backward sweep


class Gradients:
    """Gradient of a scalar output with respect to tape nodes.

    Untouched leaves report zero arrays of the leaf shape.
    """

    def __init__(self, tape: Tape, grads: list):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, var: Var) -> Tensor:
        if var.tape is not self._tape:
            raise ContractError("gradient lookup for a variable from a different tape")
        g = self._grads[var.nid]
        if g is None:
            return np.zeros_like(var.value)
        return np.asarray(g)

    def for_leaves(self) -> list[Tensor]:
        """Gradients of all parameter leaves, in leaf-creation order."""
        out = []
        for nid in self._tape._leaf_ids:
            g = self._grads[nid]
            if g is None:
                g = np.zeros_like(self._tape._nodes[nid].value)
            out.append(np.asarray(g))
        return out


def backward(tape: Tape, output: Var) -> Gradients:
    """Reverse sweep from a scalar ``output`` node.

    Visits each node exactly once, in reverse topological (id) order, and
    accumulates into parents sequentially for bit-deterministic results.
    """
    if output.tape is not tape:
        raise ContractError("output variable does not belong to this tape")
    if output.value.shape != ():
        raise ContractError(f"backward: output must be scalar, got shape {output.value.shape}")
    grads: list = [None] * len(tape._nodes)
    grads[output.nid] = np.asarray(1.0)
    for nid in range(output.nid, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = tape._nodes[nid]
        if node.vjp is None:
            continue
        parent_grads = node.vjp(g)
        for pid, pg in zip(node.parents, parent_grads):
            if pid is None or pg is None:
                continue
            if grads[pid] is None:
                grads[pid] = np.array(pg, dtype=np.float64)
            else:
                grads[pid] += pg
    return Gradients(tape, grads)
