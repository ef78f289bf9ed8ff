"""Hash encoder: features -> relaxed codes in [-1,1] -> packed binary codes.

The encoder is a two-layer feed-forward head over precomputed feature
vectors: a 1000-unit hidden layer with rectifier activation, then a
projection to the code length with tanh for training and sign for
inference.  Inputs are standardized per dimension with statistics frozen
into the model, which keeps the tanh outputs out of saturation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import seeds
from .errors import ContractError, FormatError, ShapeError
from .ndmath import Tape, Var, add, as_tensor, matmul, narrow, relu, reshape, tanh

HIDDEN_UNITS = 1000

MODEL_MAGIC = b"DSCHMODL"
MODEL_VERSION = 1


@dataclass
class HashModel:
    """Two affine layers plus the architecture metadata and input scaling."""

    w1: np.ndarray  # (d, HIDDEN_UNITS)
    b1: np.ndarray  # (HIDDEN_UNITS,)
    w2: np.ndarray  # (HIDDEN_UNITS, r)
    b2: np.ndarray  # (r,)
    input_dim: int
    code_len: int
    seed: Optional[int]
    feat_mean: np.ndarray = field(repr=False, default=None)
    feat_std: np.ndarray = field(repr=False, default=None)

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)


@dataclass
class BinaryCodes:
    """Bit-packed codes in {-1,+1}; +1 maps to bit 1, code 0 to bit 0 (LSB)."""

    packed: np.ndarray  # (n, ceil(r/8)) uint8
    code_len: int

    @property
    def count(self) -> int:
        return self.packed.shape[0]

    def to_signs(self) -> np.ndarray:
        """Unpack to an (n, r) array of -1/+1 int8 values."""
        bits = np.unpackbits(self.packed, axis=1, count=self.code_len, bitorder="little")
        return (bits.astype(np.int8) * 2 - 1)


def pack_signs(signs: np.ndarray, code_len: int) -> BinaryCodes:
    """Pack an (n, r) sign matrix into row-wise little-endian bits."""
    signs = np.atleast_2d(np.asarray(signs))
    if signs.shape[1] != code_len:
        raise ShapeError(f"pack_signs: sign width {signs.shape[1]} does not match code length {code_len}")
    bits = (signs > 0).astype(np.uint8)
    return BinaryCodes(np.packbits(bits, axis=1, bitorder="little"), code_len)


def init_model(d: int, r: int, seed: int) -> HashModel:
    """Glorot-uniform weights, zero biases, identity standardization."""
    if d < 1 or r < 1:
        raise ContractError(f"init_model: dimensions must be positive, got d={d}, r={r}")
    rng = seeds.stream(seed, seeds.INIT)
    lim1 = np.sqrt(6.0 / (d + HIDDEN_UNITS))
    lim2 = np.sqrt(6.0 / (HIDDEN_UNITS + r))
    return HashModel(
        w1=rng.uniform(-lim1, lim1, size=(d, HIDDEN_UNITS)),
        b1=np.zeros(HIDDEN_UNITS),
        w2=rng.uniform(-lim2, lim2, size=(HIDDEN_UNITS, r)),
        b2=np.zeros(r),
        input_dim=d,
        code_len=r,
        seed=seed,
        feat_mean=np.zeros(d),
        feat_std=np.ones(d),
    )


def fit_standardizer(model: HashModel, X: np.ndarray) -> None:
    """Freeze per-dimension mean/std of the training features into the model."""
    X = as_tensor(X)
    model.feat_mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0  # constant dimensions pass through unscaled
    model.feat_std = std


def standardize(model: HashModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(as_tensor(X))
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"feature width {X.shape[1]} does not match model input dim {model.input_dim}")
    return (X - model.feat_mean) / model.feat_std


def forward_logits(params, x_std):
    """Pre-tanh code logits. ``params`` may be arrays or taped Vars."""
    w1, b1, w2, b2 = params
    hidden = relu(add(matmul(x_std, w1), b1))
    return add(matmul(hidden, w2), b2)


def param_count(d: int, r: int) -> int:
    return d * HIDDEN_UNITS + HIDDEN_UNITS + HIDDEN_UNITS * r + r


def flatten_params(model: HashModel) -> np.ndarray:
    return np.concatenate([p.ravel() for p in model.params()])


def unflatten_params(theta, d: int, r: int):
    """Split a flat parameter vector back into (w1, b1, w2, b2).

    Works on plain arrays and on taped Vars, so gradient checks can treat
    the whole parameter set as one vector.
    """
    sizes = [d * HIDDEN_UNITS, HIDDEN_UNITS, HIDDEN_UNITS * r, r]
    offs = np.cumsum([0] + sizes)
    w1 = reshape(narrow(theta, offs[0], offs[1]), (d, HIDDEN_UNITS))
    b1 = narrow(theta, offs[1], offs[2])
    w2 = reshape(narrow(theta, offs[2], offs[3]), (HIDDEN_UNITS, r))
    b2 = narrow(theta, offs[3], offs[4])
    return w1, b1, w2, b2


def bind_model(tape: Tape, model: HashModel) -> tuple[Var, Var, Var, Var]:
    """Register the four parameter tensors as leaves, in declaration order."""
    return (
        tape.leaf(model.w1, "w1"),
        tape.leaf(model.b1, "b1"),
        tape.leaf(model.w2, "w2"),
        tape.leaf(model.b2, "b2"),
    )


def encode_relaxed(model: HashModel, X: np.ndarray, tape: Optional[Tape] = None):
    """tanh-relaxed codes in (-1, 1); recorded on ``tape`` when given.

    With a tape the return value is a Var whose leaf gradients (in
    declaration order w1, b1, w2, b2) flow from any scalar derived of it.
    """
    x_std = standardize(model, X)
    params = bind_model(tape, model) if tape is not None else model.params()
    return tanh(forward_logits(params, x_std))


def encode_binary(model: HashModel, X: np.ndarray) -> BinaryCodes:
    """Sign-quantized codes from the pre-tanh logits; sign(0) -> +1."""
    logits = forward_logits(model.params(), standardize(model, X))
    signs = np.where(logits >= 0.0, 1, -1).astype(np.int8)
    return pack_signs(signs, model.code_len)


# ---------------------------------------------------------------------------
# model persistence

_HEADER = struct.Struct("<HII")  # version, d, r


def save_model(model: HashModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(_HEADER.pack(MODEL_VERSION, model.input_dim, model.code_len))
        fh.write(np.ascontiguousarray(model.feat_mean, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.feat_std, dtype="<f8").tobytes())
        for p in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path) -> HashModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", path=path, offset=0)
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError("truncated header", path=path, offset=len(MODEL_MAGIC) + len(header))
        version, d, r = _HEADER.unpack(header)
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported model version {version}", path=path, offset=len(MODEL_MAGIC))
        expected = (2 * d + param_count(d, r)) * 8
        payload = fh.read()
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, expected {expected} for d={d}, r={r}",
            path=path,
            offset=len(MODEL_MAGIC) + _HEADER.size + min(len(payload), expected),
        )
    vals = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    mean, vals = vals[:d], vals[d:]
    std, vals = vals[:d], vals[d:]
    sizes = [d * HIDDEN_UNITS, HIDDEN_UNITS, HIDDEN_UNITS * r, r]
    parts = []
    for s in sizes:
        parts.append(vals[:s])
        vals = vals[s:]
    return HashModel(
        w1=parts[0].reshape(d, HIDDEN_UNITS).copy(),
        b1=parts[1].copy(),
        w2=parts[2].reshape(HIDDEN_UNITS, r).copy(),
        b2=parts[3].copy(),
        input_dim=d,
        code_len=r,
        seed=None,
        feat_mean=mean.copy(),
        feat_std=std.copy(),
    )
