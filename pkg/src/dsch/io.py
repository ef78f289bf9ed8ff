"""On-disk formats: feature files, label files, packed code files, run
configuration.

Binary formats are little-endian and versioned.  Readers validate the
magic and the declared sizes against the actual file size before reading
any payload, so corrupted headers are rejected without large allocations.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .encoder import BinaryCodes
from .errors import ContractError, FormatError

FEATURE_MAGIC = b"DSCHFEAT"
CODE_MAGIC = b"DSCHCODE"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<HII")  # version, n, dim-or-codelen


def _read_header(fh, path, magic: bytes) -> tuple[int, int]:
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", path=path, offset=0)
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise FormatError("truncated header", path=path, offset=len(magic) + len(raw))
    version, n, m = _HEADER.unpack(raw)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", path=path, offset=len(magic))
    return n, m


def _check_payload_size(fh, path, expected: int) -> None:
    header_end = fh.tell()
    actual = os.fstat(fh.fileno()).st_size - header_end
    if actual != expected:
        raise FormatError(
            f"payload is {actual} bytes, header declares {expected}",
            path=path,
            offset=header_end,
        )


def write_features(path, X: np.ndarray) -> None:
    X = np.atleast_2d(np.asarray(X))
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(_HEADER.pack(FORMAT_VERSION, X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    """Feature rows as float64 (stored compactly as float32)."""
    with open(path, "rb") as fh:
        n, d = _read_header(fh, path, FEATURE_MAGIC)
        _check_payload_size(fh, path, n * d * 4)
        payload = fh.read()
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, d)


def write_codes(path, codes: BinaryCodes) -> None:
    with open(path, "wb") as fh:
        fh.write(CODE_MAGIC)
        fh.write(_HEADER.pack(FORMAT_VERSION, codes.count, codes.code_len))
        fh.write(np.ascontiguousarray(codes.packed).tobytes())


def read_codes(path) -> BinaryCodes:
    with open(path, "rb") as fh:
        n, r = _read_header(fh, path, CODE_MAGIC)
        row_bytes = (r + 7) // 8
        _check_payload_size(fh, path, n * row_bytes)
        payload = fh.read()
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(n, row_bytes).copy()
    return BinaryCodes(packed=packed, code_len=r)


def write_labels(path, labels: np.ndarray) -> None:
    """One line per sample: comma-separated positive class indices."""
    labels = np.atleast_2d(np.asarray(labels))
    with open(path, "w", encoding="ascii") as fh:
        for row in labels:
            fh.write(",".join(str(int(c)) for c in np.flatnonzero(row)))
            fh.write("\n")


def read_labels(path, num_classes: Optional[int] = None) -> np.ndarray:
    """Multi-hot (n, c) matrix from a class-index text file."""
    rows: list[list[int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                raise FormatError(f"line {lineno} is empty; every sample needs at least one label", path=path)
            try:
                idxs = [int(tok) for tok in line.split(",")]
            except ValueError:
                raise FormatError(f"line {lineno} is not a comma-separated index list", path=path) from None
            if any(i < 0 for i in idxs):
                raise FormatError(f"line {lineno} has a negative class index", path=path)
            rows.append(idxs)
    if not rows:
        raise FormatError("label file has no lines", path=path)
    max_idx = max(max(r) for r in rows)
    c = num_classes if num_classes is not None else max_idx + 1
    if c <= max_idx:
        raise FormatError(f"class index {max_idx} exceeds declared class count {c}", path=path)
    out = np.zeros((len(rows), c), dtype=np.uint8)
    for i, idxs in enumerate(rows):
        out[i, idxs] = 1
    return out


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """TrainConfig fields plus file paths and evaluation cutoffs.

    Unknown JSON keys are rejected; missing keys fall back to these
    defaults (the documented training defaults: temperature 1, learning
    rate 5e-4, component weight 0.1, batch 128, 100 epochs).
    """

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
    log_timings: bool = True
    eval_k: list[int] = field(default_factory=lambda: [5000])
    features: Optional[str] = None
    labels: Optional[str] = None
    query_features: Optional[str] = None
    query_labels: Optional[str] = None

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc}", path=path) from None
        if not isinstance(doc, dict):
            raise FormatError("config root must be a JSON object", path=path)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise FormatError(f"unknown config keys: {', '.join(unknown)}", path=path)
        return cls(**doc)

    def to_json(self, path) -> None:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def train_fields(self) -> dict:
        """The subset of fields that parameterize training itself."""
        return {
            "code_len": self.code_len,
            "fine_components": self.fine_components,
            "coarse_components": self.coarse_components,
            "temperature": self.temperature,
            "component_weight": self.component_weight,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "noise_scale": self.noise_scale,
            "mask_rate": self.mask_rate,
            "gmm_warm_start": self.gmm_warm_start,
        }
