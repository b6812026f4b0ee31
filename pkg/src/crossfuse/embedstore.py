"""Embedding file format: dense float32 matrices with row-aligned id sidecars.

Binary layout (all little-endian):

    offset  size  field
    0       4     magic  b"EMB1"
    4       1     role   (see ChannelRole)
    5       1     dtype  (0 = float32)
    6       4     dim    (u32, >= 1)
    10      8     count  (u64, >= 1)
    18      4*dim*count  row-major float32 payload

The id sidecar lives next to the matrix at ``<path>.ids``: one UTF-8 id per
line, same order as the rows, no trailing blank line. Reads validate magic,
dtype, payload size, sidecar length, id uniqueness, and reject NaN/Inf.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"EMB1"
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sBBIQ")

# L2 norms may drift this far from 1.0 and still count as normalized.
NORM_TOL = 1e-5


class ChannelRole(enum.Enum):
    """What a stored matrix encodes; recorded in the file header."""

    QUERY_IMAGE = "query_image"
    PASSAGE_IMAGE = "passage_image"
    ENTITY_NAME = "entity_name"
    QUERY_TEXT = "query_text"
    PASSAGE_TEXT = "passage_text"


_ROLE_BYTES = {role: i for i, role in enumerate(ChannelRole)}
_BYTE_ROLES = {i: role for role, i in _ROLE_BYTES.items()}


@dataclass
class EmbeddingMatrix:
    """Ordered ids plus a dense float32 matrix for one channel."""

    ids: list[str]
    data: np.ndarray
    role: ChannelRole
    normalized: bool = False
    _index: dict[str, int] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def index_of(self, id_: str) -> int:
        if self._index is None:
            self._index = {d: i for i, d in enumerate(self.ids)}
        try:
            return self._index[id_]
        except KeyError:
            raise ValidationError(f"unknown id {id_!r} for role {self.role.value}") from None

    def validate(self) -> None:
        if self.data.ndim != 2:
            raise ValidationError(f"data must be 2-D, got shape {self.data.shape}")
        if len(self.ids) != self.data.shape[0]:
            raise ValidationError(
                f"{len(self.ids)} ids but {self.data.shape[0]} rows"
            )
        if self.count < 1:
            raise ValidationError("empty matrix: at least one row required")
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")
        if len(set(self.ids)) != len(self.ids):
            seen, dupes = set(), set()
            for d in self.ids:
                (dupes if d in seen else seen).add(d)
            raise ValidationError(f"duplicate ids: {sorted(dupes)[:5]}")
        for d in self.ids:
            if "\n" in d or d == "":
                raise ValidationError(f"id {d!r} is empty or contains a newline")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("data contains NaN or Inf")
        if self.normalized:
            norms = np.linalg.norm(self.data.astype(np.float64), axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
            if bad.size:
                raise ValidationError(
                    f"normalized flag set but row {self.ids[bad[0]]!r} has norm {norms[bad[0]]:.6g}"
                )


def l2_normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit L2 norm; order preserved, cosines unchanged.

    Zero rows have no direction and are rejected with the offending id.
    """
    norms = np.linalg.norm(matrix.data.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"cannot normalize zero-norm row {matrix.ids[zero[0]]!r}")
    data = (matrix.data.astype(np.float64) / norms[:, None]).astype(np.float32)
    return replace(matrix, ids=list(matrix.ids), data=data, normalized=True, _index=None)


def _is_normalized(data: np.ndarray) -> bool:
    norms = np.linalg.norm(data.astype(np.float64), axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= NORM_TOL))


def _sidecar(path) -> Path:
    return Path(str(path) + ".ids")


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Write the binary matrix file and its ``.ids`` sidecar."""
    matrix.validate()
    path = Path(path)
    header = _HEADER.pack(
        MAGIC, _ROLE_BYTES[matrix.role], DTYPE_FLOAT32, matrix.dim, matrix.count
    )
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    _sidecar(path).write_bytes("\n".join(matrix.ids).encode("utf-8"))


def read_embeddings(path) -> EmbeddingMatrix:
    """Read a matrix written by :func:`write_embeddings`, validating everything.

    The normalized flag is not stored; it is recomputed from the row norms.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header ({len(blob)} bytes)")
    magic, role_byte, dtype_byte, dim, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if role_byte not in _BYTE_ROLES:
        raise FormatError(f"{path}: unknown role byte {role_byte}")
    if dtype_byte != DTYPE_FLOAT32:
        raise FormatError(f"{path}: unsupported dtype byte {dtype_byte}")
    if dim < 1 or count < 1:
        raise FormatError(f"{path}: invalid dim={dim} count={count}")
    expected = _HEADER.size + 4 * dim * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size mismatch, expected {expected} bytes got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(count, dim)

    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise FormatError(f"missing id sidecar {sidecar}")
    text = sidecar.read_bytes().decode("utf-8")
    ids = text.splitlines()
    if len(ids) != count:
        raise FormatError(
            f"{sidecar}: {len(ids)} ids but header declares count={count}"
        )
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: payload contains NaN or Inf")

    matrix = EmbeddingMatrix(
        ids=ids,
        data=data.copy(),
        role=_BYTE_ROLES[role_byte],
        normalized=_is_normalized(data),
    )
    matrix.validate()
    return matrix
