"""One-hot encoding of DNA windows.

Column order is (A, T, C, G); N encodes as the all-zero row so unknown
bases contribute nothing downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SequenceValidationError
from .fasta import NucleotideSequence

BASE_COLUMNS = "ATCG"

# 256-entry lookup: byte of the base character -> column index, -1 for N.
_LOOKUP = np.full(256, -2, dtype=np.int64)
for _i, _b in enumerate(BASE_COLUMNS):
    _LOOKUP[ord(_b)] = _i
_LOOKUP[ord("N")] = -1


def one_hot_encode(bases: str) -> np.ndarray:
    """Encode a base string to a float32 matrix of shape (len, 4)."""
    codes = _LOOKUP[np.frombuffer(bases.encode("ascii"), dtype=np.uint8)]
    if (codes == -2).any():
        bad = int(np.argmax(codes == -2))
        raise SequenceValidationError(
            f"illegal character {bases[bad]!r} at position {bad + 1}; expected one of A,C,G,T,N"
        )
    out = np.zeros((len(bases), 4), dtype=np.float32)
    known = codes >= 0
    out[np.nonzero(known)[0], codes[known]] = 1.0
    return out


@dataclass
class EncodedSequence:
    """One window ready for the network.

    onehot is (L, 4); label is the two-element class vector with index 0 =
    no binding site and index 1 = binding site, or None when unlabeled.
    """

    onehot: np.ndarray
    label: np.ndarray | None
    source_id: str


def encode_record(record: NucleotideSequence) -> EncodedSequence:
    label = None
    if record.label is not None:
        label = np.zeros(2, dtype=np.float32)
        label[int(record.label)] = 1.0
    return EncodedSequence(onehot=one_hot_encode(record.bases), label=label, source_id=record.id)


def one_hot_batch(sequences: list[str]) -> np.ndarray:
    """Encode equal-length sequences to a (batch, len, 4) float32 array."""
    if not sequences:
        return np.zeros((0, 0, 4), dtype=np.float32)
    length = len(sequences[0])
    for seq in sequences:
        if len(seq) != length:
            raise SequenceValidationError(
                f"cannot batch sequences of different lengths ({length} and {len(seq)})"
            )
    return np.stack([one_hot_encode(s) for s in sequences])
