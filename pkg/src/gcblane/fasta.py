"""FASTA reading/writing and the validated nucleotide sequence record."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import FastaParseError, SequenceValidationError

ALPHABET = frozenset("ACGTN")


@dataclass
class NucleotideSequence:
    """A named DNA window over {A,C,G,T,N}, optionally labeled.

    label is 1 for a window containing a binding site, 0 for a negative,
    None when unknown (e.g. prediction input).
    """

    id: str
    bases: str
    label: int | None = None

    def __len__(self) -> int:
        return len(self.bases)

    @property
    def has_n(self) -> bool:
        return "N" in self.bases


def validate_bases(bases: str, record_id: str = "") -> str:
    """Uppercase and reject any character outside the alphabet.

    Positions in error messages are 1-based.
    """
    upper = bases.upper()
    for pos, ch in enumerate(upper, start=1):
        if ch not in ALPHABET:
            where = f" in record '{record_id}'" if record_id else ""
            raise SequenceValidationError(
                f"illegal character {ch!r} at position {pos}{where}; expected one of A,C,G,T,N"
            )
    return upper


def parse_fasta(path: str | Path) -> list[NucleotideSequence]:
    """Parse a FASTA file into records, preserving input order.

    Raises FastaParseError with a line number for structural problems and
    SequenceValidationError for characters outside {A,C,G,T,N}.
    """
    path = Path(path)
    records: list[NucleotideSequence] = []
    current_id: str | None = None
    current_parts: list[str] = []
    header_line = 0

    def flush() -> None:
        if current_id is None:
            return
        if not current_parts:
            raise FastaParseError(f"{path}: line {header_line}: record '{current_id}' has no sequence")
        records.append(NucleotideSequence(id=current_id, bases=validate_bases("".join(current_parts), current_id)))

    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith(">"):
                flush()
                current_id = line[1:].split()[0] if line[1:].split() else line[1:].strip()
                if not current_id:
                    raise FastaParseError(f"{path}: line {lineno}: empty FASTA header")
                current_parts = []
                header_line = lineno
            else:
                if current_id is None:
                    raise FastaParseError(f"{path}: line {lineno}: sequence data before first '>' header")
                current_parts.append(line)
    flush()
    return records


def write_fasta(records: list[NucleotideSequence], path: str | Path, width: int = 80) -> None:
    """Write records in input order, wrapping sequence lines at `width`."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f">{rec.id}\n")
            for start in range(0, len(rec.bases), width):
                fh.write(rec.bases[start : start + width] + "\n")
