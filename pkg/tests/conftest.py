"""Shared helpers: random DNA, planted-motif datasets, tiny model configs."""

from __future__ import annotations

import numpy as np
import pytest

from gcblane.fasta import NucleotideSequence, write_fasta
from gcblane.manifest import build_manifest

BASES = "ACGT"


def random_dna(rng: np.random.Generator, length: int) -> str:
    return "".join(BASES[i] for i in rng.integers(0, 4, size=length))


def motif_positives(rng: np.random.Generator, count: int, motif: str, length: int = 101,
                    prefix: str = "pos") -> list[NucleotideSequence]:
    """Random windows with `motif` planted at a uniformly random offset."""
    records = []
    for i in range(count):
        chars = list(random_dna(rng, length))
        start = int(rng.integers(0, length - len(motif) + 1))
        chars[start : start + len(motif)] = motif
        records.append(NucleotideSequence(id=f"{prefix}_{i}", bases="".join(chars)))
    return records


def make_motif_dataset(out_dir, count: int, motif: str, seed: int, length: int = 101):
    """Write a positives FASTA and build its manifest under out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0xDA7A])
    positives = motif_positives(rng, count, motif, length)
    fasta_path = out_dir / "positives.fasta"
    write_fasta(positives, fasta_path)
    return build_manifest(fasta_path, seed=seed, out=out_dir / "dataset")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
