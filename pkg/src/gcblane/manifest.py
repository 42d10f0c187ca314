"""Dataset preparation: shuffled negatives, stratified splits, manifest files.

build_manifest is a pure function of (input file bytes, seed): running it
twice over the same inputs produces byte-identical outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .fasta import NucleotideSequence, parse_fasta, write_fasta
from .shuffle import dinucleotide_shuffle

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.70, 0.10, 0.20)


@dataclass
class ManifestEntry:
    path: str
    offset: int
    split: str
    label: int


@dataclass
class DatasetManifest:
    name: str
    seed: int
    split_fractions: tuple[float, float, float]
    entries: list[ManifestEntry]

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "seed": self.seed,
            "split_fractions": list(self.split_fractions),
            "entries": [
                {"path": e.path, "offset": e.offset, "split": e.split, "label": e.label}
                for e in self.entries
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _slice_three_ways(items: list, fractions: tuple[float, float, float]) -> tuple[list, list, list]:
    n = len(items)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    return items[:n_train], items[n_train : n_train + n_val], items[n_train + n_val :]


def build_manifest(
    positives: str | Path,
    seed: int,
    out: str | Path,
    name: str | None = None,
    split_fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> DatasetManifest:
    """Prepare a labeled dataset from a FASTA file of positive windows.

    Writes to `out`: train.fasta / val.fasta / test.fasta, manifest.json,
    and skipped.json listing records excluded from negative generation.
    """
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions {split_fractions} do not sum to 1.0")
    positives = Path(positives)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if name is None:
        name = positives.stem

    records = parse_fasta(positives)
    if not records:
        raise DataError(f"{positives}: no sequences found")

    kept: list[NucleotideSequence] = []
    skipped: list[dict] = []
    for rec in records:
        if rec.has_n:
            skipped.append({"id": rec.id, "reason": "contains N"})
        elif len(rec.bases) < 2:
            skipped.append({"id": rec.id, "reason": "shorter than 2 bases"})
        else:
            kept.append(NucleotideSequence(id=rec.id, bases=rec.bases, label=1))
    if not kept:
        raise DataError(f"{positives}: every record was skipped; nothing to prepare")

    rng = np.random.default_rng(seed)
    negatives = [
        NucleotideSequence(id=f"{rec.id}|shuffled", bases=dinucleotide_shuffle(rec.bases, rng), label=0)
        for rec in kept
    ]

    # Stratified split: shuffle each class, slice contiguously, then shuffle
    # the pooled records within each split so classes interleave.
    pos_order = list(rng.permutation(len(kept)))
    neg_order = list(rng.permutation(len(negatives)))
    split_records: dict[str, list[NucleotideSequence]] = {}
    pos_parts = _slice_three_ways(pos_order, split_fractions)
    neg_parts = _slice_three_ways(neg_order, split_fractions)
    for split, pos_idx, neg_idx in zip(SPLIT_NAMES, pos_parts, neg_parts):
        pool = [kept[i] for i in pos_idx] + [negatives[i] for i in neg_idx]
        split_records[split] = [pool[i] for i in rng.permutation(len(pool))]

    entries: list[ManifestEntry] = []
    for split in SPLIT_NAMES:
        fasta_name = f"{split}.fasta"
        write_fasta(split_records[split], out / fasta_name)
        for offset, rec in enumerate(split_records[split]):
            entries.append(ManifestEntry(path=fasta_name, offset=offset, split=split, label=rec.label))

    manifest = DatasetManifest(name=name, seed=seed, split_fractions=split_fractions, entries=entries)
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    (out / "skipped.json").write_text(json.dumps(skipped, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None

    expected = {"name", "seed", "split_fractions", "entries"}
    if set(payload) != expected:
        raise DataError(f"{path}: manifest keys {sorted(payload)} != expected {sorted(expected)}")
    entries = []
    for i, raw in enumerate(payload["entries"]):
        if set(raw) != {"path", "offset", "split", "label"}:
            raise DataError(f"{path}: entry {i} has keys {sorted(raw)}")
        if raw["split"] not in SPLIT_NAMES:
            raise DataError(f"{path}: entry {i} has unknown split {raw['split']!r}")
        if raw["label"] not in (0, 1):
            raise DataError(f"{path}: entry {i} has label {raw['label']!r}; expected 0 or 1")
        entries.append(ManifestEntry(**raw))
    fractions = tuple(payload["split_fractions"])
    if len(fractions) != 3:
        raise DataError(f"{path}: split_fractions must have 3 values")
    return DatasetManifest(name=payload["name"], seed=payload["seed"], split_fractions=fractions, entries=entries)


def load_split(manifest: DatasetManifest, split: str, base_dir: str | Path) -> list[NucleotideSequence]:
    """Materialize one split's labeled records, in manifest entry order."""
    if split not in SPLIT_NAMES:
        raise DataError(f"unknown split {split!r}; expected one of {SPLIT_NAMES}")
    base_dir = Path(base_dir)
    cache: dict[str, list[NucleotideSequence]] = {}
    result = []
    for entry in manifest.split_entries(split):
        if entry.path not in cache:
            fasta_path = base_dir / entry.path
            if not fasta_path.exists():
                raise DataError(f"split file not found: {fasta_path}")
            cache[entry.path] = parse_fasta(fasta_path)
        records = cache[entry.path]
        if entry.offset >= len(records):
            raise DataError(f"{entry.path}: offset {entry.offset} out of range ({len(records)} records)")
        rec = records[entry.offset]
        result.append(NucleotideSequence(id=rec.id, bases=rec.bases, label=entry.label))
    return result
