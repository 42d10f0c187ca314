"""Dinucleotide-preserving sequence shuffle.

Negatives for training are made by shuffling a real window so that every
2-mer keeps its exact count (an Eulerian-path walk of the dinucleotide
multigraph, Altschul-Erickson style). First and last bases stay fixed.
"""

from __future__ import annotations

import numpy as np

from .errors import ShuffleError


def _out_lists(s: str) -> dict[str, list[str]]:
    lists: dict[str, list[str]] = {}
    for a, b in zip(s, s[1:]):
        lists.setdefault(a, []).append(b)
    return lists


def _connected_to_last(last_edge: dict[str, str], vertices: list[str], last: str) -> bool:
    # Every vertex with out-edges must reach `last` along last-edge pointers,
    # otherwise the walk would strand those edges in a side cycle.
    for v in vertices:
        if v == last:
            continue
        seen = {v}
        cur = v
        while cur != last:
            cur = last_edge.get(cur)
            if cur is None or cur in seen:
                return False
            seen.add(cur)
    return True


def dinucleotide_shuffle(bases: str, rng: int | np.random.Generator) -> str:
    """Return a shuffle of `bases` with identical dinucleotide counts.

    Rejects sequences shorter than 2 and sequences containing N (a negative
    made from an ambiguous window would not have well-defined 2-mer counts).
    """
    if len(bases) < 2:
        raise ShuffleError(f"sequence of length {len(bases)} has no dinucleotides to preserve")
    if "N" in bases:
        raise ShuffleError("sequence contains N; dinucleotide shuffle requires unambiguous bases")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    first, last = bases[0], bases[-1]
    out = _out_lists(bases)
    vertices = sorted(out)
    if last not in vertices:
        vertices.append(last)

    # Pick each vertex's final outgoing edge, rejecting picks whose
    # last-edge chains do not all lead to the terminal base.
    while True:
        last_edge = {v: out[v][rng.integers(len(out[v]))] for v in vertices if v != last and out.get(v)}
        if _connected_to_last(last_edge, vertices, last):
            break

    shuffled: dict[str, list[str]] = {}
    for v, targets in out.items():
        rest = list(targets)
        if v in last_edge:
            rest.remove(last_edge[v])
        rng.shuffle(rest)
        if v in last_edge:
            rest.append(last_edge[v])
        shuffled[v] = rest

    # Walk the multigraph from the first base, consuming edges in order.
    position = {v: 0 for v in shuffled}
    result = [first]
    cur = first
    for _ in range(len(bases) - 1):
        nxt = shuffled[cur][position[cur]]
        position[cur] += 1
        result.append(nxt)
        cur = nxt
    return "".join(result)
