"""Post-optimization refinement: a drug-likeness filter and greedy
heteroatom substitution."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .molgraph import MAX_VALENCE, MolGraph, ring_sizes
from .oracles import qed_surrogate, sa_surrogate

log = logging.getLogger(__name__)

REPLACEMENTS = ("N", "O", "Cl", "F")


@dataclass(frozen=True)
class FilterPolicy:
    qed_min: float = 0.4
    sa_max: float = 5.5
    ring_sizes: frozenset = frozenset({5, 6})

    def __post_init__(self):
        if not (abs(self.qed_min) < float("inf") and abs(self.sa_max) < float("inf")):
            raise ValueError("filter thresholds must be finite")

    def admits(self, g: MolGraph) -> bool:
        if not qed_surrogate(g) > self.qed_min:
            return False
        if not sa_surrogate(g) < self.sa_max:
            return False
        return all(s in self.ring_sizes for s in ring_sizes(g))


def filter_molecules(mols, policy: FilterPolicy = FilterPolicy()) -> list:
    """Molecules passing the policy, in input order."""
    return [g for g in mols if policy.admits(g)]


def substitution_sites(g: MolGraph) -> list:
    """Carbons with no N, O, Cl or F neighbour."""
    out = []
    for i, el in enumerate(g.atoms):
        if el != "C":
            continue
        if any(g.atoms[j] in REPLACEMENTS for j, _ in g.neighbors(i)):
            continue
        out.append(i)
    return out


def candidates(g: MolGraph) -> list:
    """``(atom, replacement, graph)`` for every valence-feasible substitution,
    ordered by atom index then replacement."""
    out = []
    for i in substitution_sites(g):
        used = g.valence_used(i)
        for r in REPLACEMENTS:
            if used <= MAX_VALENCE[r]:
                out.append((i, r, g.with_element(i, r)))
    return out


def _score_all(oracle, graphs) -> list:
    if hasattr(oracle, "score_batch"):
        return list(oracle.score_batch(graphs))
    return [oracle(h) for h in graphs]


def finetune(g: MolGraph, oracle, max_sweeps: int | None = None) -> MolGraph:
    """Greedy substitution: each sweep applies the single best improving swap.

    Stops when no swap improves the oracle score. Ties go to the lowest
    (atom index, replacement) pair. Sites are recomputed every sweep.
    """
    current = g
    score = oracle(g)
    sweeps = 0
    while max_sweeps is None or sweeps < max_sweeps:
        sweeps += 1
        cands = candidates(current)
        if not cands:
            break
        scores = _score_all(oracle, [c[2] for c in cands])
        best = None
        for (i, r, h), s in zip(cands, scores):
            if s is None:
                continue
            if oracle.better(s, score if best is None else best[1]):
                best = (h, s)
        if best is None:
            break
        current, score = best
    return current
