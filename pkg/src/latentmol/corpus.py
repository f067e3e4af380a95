"""Synthetic molecule corpora and random graph generators.

The synthetic corpus is a drop-in replacement for a drug-like dataset: chains
and 5/6-membered rings (occasionally 3/4/7), a few heteroatoms and halogens,
some double bonds and kekulized benzene rings.
"""

from __future__ import annotations

import random

from . import selfies
from .molgraph import MAX_VALENCE, MolGraph, validate

SUBSTITUENTS = ("C", "N", "O", "F", "Cl", "Br", "S", "P")
SUBSTITUENT_WEIGHTS = (0.62, 0.1, 0.12, 0.04, 0.05, 0.03, 0.03, 0.01)
RING_ATOMS = ("C", "N", "O", "S")
RING_ATOM_WEIGHTS = (0.85, 0.08, 0.04, 0.03)
RING_SIZES = (5, 6, 3, 4, 7)
RING_SIZE_WEIGHTS = (0.36, 0.5, 0.04, 0.04, 0.06)
DOUBLE_OK = ("C", "N", "O", "S")


class _Builder:
    def __init__(self, rng):
        self.rng = rng
        self.atoms = []
        self.bonds = {}

    def cap(self, i):
        used = sum(o for (a, b), o in self.bonds.items() if i in (a, b))
        return MAX_VALENCE[self.atoms[i]] - used

    def add(self, element, attach=None, order=1):
        self.atoms.append(element)
        new = len(self.atoms) - 1
        if attach is not None:
            self.bonds[(attach, new)] = order
        return new

    def open_sites(self, need=1):
        return [i for i in range(len(self.atoms)) if self.cap(i) >= need]

    def add_ring(self, attach):
        rng = self.rng
        size = rng.choices(RING_SIZES, RING_SIZE_WEIGHTS)[0]
        benzene = size == 6 and rng.random() < 0.5
        members = []
        for k in range(size):
            el = "C" if benzene else rng.choices(RING_ATOMS, RING_ATOM_WEIGHTS)[0]
            if k == 0 and attach is not None:
                el = "C"  # the fused-on atom needs three bonds
            members.append(self.add(el, attach if k == 0 else members[-1]))
        self.bonds[(members[0], members[-1])] = 1
        if benzene:
            for k in range(0, 6, 2):
                a, b = members[k], members[k + 1]
                key = (a, b) if (a, b) in self.bonds else (b, a)
                self.bonds[key] = 2
        return members


def random_molecule(rng: random.Random, min_atoms: int = 8, max_atoms: int = 32) -> MolGraph:
    """One random valence-valid molecule."""
    b = _Builder(rng)
    target = rng.randint(min_atoms, max_atoms)
    if rng.random() < 0.6:
        b.add_ring(None)
    else:
        b.add(rng.choices(SUBSTITUENTS[:3], (0.8, 0.1, 0.1))[0])
    while len(b.atoms) < target:
        sites = b.open_sites()
        if not sites:
            break
        site = rng.choice(sites)
        if target - len(b.atoms) >= 5 and rng.random() < 0.12:
            b.add_ring(site)
            continue
        el = rng.choices(SUBSTITUENTS, SUBSTITUENT_WEIGHTS)[0]
        order = 1
        if el in DOUBLE_OK and b.cap(site) >= 2 and b.atoms[site] in DOUBLE_OK and rng.random() < 0.12:
            order = 2
        b.add(el, site, order)
    bonds = tuple((a, c, o) for (a, c), o in b.bonds.items())
    return MolGraph(tuple(b.atoms), bonds)


def synthetic_corpus(count: int, seed: int = 0, length: int = selfies.DEFAULT_LENGTH,
                     min_atoms: int = 8, max_atoms: int = 32) -> list:
    """``count`` distinct padded symbol strings of random molecules."""
    rng = random.Random(seed)
    out, seen = [], set()
    while len(out) < count:
        g = random_molecule(rng, min_atoms, max_atoms)
        if not validate(g):
            continue
        try:
            ids = selfies.encode(g, length)
        except selfies.EncodeError:
            continue
        if ids not in seen:
            seen.add(ids)
            out.append(ids)
    return out


def random_graph(rng: random.Random, n_atoms: int, ring_bonds: int = 2,
                 upgrades: int = 2, elements=SUBSTITUENTS) -> MolGraph:
    """Random connected valid graph: a random tree, extra single bonds between
    atoms with spare valence, then random bond-order upgrades on tree edges."""
    atoms = [rng.choice(elements)]
    caps = [MAX_VALENCE[atoms[0]]]
    bonds = {}
    tries = 0
    while len(atoms) < n_atoms and tries < 50 * n_atoms:
        tries += 1
        parent = rng.randrange(len(atoms))
        if caps[parent] < 1:
            continue
        el = rng.choice(elements)
        atoms.append(el)
        caps.append(MAX_VALENCE[el] - 1)
        caps[parent] -= 1
        bonds[(parent, len(atoms) - 1)] = 1
    tree_edges = list(bonds)
    for _ in range(ring_bonds):
        a, b = rng.randrange(len(atoms)), rng.randrange(len(atoms))
        a, b = min(a, b), max(a, b)
        if a != b and (a, b) not in bonds and caps[a] >= 1 and caps[b] >= 1:
            bonds[(a, b)] = 1
            caps[a] -= 1
            caps[b] -= 1
    for _ in range(upgrades):
        if not tree_edges:
            break
        a, b = rng.choice(tree_edges)
        new = bonds[(a, b)] + 1
        # at least one end needs a bonded symbol ([=C], [#N], ...) for the codec
        receivable = selfies.can_receive(atoms[a], new) or selfies.can_receive(atoms[b], new)
        if new <= 3 and receivable and caps[a] >= 1 and caps[b] >= 1:
            bonds[(a, b)] = new
            caps[a] -= 1
            caps[b] -= 1
    return MolGraph(tuple(atoms), tuple((a, b, o) for (a, b), o in bonds.items()))
