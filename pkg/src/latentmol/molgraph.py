"""Molecular graphs with an implicit-hydrogen valence model.

Atoms are heavy atoms only; hydrogens are implied by filling each atom up to
its maximum valence. Rings are kekulized, so bond orders are always 1, 2 or 3.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

ELEMENTS = ("C", "N", "O", "F", "S", "P", "Cl", "Br")
ELEMENT_INDEX = {el: i for i, el in enumerate(ELEMENTS)}
MAX_VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1, "S": 6, "P": 5, "Cl": 1, "Br": 1}
BOND_ORDERS = (1, 2, 3)


@dataclass(frozen=True)
class MolGraph:
    """Heavy-atom graph. Bonds are stored as ``(i, j, order)`` with ``i < j``."""

    atoms: tuple
    bonds: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        norm = []
        for a, b, order in self.bonds:
            a, b = int(a), int(b)
            norm.append((min(a, b), max(a, b), int(order)))
        object.__setattr__(self, "bonds", tuple(norm))

    def __len__(self):
        return len(self.atoms)

    @cached_property
    def adjacency(self) -> tuple:
        adj = [[] for _ in self.atoms]
        for a, b, order in self.bonds:
            if 0 <= a < len(adj) and 0 <= b < len(adj):
                adj[a].append((b, order))
                adj[b].append((a, order))
        return tuple(tuple(sorted(nbrs)) for nbrs in adj)

    def neighbors(self, i: int):
        return self.adjacency[i]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def valence_used(self, i: int) -> int:
        return sum(order for _, order in self.adjacency[i])

    def bond_order(self, i: int, j: int) -> int:
        for k, order in self.adjacency[i]:
            if k == j:
                return order
        return 0

    def with_element(self, i: int, element: str) -> "MolGraph":
        atoms = list(self.atoms)
        atoms[i] = element
        return MolGraph(tuple(atoms), self.bonds)

    @property
    def heavy_atoms(self) -> int:
        return len(self.atoms)

    def __repr__(self):
        return f"MolGraph({to_smiles(self) if validate(self) else self.atoms!r})"


def validate(graph: MolGraph) -> bool:
    """True iff the graph is a connected, valence-feasible molecule."""
    n = len(graph.atoms)
    if n == 0:
        return False
    if any(el not in MAX_VALENCE for el in graph.atoms):
        return False
    seen = set()
    for a, b, order in graph.bonds:
        if a == b or not (0 <= a < n and 0 <= b < n):
            return False
        if order not in BOND_ORDERS or (a, b) in seen:
            return False
        seen.add((a, b))
    for i, el in enumerate(graph.atoms):
        if graph.valence_used(i) > MAX_VALENCE[el]:
            return False
    return _is_connected(graph)


def _is_connected(graph: MolGraph) -> bool:
    n = len(graph.atoms)
    stack, seen = [0], {0}
    while stack:
        v = stack.pop()
        for u, _ in graph.adjacency[v]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return len(seen) == n


# ---------------------------------------------------------------------------
# rings


def ring_count(graph: MolGraph) -> int:
    return len(graph.bonds) - len(graph.atoms) + 1


def sssr(graph: MolGraph) -> list:
    """Smallest set of smallest rings as sorted atom-index tuples.

    Horton candidate cycles (one per vertex/edge pair, built from BFS shortest
    paths) are sorted by ``(size, atoms)`` and accepted greedily while they
    stay linearly independent over GF(2).
    """
    n_rings = ring_count(graph)
    if n_rings <= 0:
        return []
    n = len(graph.atoms)
    adj = graph.adjacency
    edge_id = {(a, b): k for k, (a, b, _) in enumerate(graph.bonds)}

    def eid(a, b):
        return edge_id[(a, b) if a < b else (b, a)]

    # BFS parents per root; neighbours are visited in index order so paths are
    # a fixed, deterministic choice of shortest path.
    parents = []
    for root in range(n):
        dist = [-1] * n
        par = [-1] * n
        dist[root] = 0
        queue = [root]
        for v in queue:
            for u, _ in adj[v]:
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    par[u] = v
                    queue.append(u)
        parents.append(par)

    def path(root, v):
        out = [v]
        par = parents[root]
        while v != root:
            v = par[v]
            out.append(v)
        return out  # v ... root

    candidates = {}
    for root in range(n):
        for a, b, _ in graph.bonds:
            pa, pb = path(root, a), path(root, b)
            if set(pa) & set(pb) != {root}:
                continue
            # root..a followed by b..(next to root); wraps back to root
            cycle = pa[::-1] + pb[:-1]
            if len(cycle) < 3:
                continue
            mask = 0
            for x, y in zip(cycle, cycle[1:] + cycle[:1]):
                mask |= 1 << eid(x, y)
            key = (len(cycle), tuple(sorted(cycle)))
            if mask not in candidates or key < candidates[mask]:
                candidates[mask] = key

    ordered = sorted(candidates.items(), key=lambda kv: kv[1])
    basis = {}  # pivot bit -> reduced mask
    rings = []
    for mask, (size, atoms) in ordered:
        reduced = mask
        while reduced:
            pivot = reduced.bit_length() - 1
            if pivot in basis:
                reduced ^= basis[pivot]
            else:
                basis[pivot] = reduced
                rings.append(atoms)
                break
        if len(rings) == n_rings:
            break
    return rings


def ring_sizes(graph: MolGraph) -> list:
    """Sorted sizes of the SSSR rings."""
    return sorted(len(r) for r in sssr(graph))


def ring_atoms(graph: MolGraph) -> frozenset:
    atoms = set()
    for r in sssr(graph):
        atoms.update(r)
    return frozenset(atoms)


# ---------------------------------------------------------------------------
# canonical labelling


def _dense(values):
    uniq = {v: k for k, v in enumerate(sorted(set(values)))}
    return [uniq[v] for v in values]


def _refine(colors, adj):
    ncells = len(set(colors))
    while True:
        sigs = [
            (colors[i], tuple(sorted((order, colors[j]) for j, order in adj[i])))
            for i in range(len(colors))
        ]
        colors = _dense(sigs)
        k = len(set(colors))
        if k == ncells:
            return colors
        ncells = k


def _individualize(colors, v):
    target = colors[v]
    out = []
    for i, c in enumerate(colors):
        if c == target:
            out.append(2 * c + (0 if i == v else 1))
        else:
            out.append(2 * c)
    return _dense(out)


class _Canonizer:
    def __init__(self, graph: MolGraph):
        self.graph = graph
        self.adj = graph.adjacency
        self.n = len(graph.atoms)
        self.best_cert = None
        self.best_labels = None
        self.leaves = {}
        self.generators = self._twin_generators()

    def _twin_generators(self):
        groups = {}
        for i in range(self.n):
            key = (self.graph.atoms[i], self.adj[i])
            groups.setdefault(key, []).append(i)
        gens = []
        for members in groups.values():
            for a, b in zip(members, members[1:]):
                perm = list(range(self.n))
                perm[a], perm[b] = b, a
                gens.append(perm)
        return gens

    def certificate(self, labels):
        inv = [0] * self.n
        for atom, lab in enumerate(labels):
            inv[lab] = atom
        elements = tuple(ELEMENT_INDEX.get(self.graph.atoms[a], 99) for a in inv)
        edges = tuple(
            sorted(
                (min(labels[a], labels[b]), max(labels[a], labels[b]), order)
                for a, b, order in self.graph.bonds
            )
        )
        return (elements, edges)

    def _orbit_roots(self, fixed):
        parent = list(range(self.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for perm in self.generators:
            if all(perm[v] == v for v in fixed):
                for a, b in enumerate(perm):
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
        return find

    def search(self, colors, fixed):
        colors = _refine(colors, self.adj)
        if len(set(colors)) == self.n:
            self._leaf(colors)
            return
        sizes = {}
        for c in colors:
            sizes[c] = sizes.get(c, 0) + 1
        target = min(c for c, s in sizes.items() if s > 1)
        cell = [i for i, c in enumerate(colors) if c == target]
        explored = []
        for v in cell:
            if explored:
                find = self._orbit_roots(fixed)
                if any(find(v) == find(u) for u in explored):
                    continue
            self.search(_individualize(colors, v), fixed + (v,))
            explored.append(v)

    def _leaf(self, labels):
        cert = self.certificate(labels)
        if cert in self.leaves:
            ref = self.leaves[cert]
            # atom a in this leaf plays the role of atom ref_inv[labels[a]]
            ref_inv = [0] * self.n
            for atom, lab in enumerate(ref):
                ref_inv[lab] = atom
            perm = [ref_inv[labels[a]] for a in range(self.n)]
            if perm != list(range(self.n)):
                self.generators.append(perm)
        else:
            self.leaves[cert] = list(labels)
        if self.best_cert is None or cert < self.best_cert:
            self.best_cert = cert
            self.best_labels = list(labels)

    def run(self):
        initial = [
            (
                ELEMENT_INDEX.get(self.graph.atoms[i], 99),
                len(self.adj[i]),
                tuple(sorted(order for _, order in self.adj[i])),
            )
            for i in range(self.n)
        ]
        self.search(_dense(initial), ())
        return self.best_cert, self.best_labels


_CANON_CACHE: dict = {}


def _canon(graph: MolGraph):
    key = (graph.atoms, graph.bonds)
    hit = _CANON_CACHE.get(key)
    if hit is None:
        if len(_CANON_CACHE) > 200_000:
            _CANON_CACHE.clear()
        hit = _Canonizer(graph).run()
        _CANON_CACHE[key] = hit
    return hit


def canonical_order(graph: MolGraph) -> list:
    """Atom indices listed by canonical label (label 0 first)."""
    _, labels = _canon(graph)
    order = [0] * len(labels)
    for atom, lab in enumerate(labels):
        order[lab] = atom
    return order


def canonical_key(graph: MolGraph) -> str:
    """String identical for isomorphic graphs and distinct otherwise."""
    if not graph.atoms:
        return ""
    (elements, edges), _ = _canon(graph)
    atoms = ".".join(ELEMENTS[e] for e in elements)
    bonds = ",".join(f"{a}-{b}:{o}" for a, b, o in edges)
    return f"{atoms}|{bonds}"


def is_isomorphic(a: MolGraph, b: MolGraph) -> bool:
    return canonical_key(a) == canonical_key(b)


# ---------------------------------------------------------------------------
# fingerprints

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: int  # bitset packed into a Python int
    nbits: int = 2048
    radius: int = 2

    def on_bits(self) -> list:
        out, x, i = [], self.bits, 0
        while x:
            if x & 1:
                out.append(i)
            x >>= 1
            i += 1
        return out

    def count(self) -> int:
        return bin(self.bits).count("1")

    @classmethod
    def from_bits(cls, on_bits, nbits=2048, radius=2):
        value = 0
        for b in on_bits:
            value |= 1 << b
        return cls(value, nbits, radius)


def fingerprint(graph: MolGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Morgan-style circular fingerprint.

    Iteration 0 hashes ``(element, degree, in_ring)`` per atom; iteration ``r``
    hashes ``(r, previous id, sorted (bond order, neighbour id) pairs)``. Every
    (atom, iteration) identifier sets bit ``id % nbits``.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if nbits <= 0 or nbits & (nbits - 1):
        raise ValueError("nbits must be a power of two")
    in_ring = ring_atoms(graph)
    adj = graph.adjacency
    ids = [
        fnv1a64(struct.pack("<qqq", ELEMENT_INDEX[el], len(adj[i]), int(i in in_ring)))
        for i, el in enumerate(graph.atoms)
    ]
    bits = 0
    for ident in ids:
        bits |= 1 << (ident % nbits)
    for r in range(1, radius + 1):
        new = []
        for i in range(len(ids)):
            pairs = sorted((order, ids[j]) for j, order in adj[i])
            payload = struct.pack("<qQ", r, ids[i]) + b"".join(
                struct.pack("<qQ", o, x) for o, x in pairs
            )
            new.append(fnv1a64(payload))
        ids = new
        for ident in ids:
            bits |= 1 << (ident % nbits)
    return Fingerprint(bits, nbits, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.nbits != b.nbits:
        raise ValueError(f"fingerprint width mismatch: {a.nbits} != {b.nbits}")
    union = bin(a.bits | b.bits).count("1")
    if union == 0:
        return 1.0
    return bin(a.bits & b.bits).count("1") / union


def diversity(graphs, radius: int = 2, nbits: int = 2048) -> float:
    """One minus the mean pairwise Tanimoto similarity."""
    graphs = list(graphs)
    if len(graphs) < 2:
        raise ValueError("diversity needs at least two molecules")
    fps = [fingerprint(g, radius, nbits) for g in graphs]
    sims = [tanimoto(a, b) for a, b in combinations(fps, 2)]
    return 1.0 - sum(sims) / len(sims)


# ---------------------------------------------------------------------------
# SMILES subset writer


def to_smiles(graph: MolGraph) -> str:
    """Write a kekulized, hydrogen-free SMILES string.

    Traversal starts at the canonical root and visits neighbours in canonical
    order, so isomorphic graphs produce the same string.
    """
    if not graph.atoms:
        return ""
    order = canonical_order(graph)
    rank = {atom: k for k, atom in enumerate(order)}
    adj = graph.adjacency
    root = order[0]

    children = {v: [] for v in range(len(graph.atoms))}
    closures = {v: [] for v in range(len(graph.atoms))}  # (partner, order, opens)
    visited = {root}
    seen_edges = set()
    stack = [(root, -1, iter(sorted(adj[root], key=lambda t: rank[t[0]])))]
    while stack:
        v, parent, it = stack[-1]
        advanced = False
        for u, bo in it:
            edge = (min(u, v), max(u, v))
            if edge in seen_edges:
                continue
            seen_edges.add(edge)
            if u in visited:
                closures[u].append((v, bo, True))
                closures[v].append((u, bo, False))
            else:
                visited.add(u)
                seen_edges.add(edge)
                children[v].append((u, bo))
                stack.append((u, v, iter(sorted(adj[u], key=lambda t: rank[t[0]]))))
                advanced = True
                break
        if not advanced:
            stack.pop()

    bond_sym = {1: "", 2: "=", 3: "#"}
    labels = {}
    free = []
    next_label = [1]

    def take_label():
        if free:
            free.sort()
            return free.pop(0)
        lab = next_label[0]
        next_label[0] += 1
        return lab

    def fmt(lab):
        return str(lab) if lab < 10 else f"%{lab}"

    out = []

    def emit(v, in_order):
        out.append(bond_sym[in_order] + graph.atoms[v])
        for partner, bo, opens in closures[v]:
            edge = (min(v, partner), max(v, partner))
            if opens:
                lab = take_label()
                labels[edge] = lab
                out.append(bond_sym[bo] + fmt(lab))
            else:
                lab = labels.pop(edge)
                out.append(fmt(lab))
                free.append(lab)
        kids = children[v]
        for u, bo in kids[:-1]:
            out.append("(")
            emit(u, bo)
            out.append(")")
        if kids:
            emit(kids[-1][0], kids[-1][1])

    if len(graph.atoms) + 50 > sys.getrecursionlimit():
        sys.setrecursionlimit(len(graph.atoms) + 100)
    emit(root, 1)
    return "".join(out)
