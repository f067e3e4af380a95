"""A restricted SELFIES dialect: total decoder and round-trip encoder.

Every symbol string decodes to a valence-valid :class:`MolGraph`. The encoder
walks a spanning tree that contains every multiple bond, so the single-bond
ring closures of the dialect can express all remaining edges.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .molgraph import MAX_VALENCE, MolGraph, canonical_order

DEFAULT_LENGTH = 72

SYMBOLS = (
    "[nop]",
    "[C]", "[N]", "[O]", "[F]", "[S]", "[P]", "[Cl]", "[Br]",
    "[=C]", "[#C]", "[=N]", "[#N]", "[=O]", "[=S]",
    "[Branch1]", "[Branch2]", "[Ring1]", "[Ring2]",
)  # fmt: skip

# digits used for branch lengths and ring offsets (base 16, most significant first)
INDEX_TABLE = (
    "[C]", "[Ring1]", "[Ring2]", "[Branch1]", "[Branch2]", "[O]", "[N]", "[=C]",
    "[=O]", "[=N]", "[F]", "[S]", "[P]", "[Cl]", "[Br]", "[#C]",
)  # fmt: skip

SYMBOL_ID = {s: i for i, s in enumerate(SYMBOLS)}
NOP = SYMBOL_ID["[nop]"]
BRANCH1, BRANCH2 = SYMBOL_ID["[Branch1]"], SYMBOL_ID["[Branch2]"]
RING1, RING2 = SYMBOL_ID["[Ring1]"], SYMBOL_ID["[Ring2]"]

_ATOM_SYMBOLS = {}  # id -> (element, requested order)
for _sym, _id in SYMBOL_ID.items():
    body = _sym[1:-1]
    order = 1
    if body[0] == "=":
        order, body = 2, body[1:]
    elif body[0] == "#":
        order, body = 3, body[1:]
    if body in MAX_VALENCE:
        _ATOM_SYMBOLS[_id] = (body, order)

_ATOM_TO_SYMBOL = {v: k for k, v in _ATOM_SYMBOLS.items()}
# digit value of every symbol when read as a payload; non-index symbols read as 0
_DIGIT = [0] * len(SYMBOLS)
for _k, _sym in enumerate(INDEX_TABLE):
    _DIGIT[SYMBOL_ID[_sym]] = _k
_DIGIT_SYMBOL = [SYMBOL_ID[s] for s in INDEX_TABLE]


class EncodeError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple = SYMBOLS
    index_table: tuple = INDEX_TABLE

    @property
    def size(self) -> int:
        return len(self.symbols)

    def id(self, symbol: str) -> int:
        return SYMBOL_ID[symbol]


ALPHABET = Alphabet()
ALPHABET_SIZE = len(SYMBOLS)


def tokenize(text: str) -> list:
    """Split ``"[C][=O]..."`` into symbol ids. Unknown symbols raise."""
    ids = []
    i = 0
    text = text.strip()
    while i < len(text):
        if text[i] != "[":
            raise ValueError(f"bad SELFIES text at {i}: {text!r}")
        j = text.index("]", i)
        sym = text[i : j + 1]
        if sym not in SYMBOL_ID:
            raise ValueError(f"unknown symbol {sym}")
        ids.append(SYMBOL_ID[sym])
        i = j + 1
    return ids


def to_text(ids, strip_padding: bool = True) -> str:
    ids = list(ids)
    if strip_padding:
        while ids and ids[-1] == NOP:
            ids.pop()
    return "".join(SYMBOLS[i] for i in ids)


def pad(ids, length: int = DEFAULT_LENGTH) -> tuple:
    ids = list(ids)
    if len(ids) > length:
        raise EncodeError(f"string needs {len(ids)} symbols, limit is {length}")
    return tuple(ids + [NOP] * (length - len(ids)))


# ---------------------------------------------------------------------------
# decoding


class _Derivation:
    def __init__(self, ids):
        self.ids = list(ids)
        self.atoms = []
        self.cap = []
        self.bonds = {}

    def add_atom(self, element, order, current):
        """Returns the new atom index, or None when ``current`` is saturated."""
        if current is None:
            self.atoms.append(element)
            self.cap.append(MAX_VALENCE[element])
            return len(self.atoms) - 1
        if self.cap[current] == 0:
            return None
        e = min(order, self.cap[current], MAX_VALENCE[element])
        self.atoms.append(element)
        self.cap.append(MAX_VALENCE[element] - e)
        self.cap[current] -= e
        new = len(self.atoms) - 1
        self.bonds[(current, new)] = e
        return new

    def read_number(self, pos, end, ndigits):
        if pos + ndigits > end:
            return None, end
        q = 0
        for k in range(ndigits):
            q = q * 16 + _DIGIT[self.ids[pos + k]]
        return q, pos + ndigits

    def derive(self, pos, end, current):
        """Derive symbols ``ids[pos:end]`` rooted at ``current``."""
        while pos < end:
            sym = self.ids[pos]
            pos += 1
            if sym in _ATOM_SYMBOLS:
                element, order = _ATOM_SYMBOLS[sym]
                new = self.add_atom(element, order, current)
                if new is None:
                    return  # saturated: the rest of this derivation is ignored
                current = new
            elif sym == BRANCH1 or sym == BRANCH2:
                q, pos = self.read_number(pos, end, 1 if sym == BRANCH1 else 2)
                if q is None:
                    return
                stop = min(pos + q + 1, end)
                if current is not None and self.cap[current] > 1:
                    self.derive(pos, stop, current)
                pos = stop
            elif sym == RING1 or sym == RING2:
                q, pos = self.read_number(pos, end, 1 if sym == RING1 else 2)
                if q is None:
                    return
                if current is None:
                    continue
                target = current - (q + 1)
                if target < 0:
                    continue
                key = (target, current)
                if key in self.bonds or self.cap[current] < 1 or self.cap[target] < 1:
                    continue
                self.bonds[key] = 1
                self.cap[current] -= 1
                self.cap[target] -= 1
            # [nop] is ignored


def decode(ids) -> MolGraph:
    """Decode a symbol-id sequence (or SELFIES text) into a valid MolGraph."""
    if isinstance(ids, str):
        ids = tokenize(ids)
    d = _Derivation(ids)
    d.derive(0, len(d.ids), None)
    if not d.atoms:
        return MolGraph(("C",), ())
    bonds = tuple((a, b, o) for (a, b), o in d.bonds.items())
    return MolGraph(tuple(d.atoms), bonds)


# ---------------------------------------------------------------------------
# encoding


def _digits(q: int, ndigits: int) -> list:
    out = []
    for _ in range(ndigits):
        out.append(_DIGIT_SYMBOL[q % 16])
        q //= 16
    return out[::-1]


def can_receive(element: str, order: int) -> bool:
    return (element, order) in _ATOM_TO_SYMBOL


def _spanning_tree(graph: MolGraph, order: list):
    """Root and spanning-tree edges for the encoder walk.

    Every multiple bond has to be a tree edge (ring closures are single bonds),
    and it must point at an atom that has a bonded symbol (there is no
    ``[=P]``, ``[#P]`` or ``[#S]``). Multiple-bond components are grown as a
    unit from an admissible entry atom; components are joined by single bonds
    picked in canonical order.
    """
    n = len(graph.atoms)
    rank = {atom: k for k, atom in enumerate(order)}
    comp = list(range(n))

    def find(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    multi_adj = {v: [] for v in range(n)}
    for a, b, o in graph.bonds:
        if o > 1:
            ra, rb = find(a), find(b)
            if ra == rb:
                raise EncodeError("multiple bonds form a cycle; not expressible")
            comp[ra] = rb
            multi_adj[a].append((b, o))
            multi_adj[b].append((a, o))

    def enter(w):
        """Multiple-bond edges reached from ``w``, or None if one is unexpressible."""
        edges, seen, queue = [], {w}, [w]
        for v in queue:
            for u, o in multi_adj[v]:
                if u in seen:
                    continue
                if not can_receive(graph.atoms[u], o):
                    return None
                seen.add(u)
                edges.append((min(u, v), max(u, v)))
                queue.append(u)
        return edges, seen

    singles = sorted(
        ((a, b) for a, b, o in graph.bonds if o == 1),
        key=lambda e: tuple(sorted((rank[e[0]], rank[e[1]]))),
    )
    for root in order:
        entered = enter(root)
        if entered is None:
            continue
        tree = set(entered[0])
        stamp = {v: k for k, v in enumerate(sorted(entered[1], key=rank.get))}
        grown = True
        while grown and len(stamp) < n:
            # depth first: extend from the most recently reached atom that can grow
            grown = False
            best = None
            for a, b in singles:
                if (a in stamp) == (b in stamp):
                    continue
                v, w = (a, b) if a in stamp else (b, a)
                if best is not None and stamp[v] <= best[0]:
                    continue
                entered = enter(w)
                if entered is not None:
                    best = (stamp[v], (a, b), entered)
            if best is not None:
                _, edge, (edges, seen) = best
                tree.add(edge)
                tree.update(edges)
                for v in sorted(seen, key=rank.get):
                    stamp.setdefault(v, len(stamp))
                grown = True
        visited = stamp
        if len(visited) == n:
            return root, tree
    raise EncodeError("no traversal expresses every multiple bond")


def encode(graph: MolGraph, length: int = DEFAULT_LENGTH) -> tuple:
    """Encode a valid connected graph to a padded symbol-id tuple."""
    for el in graph.atoms:
        if el not in MAX_VALENCE:
            raise EncodeError(f"unsupported element {el!r}")
    if not graph.atoms:
        raise EncodeError("empty graph")
    order = canonical_order(graph)
    rank = {atom: k for k, atom in enumerate(order)}
    root, tree = _spanning_tree(graph, order)
    adj = graph.adjacency

    # pre-order numbering of the tree walk == derivation order in the decoder
    children = {}
    position = {}
    stack = [root]
    visited = {root}
    walk = []
    while stack:
        v = stack.pop()
        walk.append(v)
        kids = [
            (u, bo)
            for u, bo in sorted(adj[v], key=lambda t: rank[t[0]])
            if u not in visited and (min(u, v), max(u, v)) in tree
        ]
        for u, _ in kids:
            visited.add(u)
        children[v] = kids
        stack.extend(u for u, _ in reversed(kids))
    if len(walk) != len(graph.atoms):
        raise EncodeError("graph is not connected")
    for k, v in enumerate(walk):
        position[v] = k

    def emit(v, bond_order, out):
        out.append(_ATOM_TO_SYMBOL[(graph.atoms[v], bond_order)])
        for u, bo in sorted(adj[v], key=lambda t: position[t[0]]):
            if position[u] < position[v] and (min(u, v), max(u, v)) not in tree:
                offset = position[v] - position[u] - 1
                if offset < 16:
                    out.append(RING1)
                    out.extend(_digits(offset, 1))
                elif offset < 256:
                    out.append(RING2)
                    out.extend(_digits(offset, 2))
                else:
                    raise EncodeError("ring closure offset too large")
        kids = children[v]
        for u, bo in kids[:-1]:
            body = []
            emit(u, bo, body)
            q = len(body) - 1
            if q < 16:
                out.append(BRANCH1)
                out.extend(_digits(q, 1))
            elif q < 256:
                out.append(BRANCH2)
                out.extend(_digits(q, 2))
            else:
                raise EncodeError("branch too long")
            out.extend(body)
        if kids:
            emit(kids[-1][0], kids[-1][1], out)

    out = []
    emit(root, 1, out)
    return pad(out, length)


# ---------------------------------------------------------------------------
# random strings and corpora


def random_string(seed: int, length: int = DEFAULT_LENGTH) -> tuple:
    rng = random.Random(seed)
    return tuple(rng.randrange(ALPHABET_SIZE) for _ in range(length))


def read_corpus(path, length: int = DEFAULT_LENGTH) -> list:
    """Read a line-delimited SELFIES file into padded id tuples."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            out.append(pad(tokenize(line), length))
    return out


def write_corpus(path, strings) -> None:
    Path(path).write_text("".join(to_text(s) + "\n" for s in strings))
