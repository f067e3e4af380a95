"""Property oracles: surrogate scorers, an external-process client, docking
free-energy conversions and a persistent score cache.

The surrogate logP/SA/QED functions are simple, fixed-constant stand-ins for
the usual cheminformatics implementations. Exact implementations can be
plugged in as external processes speaking the JSON-lines protocol.
"""

from __future__ import annotations

import json
import logging
import math
import shlex
import struct
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .molgraph import MolGraph, canonical_key, ring_count, ring_atoms, ring_sizes, to_smiles

log = logging.getLogger(__name__)

SURROGATE_VERSION = 1

# contributions in tenths, so sums are exact
LOGP_TENTHS = {"C": 2, "N": -6, "O": -4, "F": 1, "Cl": 6, "Br": 9, "S": 4, "P": 1}
RING_ATOM_LOGP_TENTHS = -1

GAS_CONSTANT = 0.0019872  # kcal / (mol K)
DEFAULT_TEMPERATURE = 298.15


class OracleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# surrogates


def logp_surrogate(g: MolGraph) -> float:
    tenths = sum(LOGP_TENTHS[el] for el in g.atoms)
    tenths += RING_ATOM_LOGP_TENTHS * len(ring_atoms(g))
    return tenths / 10


def sa_surrogate(g: MolGraph) -> float:
    """Synthetic accessibility stand-in on a 1 (easy) to 10 (hard) scale."""
    sizes = ring_sizes(g)
    hundredths = (
        100
        + 5 * max(0, len(g.atoms) - 20)
        + 30 * len(sizes)
        + 100 * sum(1 for s in sizes if s > 8)
        + 20 * sum(1 for i in range(len(g.atoms)) if g.degree(i) >= 4)
    )
    return min(max(hundredths, 100), 1000) / 100


def qed_surrogate(g: MolGraph) -> float:
    heavy = len(g.atoms)
    size_term = math.exp(-((heavy - 23) ** 2) / (2 * 8**2))
    logp_term = math.exp(-((logp_surrogate(g) - 2.5) ** 2) / (2 * 2**2))
    ring_term = math.exp(-((ring_count(g) - 2) ** 2) / (2 * 1.5**2))
    return (size_term * logp_term * ring_term) ** (1 / 3)


def plogp(g: MolGraph) -> float:
    """Surrogate logP minus surrogate SA minus the count of rings above six atoms."""
    large = sum(1 for s in ring_sizes(g) if s > 6)
    return logp_surrogate(g) - sa_surrogate(g) - large


def heavy_atom_count(g: MolGraph) -> float:
    return float(len(g.atoms))


# ---------------------------------------------------------------------------
# oracle objects


@dataclass(frozen=True)
class PropertyOracle:
    name: str
    fn: Callable
    direction: str = "maximize"
    kind: str = "internal"

    def __post_init__(self):
        if self.direction not in ("maximize", "minimize"):
            raise ValueError(f"direction must be maximize or minimize, got {self.direction}")

    def __call__(self, g: MolGraph) -> float:
        return float(self.fn(g))

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "maximize" else -1.0

    def better(self, a: float, b: float) -> bool:
        """True when score ``a`` is strictly better than ``b``."""
        return a > b if self.direction == "maximize" else a < b


INTERNAL_ORACLES = {
    "logp": PropertyOracle("logp", logp_surrogate),
    "sa": PropertyOracle("sa", sa_surrogate, "minimize"),
    "qed": PropertyOracle("qed", qed_surrogate),
    "plogp": PropertyOracle("plogp", plogp),
    "heavy_atoms": PropertyOracle("heavy_atoms", heavy_atom_count),
}


def get_oracle(name: str) -> PropertyOracle:
    try:
        return INTERNAL_ORACLES[name]
    except KeyError:
        raise ValueError(f"unknown oracle {name!r}; known: {sorted(INTERNAL_ORACLES)}") from None


# ---------------------------------------------------------------------------
# docking free energies


def kd_from_dg(dg: float, temperature: float = DEFAULT_TEMPERATURE) -> float:
    """Dissociation constant in nM from a binding free energy in kcal/mol.

    Uses ``K_D = exp(dG / RT)`` mol/L, so favourable (negative) free energies
    give sub-molar constants.
    """
    return math.exp(dg / (GAS_CONSTANT * temperature)) * 1e9


def combine_poses(dgs, temperature: float = DEFAULT_TEMPERATURE) -> float:
    """Boltzmann-combine per-pose free energies: ``-RT ln sum exp(-dG_i / RT)``."""
    dgs = [float(x) for x in dgs]
    if not dgs:
        raise ValueError("combine_poses needs at least one pose")
    rt = GAS_CONSTANT * temperature
    best = min(dgs)
    return best - rt * math.log(sum(math.exp(-(x - best) / rt) for x in dgs))


# ---------------------------------------------------------------------------
# cache


class OracleCache:
    """Append-only on-disk map ``(canonical key, oracle name) -> float64``.

    Each record is ``u32 len, key, u32 len, name, f64 score`` (little-endian).
    """

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._data = {}
        if self.path and self.path.exists():
            self._load()

    def _load(self):
        raw = self.path.read_bytes()
        pos = 0
        while pos < len(raw):
            try:
                (klen,) = struct.unpack_from("<I", raw, pos)
                key = raw[pos + 4 : pos + 4 + klen].decode()
                pos += 4 + klen
                (nlen,) = struct.unpack_from("<I", raw, pos)
                name = raw[pos + 4 : pos + 4 + nlen].decode()
                pos += 4 + nlen
                (score,) = struct.unpack_from("<d", raw, pos)
                pos += 8
            except struct.error:
                log.warning("oracle cache %s has a truncated tail; ignoring it", self.path)
                break
            self._data[(key, name)] = score

    def get(self, key: str, name: str):
        with self._lock:
            return self._data.get((key, name))

    def put(self, key: str, name: str, score: float) -> None:
        with self._lock:
            if (key, name) in self._data:
                return
            self._data[(key, name)] = score
            if self.path:
                k, n = key.encode(), name.encode()
                record = struct.pack("<I", len(k)) + k + struct.pack("<I", len(n)) + n
                record += struct.pack("<d", score)
                with open(self.path, "ab") as fh:
                    fh.write(record)

    def __len__(self):
        return len(self._data)


def cached(oracle: PropertyOracle, cache: OracleCache) -> PropertyOracle:
    def fn(g):
        key = canonical_key(g)
        hit = cache.get(key, oracle.name)
        if hit is not None:
            return hit
        score = oracle(g)
        cache.put(key, oracle.name, score)
        return score

    return PropertyOracle(oracle.name, fn, oracle.direction, oracle.kind)


# ---------------------------------------------------------------------------
# external process protocol


class ScoreBatch(list):
    """Scores in request order; failed items are ``None`` with a reason in ``errors``."""

    def __init__(self, values, errors):
        super().__init__(values)
        self.errors = errors


def external_score_batch(mols, command, timeout: float = 60.0, max_in_flight: int = 8,
                         stderr=subprocess.DEVNULL) -> ScoreBatch:
    """Score molecules with a child process speaking JSON lines.

    Requests ``{"id": int, "smiles": str}`` are written to the child's stdin,
    at most ``max_in_flight`` unanswered at a time. Responses
    ``{"id": int, "score": float}`` may arrive in any order. Items that time
    out, are never answered, or come back malformed are reported as failures
    without failing the batch. Spawn failure raises :class:`OracleError`.
    """
    mols = list(mols)
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    try:
        proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=stderr,
            text=True, bufsize=1,
        )
    except OSError as exc:
        raise OracleError(f"could not start oracle {argv!r}: {exc}") from exc

    results = {}
    errors = {}
    pending = {}  # id -> deadline
    cond = threading.Condition()
    state = {"eof": False}

    def reader():
        for line in proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                ident = msg["id"]
            except (ValueError, KeyError, TypeError):
                log.warning("oracle sent an unparseable line: %r", line[:200])
                continue
            with cond:
                if not isinstance(ident, int) or ident not in pending:
                    log.warning("oracle answered unknown or expired id %r", ident)
                    continue
                score = msg.get("score") if isinstance(msg, dict) else None
                if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
                    errors[ident] = f"malformed score {score!r}"
                else:
                    results[ident] = float(score)
                del pending[ident]
                cond.notify_all()
        with cond:
            state["eof"] = True
            cond.notify_all()

    thread = threading.Thread(target=reader, daemon=True)
    thread.start()

    def expire_locked(now):
        for ident, deadline in list(pending.items()):
            if now >= deadline:
                errors[ident] = "timeout"
                del pending[ident]

    try:
        for ident, g in enumerate(mols):
            with cond:
                while len(pending) >= max_in_flight and not state["eof"]:
                    expire_locked(time.monotonic())
                    if len(pending) < max_in_flight:
                        break
                    cond.wait(timeout=min(pending.values()) - time.monotonic() + 1e-3)
                if state["eof"]:
                    break
                pending[ident] = time.monotonic() + timeout
            try:
                proc.stdin.write(json.dumps({"id": ident, "smiles": to_smiles(g)}) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError):
                break
        try:
            proc.stdin.close()
        except (BrokenPipeError, OSError):
            pass
        with cond:
            while pending and not state["eof"]:
                expire_locked(time.monotonic())
                if pending:
                    cond.wait(timeout=max(1e-3, min(pending.values()) - time.monotonic()))
    finally:
        if proc.poll() is None:
            try:
                proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        thread.join(timeout=2)

    for ident in range(len(mols)):
        if ident not in results and ident not in errors:
            errors[ident] = "no response"
    if errors:
        log.warning("external oracle: %d of %d items failed", len(errors), len(mols))
    return ScoreBatch([results.get(i) for i in range(len(mols))], errors)


@dataclass
class ExternalOracle:
    """An external scorer usable wherever a :class:`PropertyOracle` is."""

    name: str
    command: str
    direction: str = "minimize"
    timeout: float = 60.0
    max_in_flight: int = 8
    cache: OracleCache | None = None
    kind: str = "external"

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "maximize" else -1.0

    def better(self, a, b):
        return a > b if self.direction == "maximize" else a < b

    def score_batch(self, mols) -> ScoreBatch:
        mols = list(mols)
        values = [None] * len(mols)
        todo = []
        for i, g in enumerate(mols):
            hit = self.cache.get(canonical_key(g), self.name) if self.cache is not None else None
            if hit is None:
                todo.append(i)
            else:
                values[i] = hit
        errors = {}
        if todo:
            batch = external_score_batch([mols[i] for i in todo], self.command,
                                         self.timeout, self.max_in_flight)
            for k, i in enumerate(todo):
                values[i] = batch[k]
                if batch[k] is None:
                    errors[i] = batch.errors[k]
                elif self.cache is not None:
                    self.cache.put(canonical_key(mols[i]), self.name, batch[k])
        return ScoreBatch(values, errors)

    def __call__(self, g: MolGraph) -> float:
        out = self.score_batch([g])
        if out[0] is None:
            raise OracleError(f"{self.name}: {out.errors.get(0)}")
        return out[0]
