"""Reverse optimization: gradient descent on the latent vector against frozen
property predictors, optionally holding masked symbol positions fixed."""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import selfies
from .molgraph import MolGraph, canonical_key
from .predictor import PropertyPredictor
from .tensor import (
    DTYPE,
    AdamState,
    Tensor,
    adam_step,
    as_tensor,
    mul,
    no_grad,
    parameter,
    reshape,
    scale,
    square,
    tsum,
)
from .vae import VaeModel, argmax_symbols, sample_latents

log = logging.getLogger(__name__)

DIRECTIONS = ("maximize", "minimize", "target")


@dataclass
class ObjectiveTerm:
    """One weighted predictor. ``target`` terms score ``-(g - target)^2``."""

    predictor: PropertyPredictor
    weight: float = 1.0
    direction: str = "maximize"
    target: float | None = None

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if not np.isfinite(self.weight):
            raise ValueError("objective weights must be finite")
        if self.direction == "target" and self.target is None:
            raise ValueError("target direction needs a target value")


@dataclass
class Objective:
    terms: list
    steps: int = 1000
    lr: float = 0.1
    restarts: int = 1

    def __post_init__(self):
        if not self.terms:
            raise ValueError("an objective needs at least one term")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


@dataclass
class SubstructureMask:
    mask: np.ndarray
    anchor: np.ndarray
    weight: float = 1000.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=DTYPE)
        self.anchor = np.asarray(self.anchor, dtype=DTYPE)
        if self.mask.shape != self.anchor.shape or self.mask.ndim not in (2, 3):
            raise ValueError(f"mask {self.mask.shape} and anchor {self.anchor.shape} must be equal n x d")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask entries must be 0 or 1")

    @property
    def positions(self) -> list:
        if self.mask.ndim == 3:
            raise ValueError("positions is defined for a single mask")
        return [int(i) for i in np.flatnonzero(self.mask.any(axis=1))]

    def retained(self, symbols) -> bool:
        """Whether ``symbols`` match the anchor's argmax at every masked position."""
        anchor = self.anchor_symbols()
        return all(symbols[i] == anchor[i] for i in self.positions)

    def anchor_symbols(self) -> tuple:
        return argmax_symbols(self.anchor)


@dataclass
class OptimizationTrace:
    """Per-step record of one run; entry 0 is the initialization."""

    z: np.ndarray
    loss: np.ndarray
    strings: list
    predictions: np.ndarray
    aborted: bool = False
    _mols: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.loss)

    @property
    def best_index(self) -> int:
        """Step with the lowest objective loss."""
        return int(np.nanargmin(self.loss))

    def molecule(self, t: int) -> MolGraph:
        s = self.strings[t]
        if s not in self._mols:
            self._mols[s] = selfies.decode(s)
        return self._mols[s]

    def molecules(self) -> list:
        return [self.molecule(t) for t in range(len(self))]

    def distinct_steps(self) -> list:
        """First step index of each distinct decoded string, in order."""
        seen, out = set(), []
        for t, s in enumerate(self.strings):
            if s not in seen:
                seen.add(s)
                out.append(t)
        return out


@contextlib.contextmanager
def frozen(*modules):
    """Turn off weight gradients for the duration; restores the previous flags."""
    saved = []
    for mod in modules:
        if mod is None:
            continue
        for p in mod.parameters():
            saved.append((p, p.requires_grad))
            p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad = flag


def mask_penalty(y, mask: SubstructureMask) -> Tensor:
    """``weight * sum((M * (y - anchor))^2)`` per batch row.

    A mask may carry a leading batch axis to give each row its own anchor.
    """
    y = as_tensor(y)
    if y.data.ndim == 2:
        y = reshape(y, (1,) + y.shape)
    if y.shape[1:] != mask.mask.shape[-2:] or (mask.mask.ndim == 3 and mask.mask.shape[0] != y.shape[0]):
        raise ValueError(f"decoded shape {y.shape} does not fit mask shape {mask.mask.shape}")
    diff = mul(y - as_tensor(mask.anchor, y.dtype), as_tensor(mask.mask, y.dtype))
    return scale(tsum(tsum(square(diff), -1), -1), mask.weight)


def masked_loss(z, mask: SubstructureMask, vae: VaeModel) -> Tensor:
    return mask_penalty(vae.decode(z), mask)


def build_mask(x_start, fixed_positions, vae: VaeModel, weight: float = 1000.0) -> SubstructureMask:
    """Anchor is ``decode(mu(x_start))``; every symbol column is fixed at each listed position."""
    n, d = vae.dims.n, vae.dims.d
    ids = selfies.tokenize(x_start) if isinstance(x_start, str) else list(x_start)
    ids = selfies.pad(ids, n)
    m = np.zeros((n, d), dtype=DTYPE)
    for i in fixed_positions:
        if not 0 <= i < n:
            raise ValueError(f"fixed position {i} outside 0..{n - 1}")
        m[i, :] = 1
    mu, _ = vae.encode(np.asarray(ids))
    anchor = vae.decode_numpy(mu)[0]
    return SubstructureMask(m, anchor, weight)


def stack_masks(masks) -> SubstructureMask:
    """Combine per-run masks (same weight) into one batched mask."""
    masks = list(masks)
    if len({m.weight for m in masks}) != 1:
        raise ValueError("stacked masks must share a weight")
    return SubstructureMask(np.stack([m.mask for m in masks]), np.stack([m.anchor for m in masks]),
                            masks[0].weight)


def _scores(z: Tensor, terms, vae: VaeModel, mask: SubstructureMask | None):
    """Per-row objective loss and raw predictions for a latent batch."""
    need_decode = mask is not None or any(t.predictor.mode == "decoded" for t in terms)
    y = vae.decode(z) if need_decode else None
    flat = reshape(y, (y.shape[0], -1)) if y is not None else None
    total = None
    preds = []
    for t in terms:
        g = t.predictor(flat if t.predictor.mode == "decoded" else z)
        preds.append(g.data)
        if t.direction == "maximize":
            s = g
        elif t.direction == "minimize":
            s = -g
        else:
            s = -square(g - t.target)
        contrib = scale(s, -t.weight)
        total = contrib if total is None else total + contrib
    if mask is not None:
        total = total + mask_penalty(y, mask)
    return total, y, np.stack(preds, axis=-1)


def reverse_optimize(z0, obj: Objective, vae: VaeModel, mask: SubstructureMask | None = None,
                     record_z: bool = True) -> list:
    """Adam on ``z`` for ``obj.steps`` steps; one trace per row of ``z0``.

    Rows are independent (the decoder runs in eval mode), so a batch of
    restarts gives the same per-row result as running them one by one.
    A row whose loss turns NaN stops there and is marked aborted.
    """
    z0 = np.asarray(z0, dtype=vae.out.weight.dtype)
    single = z0.ndim == 1
    if single:
        z0 = z0[None, :]
    if z0.shape[1] != vae.dims.m:
        raise ValueError(f"latent size {z0.shape[1]} != {vae.dims.m}")
    vae.eval()
    B, T = z0.shape[0], obj.steps + 1
    z = parameter(z0.copy())
    state = AdamState(lr=obj.lr)
    alive = np.ones(B, dtype=bool)
    ends = np.full(B, T)
    zs = np.zeros((T, B, z0.shape[1]), dtype=z0.dtype) if record_z else None
    losses = np.full((T, B), np.nan)
    preds = np.full((T, B, len(obj.terms)), np.nan)
    strings = [[None] * B for _ in range(T)]

    predictors = [t.predictor for t in obj.terms]
    with frozen(vae, *predictors):
        for t in range(T):
            loss, y, p = _scores(z, obj.terms, vae, mask)
            row_loss = loss.data.astype(np.float64)
            bad = alive & ~np.isfinite(row_loss)
            if bad.any():
                log.warning("NaN loss at step %d in %d run(s); stopping them", t, int(bad.sum()))
                ends[bad] = t
                alive &= ~bad
            if y is None:
                with no_grad():
                    y = vae.decode(z)
            syms = argmax_symbols(y.data)
            for b in np.flatnonzero(alive):
                strings[t][b] = syms[b]
            if record_z:
                zs[t, alive] = z.data[alive]
            losses[t, alive] = row_loss[alive]
            preds[t, alive] = p[alive]
            if t == T - 1 or not alive.any():
                break
            z.grad = None
            tsum(loss).backward()
            keep = z.data.copy()
            adam_step([z], state)
            z.data[~alive] = keep[~alive]

    traces = []
    for b in range(B):
        e = ends[b]
        traces.append(OptimizationTrace(
            zs[:e, b].copy() if record_z else np.zeros((0, z0.shape[1])),
            losses[:e, b].copy(),
            [strings[t][b] for t in range(e)],
            preds[:e, b].copy(),
            aborted=e < T,
        ))
    return traces[0] if single else traces


def best_by_oracle(trace: OptimizationTrace, oracle, keep=None):
    """Highest-oracle molecule over the trace's distinct decoded strings.

    ``keep`` optionally filters candidate molecules. Returns ``(step, graph,
    score)`` or ``None`` when no candidate qualifies.
    """
    best = None
    for t in trace.distinct_steps():
        g = trace.molecule(t)
        if keep is not None and not keep(g):
            continue
        s = oracle(g)
        if best is None or oracle.better(s, best[2]):
            best = (t, g, s)
    return best


def multi_start(obj: Objective, vae: VaeModel, restarts: int | None = None, seed: int = 0,
                oracle=None, batch_size: int = 256) -> list:
    """Independent runs from i.i.d. standard-normal starts.

    Each run contributes its best molecule: by oracle value when ``oracle`` is
    given, otherwise the lowest-loss step. Results are deduplicated by
    canonical key and returned as ``(graph, scores)`` sorted best first, ties
    by key. ``scores`` holds ``oracle`` (when given), ``predicted`` and ``run``.
    """
    restarts = obj.restarts if restarts is None else restarts
    z0 = sample_latents(restarts, vae.dims.m, seed)
    found = {}
    for start in range(0, restarts, batch_size):
        traces = reverse_optimize(z0[start : start + batch_size], obj, vae, record_z=False)
        for k, tr in enumerate(traces):
            run = start + k
            if oracle is not None:
                t, g, score = best_by_oracle(tr, oracle)
            else:
                t = tr.best_index
                g, score = tr.molecule(t), None
            key = canonical_key(g)
            scores = {"predicted": tr.predictions[t].tolist(), "run": run}
            if oracle is not None:
                scores["oracle"] = score
            if key not in found:
                found[key] = (g, scores)
    items = sorted(found.items(), key=lambda kv: kv[0])
    if oracle is not None:
        items.sort(key=lambda kv: -oracle.sign * kv[1][1]["oracle"])
    return [v for _, v in items]
