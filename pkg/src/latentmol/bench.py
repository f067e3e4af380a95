"""Benchmark tasks and report writing.

Every task returns a :class:`TaskReport`. Reports are a pure function of
(checkpoints, seeds, config): wall-clock time is kept out of the report body
and written to a separate timing file.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import selfies
from .molgraph import canonical_key, diversity, fingerprint, tanimoto, to_smiles, validate
from .oracles import (
    PropertyOracle,
    get_oracle,
    kd_from_dg,
    qed_surrogate,
    sa_surrogate,
)
from .optimize import (
    Objective,
    ObjectiveTerm,
    best_by_oracle,
    build_mask,
    reverse_optimize,
    stack_masks,
)
from .predictor import PredictorConfig, gen_training_set, train_predictor
from .refine import FilterPolicy, filter_molecules, finetune
from .vae import VaeModel, sample_latents, sample_random

log = logging.getLogger(__name__)


@dataclass
class TaskReport:
    task: str
    config: dict
    metrics: dict
    molecules: list = field(default_factory=list)
    plots: dict = field(default_factory=dict)
    seconds: float = 0.0
    run_id: str = ""
    rates: dict = field(default_factory=dict)  # hardware-dependent; timing sidecar only

    def __post_init__(self):
        for k, v in self.metrics.items():
            if not np.isfinite(v):
                raise ValueError(f"metric {k} is not finite: {v}")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "run_id": self.run_id,
            "config": self.config,
            "metrics": self.metrics,
            "molecules": self.molecules,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        score_names = sorted({k for mol in self.molecules for k in mol["scores"]})
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "key", "smiles", *score_names])
        for rank, mol in enumerate(self.molecules, 1):
            w.writerow([rank, mol["key"], mol["smiles"], *(mol["scores"].get(s, "") for s in score_names)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"task: {self.task}", f"run:  {self.run_id}", "", "metrics"]
        width = max((len(k) for k in self.metrics), default=0)
        for k in sorted(self.metrics):
            lines.append(f"  {k.ljust(width)}  {self.metrics[k]:.4f}")
        if self.molecules:
            lines += ["", "molecules"]
            for rank, mol in enumerate(self.molecules, 1):
                scores = " ".join(f"{k}={v:.4g}" for k, v in sorted(mol["scores"].items()))
                lines.append(f"  {rank:>3}  {mol['smiles']}  {scores}")
        return "\n".join(lines) + "\n"

    def write(self, workdir, stem: str) -> dict:
        """Write text, CSV, JSON, plot data and the timing sidecar; returns the paths."""
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": workdir / f"{stem}.json",
            "csv": workdir / f"{stem}.csv",
            "text": workdir / f"{stem}.txt",
            "plots": workdir / f"{stem}.plots.json",
            "timing": workdir / f"{stem}.timing.json",
        }
        paths["json"].write_text(self.to_json())
        paths["csv"].write_text(self.to_csv())
        paths["text"].write_text(self.to_text())
        paths["plots"].write_text(json.dumps(self.plots, indent=2, sort_keys=True) + "\n")
        timing = {"seconds": self.seconds, **self.rates}
        paths["timing"].write_text(json.dumps(timing, sort_keys=True) + "\n")
        return paths


def molecule_entry(g, scores: dict) -> dict:
    return {"key": canonical_key(g), "smiles": to_smiles(g), "scores": dict(scores)}


def histogram(values, bins: int = 20) -> dict:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {"counts": [], "edges": []}
    counts, edges = np.histogram(values, bins=bins)
    return {"counts": counts.tolist(), "edges": edges.tolist()}


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        report = fn(*args, **kwargs)
        report.seconds = time.perf_counter() - t0
        return report

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _unique_best(items, oracle, k=None):
    """Dedupe ``(graph, score)`` pairs by canonical key, best first, ties by key."""
    seen = {}
    for g, s in items:
        key = canonical_key(g)
        if key not in seen or oracle.better(s, seen[key][1]):
            seen[key] = (g, s)
    ranked = sorted(seen.items(), key=lambda kv: (-oracle.sign * kv[1][1], kv[0]))
    out = [v for _, v in ranked]
    return out if k is None else out[:k]


def random_baseline(vae: VaeModel, oracle, count: int, seed: int) -> list:
    """Oracle values of ``count`` decoded standard-normal samples."""
    return [(g, oracle(g)) for g in sample_random(vae, count, seed)]


# ---------------------------------------------------------------------------
# tasks


@_timed
def task_random_generation(vae: VaeModel, k: int, seed: int, training_set=(),
                           diversity_sample: int = 1000) -> TaskReport:
    """Validity, uniqueness, diversity and novelty of ``k`` prior samples."""
    graphs = sample_random(vae, k, seed)
    keys = [canonical_key(g) for g in graphs]
    train_keys = {canonical_key(selfies.decode(s)) for s in training_set}
    valid = [g for g in graphs if validate(g)]
    metrics = {
        "valid_pct": 100.0 * len(valid) / max(k, 1),
        "unique_at_1k_pct": 100.0 * len(set(keys[:1000])) / max(min(k, 1000), 1),
    }
    if k >= 10000:
        metrics["unique_at_10k_pct"] = 100.0 * len(set(keys[:10000])) / 10000
    else:
        warnings.warn(f"k={k} < 10000; unique@10k omitted", RuntimeWarning)
    if len(valid) >= 2:
        metrics["diversity"] = diversity(valid[:diversity_sample])
    if train_keys:
        valid_keys = [canonical_key(g) for g in valid]
        metrics["novel_pct"] = 100.0 * sum(key not in train_keys for key in valid_keys) / max(len(valid), 1)
    config = {"k": k, "seed": seed, "training_set_size": len(training_set), "diversity_sample": diversity_sample}
    return TaskReport("random_generation", config, metrics)


@_timed
def task_maximize(vae: VaeModel, objective: Objective, oracle, restarts: int, seed: int,
                  k: int = 3, batch_size: int = 256) -> TaskReport:
    """Multi-start optimization, rescored by the oracle, top ``k`` versus an
    equal-budget random sample."""
    z0 = sample_latents(restarts, vae.dims.m, seed)
    found = []
    improved_oracle = improved_pred = 0
    sign = np.array([1.0 if t.direction != "minimize" else -1.0 for t in objective.terms])
    for start in range(0, restarts, batch_size):
        for tr in reverse_optimize(z0[start : start + batch_size], objective, vae, record_z=False):
            t, g, s = best_by_oracle(tr, oracle)
            found.append((g, s))
            if oracle.better(s, oracle(tr.molecule(0))):
                improved_oracle += 1
            best_pred = (tr.predictions * sign).sum(-1).max()
            if best_pred > (tr.predictions[0] * sign).sum():
                improved_pred += 1
    top = _unique_best(found, oracle, k)
    rand = _unique_best(random_baseline(vae, oracle, restarts, seed + 1), oracle, k)
    metrics = {
        "improved_oracle_pct": 100.0 * improved_oracle / restarts,
        "improved_predicted_pct": 100.0 * improved_pred / restarts,
    }
    for i, (_, s) in enumerate(top, 1):
        metrics[f"top{i}"] = s
    for i, (_, s) in enumerate(rand, 1):
        metrics[f"random_top{i}"] = s
    if top and rand:
        n = min(len(top), len(rand))
        metrics["lift_mean"] = float(np.mean([top[i][1] - rand[i][1] for i in range(n)]))
        metrics["lift_min"] = float(min(top[i][1] - rand[i][1] for i in range(n)))
    config = {"oracle": oracle.name, "restarts": restarts, "seed": seed, "k": k,
              "steps": objective.steps, "lr": objective.lr}
    mols = [molecule_entry(g, {oracle.name: s}) for g, s in top]
    return TaskReport("maximize", config, metrics, mols)


@_timed
def task_target_range(vae: VaeModel, predictor, oracle, count: int, seed: int,
                      lo: float = -2.5, hi: float = -2.0, steps: int = 1000, lr: float = 0.1,
                      batch_size: int = 256) -> TaskReport:
    """Push predicted values toward the middle of ``(lo, hi)``; success means
    the chosen molecule's oracle value lies strictly inside."""
    t0 = time.perf_counter()
    mid = (lo + hi) / 2
    obj = Objective([ObjectiveTerm(predictor, 1.0, "target", mid)], steps, lr)
    closeness = PropertyOracle(f"{oracle.name}_to_{mid}", lambda g: -(oracle(g) - mid) ** 2)
    z0 = sample_latents(count, vae.dims.m, seed)
    chosen = []
    for start in range(0, count, batch_size):
        for tr in reverse_optimize(z0[start : start + batch_size], obj, vae, record_z=False):
            _, g, _ = best_by_oracle(tr, closeness)
            chosen.append((g, oracle(g)))
    hits = [(g, v) for g, v in chosen if lo < v < hi]
    rate = len(hits) / max(time.perf_counter() - t0, 1e-9)
    rand_hits = [v for _, v in random_baseline(vae, oracle, count, seed + 1) if lo < v < hi]
    metrics = {
        "success_pct": 100.0 * len(hits) / max(count, 1),
        "random_success_pct": 100.0 * len(rand_hits) / max(count, 1),
    }
    unique_hits = {canonical_key(g): g for g, _ in hits}
    if len(unique_hits) >= 2:
        metrics["diversity"] = diversity([unique_hits[key] for key in sorted(unique_hits)])
    mols = [molecule_entry(g, {oracle.name: v}) for g, v in hits]
    mols = list({m["key"]: m for m in sorted(mols, key=lambda m: m["key"])}.values())
    mols.sort(key=lambda m: (abs(m["scores"][oracle.name] - mid), m["key"]))
    config = {"oracle": oracle.name, "lo": lo, "hi": hi, "count": count, "seed": seed, "steps": steps, "lr": lr}
    return TaskReport("target_range", config, metrics, mols, rates={"successes_per_second": rate})


@_timed
def task_similarity_constrained(vae: VaeModel, predictor, oracle, starts, deltas=(0.0, 0.2, 0.4, 0.6),
                                steps: int = 1000, lr: float = 0.1, batch_size: int = 256) -> TaskReport:
    """Optimize from encoded start molecules under a Tanimoto floor.

    For each start and floor the candidates are the start molecule and every
    trace molecule at least ``delta`` similar to it; the improvement is the
    best candidate's oracle value minus the start's, so it is never negative.
    A run succeeds at a floor when some trace molecule (step 0 included) clears it.
    """
    starts = [selfies.pad(s, vae.dims.n) for s in starts]
    start_graphs = [selfies.decode(s) for s in starts]
    start_fps = [fingerprint(g) for g in start_graphs]
    start_scores = [oracle(g) for g in start_graphs]
    obj = Objective([ObjectiveTerm(predictor, 1.0, "maximize" if oracle.sign > 0 else "minimize")], steps, lr)
    mu, _ = vae.encode(np.asarray(starts))
    improvements = {d: [] for d in deltas}
    success = {d: 0 for d in deltas}
    best_mols = []
    for b0 in range(0, len(starts), batch_size):
        traces = reverse_optimize(mu[b0 : b0 + batch_size], obj, vae, record_z=False)
        for k, tr in enumerate(traces):
            i = b0 + k
            cands = []
            for t in tr.distinct_steps():
                g = tr.molecule(t)
                cands.append((tanimoto(start_fps[i], fingerprint(g)), oracle(g), g))
            for d in deltas:
                ok = [(s, g) for sim, s, g in cands if sim >= d]
                if ok:
                    success[d] += 1
                best = start_scores[i]
                best_g = start_graphs[i]
                for s, g in ok:
                    if oracle.better(s, best):
                        best, best_g = s, g
                improvements[d].append(oracle.sign * (best - start_scores[i]))
                if d == deltas[0]:
                    best_mols.append(molecule_entry(best_g, {oracle.name: best, "start": start_scores[i]}))
    metrics = {}
    n = max(len(starts), 1)
    for d in deltas:
        arr = np.asarray(improvements[d])
        tag = f"{d:.1f}"
        metrics[f"improvement_mean@{tag}"] = float(arr.mean()) if arr.size else 0.0
        metrics[f"improvement_std@{tag}"] = float(arr.std()) if arr.size else 0.0
        metrics[f"success_pct@{tag}"] = 100.0 * success[d] / n
    config = {"oracle": oracle.name, "starts": len(starts), "deltas": list(deltas), "steps": steps, "lr": lr}
    return TaskReport("similarity_constrained", config, metrics, best_mols)


@_timed
def task_substructure(vae: VaeModel, predictor, oracle, starts, fixed_positions, direction: str,
                      steps: int = 1000, lr: float = 0.1, weight: float = 1000.0,
                      batch_size: int = 256) -> TaskReport:
    """Optimize each start with its masked positions held to the anchor.

    The reference molecule is the start's reconstruction (step 0). Among
    trace molecules that keep the masked symbols, the best oracle value is
    reported; ``retained`` checks the final iterate.
    """
    starts = [selfies.pad(s, vae.dims.n) for s in starts]
    obj = Objective([ObjectiveTerm(predictor, 1.0, direction)], steps, lr)
    sign = 1.0 if direction == "maximize" else -1.0
    deltas, retained, mols = [], [], []
    for b0 in range(0, len(starts), batch_size):
        chunk = starts[b0 : b0 + batch_size]
        masks = [build_mask(s, fixed_positions, vae, weight) for s in chunk]
        mu, _ = vae.encode(np.asarray(chunk))
        traces = reverse_optimize(mu, obj, vae, stack_masks(masks), record_z=False)
        for mask, tr in zip(masks, traces):
            ref = oracle(tr.molecule(0))
            best, best_g = ref, tr.molecule(0)
            for t in tr.distinct_steps():
                if not mask.retained(tr.strings[t]):
                    continue
                s = oracle(tr.molecule(t))
                if sign * s > sign * best:
                    best, best_g = s, tr.molecule(t)
            deltas.append(best - ref)
            retained.append(mask.retained(tr.strings[-1]))
            mols.append(molecule_entry(best_g, {oracle.name: best, "delta": best - ref}))
    metrics = {
        "delta_mean": float(np.mean(deltas)),
        "delta_min": float(np.min(deltas)),
        "delta_max": float(np.max(deltas)),
        "retained_pct": 100.0 * sum(retained) / len(retained),
    }
    config = {"oracle": oracle.name, "direction": direction, "starts": len(starts),
              "fixed_positions": sorted(fixed_positions), "steps": steps, "lr": lr, "weight": weight}
    return TaskReport("substructure", config, metrics, mols)


@dataclass
class AffinitySetup:
    """Predictors for the affinity task, trained once and reused."""

    affinity: object
    qed: object
    sa: object


def train_affinity_setup(vae: VaeModel, affinity_oracle, dataset_size: int, seed: int,
                         config: PredictorConfig = PredictorConfig()) -> AffinitySetup:
    preds = []
    for k, oracle in enumerate((affinity_oracle, get_oracle("qed"), get_oracle("sa"))):
        data = gen_training_set(vae, oracle, dataset_size, seed + k)
        if len(data) < 2:
            raise RuntimeError(f"oracle {oracle.name} scored fewer than 2 samples; is it reachable?")
        preds.append(train_predictor(data, "decoded", config, vae))
    return AffinitySetup(*preds)


@_timed
def task_affinity(vae: VaeModel, oracle, setup: AffinitySetup, mode: str, count: int, seed: int,
                  weights=(1.0, 1.0, 1.0), steps: int = 1000, lr: float = 0.1,
                  policy: FilterPolicy = FilterPolicy(), finetune_top: int = 10,
                  batch_size: int = 256) -> TaskReport:
    """Minimize predicted binding free energy, alone (``single``) or with QED
    and SA terms (``multi``, followed by filtering and fine-tuning)."""
    if mode not in ("single", "multi"):
        raise ValueError("mode must be single or multi")
    terms = [ObjectiveTerm(setup.affinity, weights[0], "minimize")]
    if mode == "multi":
        terms += [ObjectiveTerm(setup.qed, weights[1], "maximize"),
                  ObjectiveTerm(setup.sa, weights[2], "minimize")]
    obj = Objective(terms, steps, lr)
    z0 = sample_latents(count, vae.dims.m, seed)
    optimized = []
    for b0 in range(0, count, batch_size):
        for tr in reverse_optimize(z0[b0 : b0 + batch_size], obj, vae, record_z=False):
            optimized.append(tr.molecule(tr.best_index))
    before = sample_random(vae, count, seed + 1)

    def scores(graphs):
        batch = oracle.score_batch(graphs) if hasattr(oracle, "score_batch") else [oracle(g) for g in graphs]
        return [s for s in batch if s is not None]

    aff_before, aff_after = scores(before), scores(optimized)
    if not aff_after:
        raise RuntimeError(f"oracle {oracle.name} returned no scores")
    qed_before = [qed_surrogate(g) for g in before]
    qed_after = [qed_surrogate(g) for g in optimized]
    sa_before = [sa_surrogate(g) for g in before]
    sa_after = [sa_surrogate(g) for g in optimized]
    heavy_before = [len(g.atoms) for g in before]
    heavy_after = [len(g.atoms) for g in optimized]

    final = optimized
    metrics = {}
    if mode == "multi":
        survivors = filter_molecules(optimized, policy)
        metrics["filter_survivors"] = float(len(survivors))
        ranked = _unique_best([(g, s) for g, s in zip(survivors, scores(survivors))], oracle)
        final = [finetune(g, oracle) for g, _ in ranked[:finetune_top]]
    top = _unique_best([(g, s) for g, s in zip(final, oracle.score_batch(final) if hasattr(oracle, "score_batch")
                                                 else [oracle(g) for g in final]) if s is not None], oracle, 3)
    for i, (_, s) in enumerate(top, 1):
        metrics[f"top{i}_dg"] = s
        metrics[f"top{i}_kd_nm"] = kd_from_dg(s)
    for name, b, a in (("affinity", aff_before, aff_after), ("qed", qed_before, qed_after),
                       ("sa", sa_before, sa_after), ("heavy_atoms", heavy_before, heavy_after)):
        metrics[f"{name}_mean_before"] = float(np.mean(b)) if b else 0.0
        metrics[f"{name}_mean_after"] = float(np.mean(a))
    plots = {name: {"before": histogram(b), "after": histogram(a)}
             for name, b, a in (("affinity", aff_before, aff_after), ("qed", qed_before, qed_after),
                                ("sa", sa_before, sa_after))}
    mols = [molecule_entry(g, {oracle.name: s, "kd_nm": kd_from_dg(s), "qed": qed_surrogate(g),
                               "sa": sa_surrogate(g)}) for g, s in top]
    config = {"oracle": oracle.name, "mode": mode, "count": count, "seed": seed, "weights": list(weights),
              "steps": steps, "lr": lr, "finetune_top": finetune_top}
    return TaskReport(f"affinity_{mode}", config, metrics, mols, plots)
