"""Command-line entry point: ``latentmol <command> [--config FILE] [--section.key VALUE ...]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import random
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import bench, checkpoint, config as config_mod, selfies
from .corpus import random_molecule, synthetic_corpus
from .molgraph import canonical_key, to_smiles
from .optimize import Objective, ObjectiveTerm, best_by_oracle, reverse_optimize
from .oracles import (
    INTERNAL_ORACLES,
    ExternalOracle,
    OracleCache,
    OracleError,
    cached,
    external_score_batch,
    get_oracle,
)
from .predictor import (
    PredictorConfig,
    gen_training_set,
    load_predictor,
    r_squared,
    save_predictor,
    train_predictor,
)
from .refine import FilterPolicy, filter_molecules, finetune
from .vae import VaeDims, VaeTrainConfig, load_vae, sample_latents, sample_strings, save_vae, train_vae

log = logging.getLogger("latentmol")

COMMANDS = ("train-vae", "train-predictor", "sample", "optimize", "filter", "finetune", "bench", "oracle-check")
TASKS = ("random_generation", "maximize", "target_range", "similarity", "substructure", "affinity")


class CliError(Exception):
    pass


class Run:
    """Everything a command needs: config, workdir and provenance."""

    def __init__(self, command: str, cfg: config_mod.RunConfig):
        self.command = command
        self.cfg = cfg
        self.workdir = Path(cfg.get("paths", "workdir"))
        self.inputs = []

    def add_input(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"input not found: {path}")
        self.inputs.append(path)
        return path

    @property
    def run_id(self) -> str:
        h = hashlib.sha256()
        h.update(self.command.encode())
        h.update(self.cfg.canonical().encode())
        for p in self.inputs:
            h.update(checkpoint.digest(p).encode())
        return h.hexdigest()[:12]

    def output(self, stage: str, ext: str) -> Path:
        self.workdir.mkdir(parents=True, exist_ok=True)
        return self.workdir / f"{stage}-{self.run_id}.{ext}"

    # -- shared loaders ------------------------------------------------------
    def vae(self):
        path = self.cfg.get("paths", "vae")
        if not path:
            raise CliError("paths.vae is not set")
        model = load_vae(path)
        self.inputs.append(Path(path))
        return model

    def predictors(self):
        paths = self.cfg.get("paths", "predictors")
        if not paths:
            raise CliError("paths.predictors is not set")
        out = []
        for p in paths:
            out.append(load_predictor(p))
            self.inputs.append(Path(p))
        return out

    def corpus(self) -> list:
        path = self.cfg.get("paths", "corpus")
        n = self.cfg.get("model", "n")
        if path:
            return selfies.read_corpus(self.add_input(path), n)
        return synthetic_corpus(self.cfg.get("train", "corpus_size"), self.cfg.get("train", "corpus_seed"), n)

    def oracle(self, name: str):
        if name in INTERNAL_ORACLES:
            return get_oracle(name)
        o = self.cfg.section("oracle")
        if name != o["name"]:
            raise CliError(f"unknown oracle {name!r}; internal: {sorted(INTERNAL_ORACLES)}, external: {o['name']!r}")
        cache = OracleCache(self.workdir / "oracle-cache.bin") if o["cache"] else None
        return ExternalOracle(o["name"], o["command"], o["direction"], o["timeout"], o["max_in_flight"], cache)

    def molecules_in(self) -> list:
        path = self.cfg.get("paths", "input")
        if not path:
            raise CliError("paths.input is not set")
        return [selfies.decode(s) for s in selfies.read_corpus(self.add_input(path), self.cfg.get("model", "n"))]

    def write_molecules(self, stage: str, graphs, scores=None) -> Path:
        n = self.cfg.get("model", "n")
        strings = []
        for g in graphs:
            try:
                strings.append(selfies.encode(g, n))
            except selfies.EncodeError as exc:
                log.warning("skipping a molecule that does not fit the codec: %s", exc)
        out = self.output(stage, "selfies")
        selfies.write_corpus(out, strings)
        if scores is not None:
            csv_path = self.output(stage, "csv")
            names = sorted({k for s in scores for k in s})
            lines = [",".join(["key", "smiles", *names])]
            for g, s in zip(graphs, scores):
                lines.append(",".join([canonical_key(g), to_smiles(g), *(repr(s.get(k, "")) for k in names)]))
            csv_path.write_text("\n".join(lines) + "\n")
        return out


# ---------------------------------------------------------------------------
# commands


def cmd_train_vae(run: Run) -> None:
    c = run.cfg
    data = run.corpus()
    if not c.get("paths", "corpus"):
        corpus_path = run.output("corpus", "selfies")
        selfies.write_corpus(corpus_path, data)
        print(corpus_path)
    dims = VaeDims(c.get("model", "n"), c.get("model", "d"), c.get("model", "m"),
                   c.get("model", "embedding"), tuple(c.get("model", "hidden")))
    t = c.section("train")
    tc = VaeTrainConfig(t["epochs"], t["lr"], t["recon_weight"], t["kl_weight"], t["batch_size"], t["seed"])
    model = train_vae(data, tc, dims)
    out = run.output("vae", "ckpt")
    save_vae(model, out)
    print(out)


def cmd_train_predictor(run: Run) -> None:
    p = run.cfg.section("predictor")
    vae = run.vae()
    oracle = run.oracle(p["oracle"])
    data = gen_training_set(vae, oracle, p["dataset_size"], p["seed"])
    train, held = data.split(p["holdout"], p["seed"])
    pc = PredictorConfig(p["epochs"], p["lr"], p["batch_size"], p["width"], p["seed"])
    model = train_predictor(train, p["mode"], pc, vae)
    out = run.output(f"predictor-{p['oracle']}", "ckpt")
    save_predictor(model, vae.dims, out)
    if len(held) >= 2 and held.y.std() > 0:
        log.info("held-out r2 %.4f", r_squared(model, held, vae))
    print(out)


def cmd_sample(run: Run) -> None:
    s = run.cfg.section("sample")
    vae = run.vae()
    strings = sample_strings(vae, s["count"], s["seed"])
    out = run.output("samples", "selfies")
    selfies.write_corpus(out, strings)
    print(out)


def _objective(run: Run, predictors) -> Objective:
    o = run.cfg.section("optimize")
    weights, directions = o["weights"], o["directions"]
    if len(weights) != len(predictors) or len(directions) != len(predictors):
        raise CliError(f"optimize.weights and optimize.directions need {len(predictors)} entries each")
    terms = [ObjectiveTerm(p, w, d) for p, w, d in zip(predictors, weights, directions)]
    return Objective(terms, o["steps"], o["lr"], o["restarts"])


def cmd_optimize(run: Run) -> None:
    o = run.cfg.section("optimize")
    vae = run.vae()
    preds = run.predictors()
    obj = _objective(run, preds)
    oracle = run.oracle(preds[0].target)
    z0 = sample_latents(o["restarts"], vae.dims.m, o["seed"])
    found = {}
    for start in range(0, o["restarts"], o["batch_size"]):
        for tr in reverse_optimize(z0[start : start + o["batch_size"]], obj, vae, record_z=False):
            _, g, s = best_by_oracle(tr, oracle)
            found.setdefault(canonical_key(g), (g, s))
    ranked = sorted(found.items(), key=lambda kv: (-oracle.sign * kv[1][1], kv[0]))
    graphs = [g for _, (g, _) in ranked]
    scores = [{oracle.name: s} for _, (_, s) in ranked]
    print(run.write_molecules("optimized", graphs, scores))


def cmd_filter(run: Run) -> None:
    f = run.cfg.section("filter")
    policy = FilterPolicy(f["qed_min"], f["sa_max"], frozenset(f["ring_sizes"]))
    kept = filter_molecules(run.molecules_in(), policy)
    print(run.write_molecules("filtered", kept))


def cmd_finetune(run: Run) -> None:
    oracle = run.oracle(run.cfg.get("predictor", "oracle"))
    graphs = run.molecules_in()
    tuned = [finetune(g, oracle) for g in graphs]
    print(run.write_molecules("finetuned", tuned, [{oracle.name: oracle(g)} for g in tuned]))


def cmd_bench(run: Run, task: str) -> None:
    c = run.cfg
    b, o = c.section("bench"), c.section("optimize")
    vae = run.vae()
    if task == "random_generation":
        report = bench.task_random_generation(vae, b["k"], b["seed"], run.corpus())
    elif task == "affinity":
        oracle = run.oracle(c.get("oracle", "name"))
        p = c.section("predictor")
        pc = PredictorConfig(p["epochs"], p["lr"], p["batch_size"], p["width"], p["seed"])
        setup = bench.train_affinity_setup(vae, oracle, p["dataset_size"], p["seed"], pc)
        weights = tuple(o["weights"]) if len(o["weights"]) == 3 else (1.0, 1.0, 1.0)
        f = c.section("filter")
        policy = FilterPolicy(f["qed_min"], f["sa_max"], frozenset(f["ring_sizes"]))
        report = bench.task_affinity(vae, oracle, setup, b["affinity_mode"], b["count"], b["seed"], weights,
                                     o["steps"], o["lr"], policy, b["finetune_top"], o["batch_size"])
    else:
        pred = run.predictors()[0]
        oracle = run.oracle(pred.target)
        if task == "maximize":
            obj = Objective([ObjectiveTerm(pred, 1.0, oracle.direction)], o["steps"], o["lr"])
            report = bench.task_maximize(vae, obj, oracle, b["count"], b["seed"], batch_size=o["batch_size"])
        elif task == "target_range":
            report = bench.task_target_range(vae, pred, oracle, b["count"], b["seed"], b["lo"], b["hi"],
                                             o["steps"], o["lr"], o["batch_size"])
        elif task == "similarity":
            starts = run.corpus()[: b["starts"]]
            report = bench.task_similarity_constrained(vae, pred, oracle, starts, b["deltas"], o["steps"],
                                                       o["lr"], o["batch_size"])
        elif task == "substructure":
            starts = run.corpus()[: b["starts"]]
            report = bench.task_substructure(vae, pred, oracle, starts, b["fixed_positions"], b["direction"],
                                             o["steps"], o["lr"], o["mask_weight"], o["batch_size"])
        else:
            raise CliError(f"unknown bench task {task!r}; choose from {TASKS}")
    report.run_id = run.run_id
    paths = report.write(run.workdir, f"bench-{task}-{run.run_id}")
    print(paths["json"])


def cmd_oracle_check(run: Run) -> None:
    o = run.cfg.section("oracle")
    rng = random.Random(0)
    mols = [random_molecule(rng) for _ in range(10)]
    batch = external_score_batch(mols, o["command"], o["timeout"], o["max_in_flight"])
    if batch.errors:
        details = "; ".join(f"item {i}: {why}" for i, why in sorted(batch.errors.items()))
        raise CliError(f"oracle protocol check failed: {details}")
    print(f"protocol OK: {len(mols)} of {len(mols)} molecules scored by {o['name']}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latentmol", description="Latent-space molecule optimization pipeline.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("task", nargs="?", help="bench task: " + ", ".join(TASKS))
    ap.add_argument("--config", help="config file (sectioned key = value)")
    ap.add_argument("--count", type=int, help="shorthand for --sample.count")
    ap.add_argument("--seed", type=int, help="shorthand for --sample.seed")
    ap.add_argument("--workdir", help="shorthand for --paths.workdir")
    ap.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args, extra, environ=None) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    config_mod.apply_env(cfg, environ)
    config_mod.apply_flags(cfg, extra)
    if args.count is not None:
        cfg.set("sample", "count", args.count)
    if args.seed is not None:
        cfg.set("sample", "seed", args.seed)
    if args.workdir is not None:
        cfg.set("paths", "workdir", args.workdir)
    return cfg


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args, extra)
    except (config_mod.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.dump_config:
        sys.stdout.write(cfg.serialize())
        return 0
    if args.command == "bench" and args.task not in TASKS:
        print(f"error: bench needs a task: {', '.join(TASKS)}", file=sys.stderr)
        return 2
    if args.command != "bench" and args.task is not None:
        print(f"error: unexpected argument {args.task!r}", file=sys.stderr)
        return 2

    run = Run(args.command if args.command != "bench" else f"bench-{args.task}", cfg)
    run.workdir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(run.workdir / ".latentmol.lock"))
    try:
        with lock.acquire(timeout=0):
            handlers = {
                "train-vae": cmd_train_vae, "train-predictor": cmd_train_predictor, "sample": cmd_sample,
                "optimize": cmd_optimize, "filter": cmd_filter, "finetune": cmd_finetune,
                "oracle-check": cmd_oracle_check,
            }
            if args.command == "bench":
                cmd_bench(run, args.task)
            else:
                handlers[args.command](run)
    except Timeout:
        print(f"error: another latentmol command holds the lock in {run.workdir}", file=sys.stderr)
        return 3
    except (CliError, FileNotFoundError, checkpoint.CheckpointError, OracleError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
