"""Property predictors trained on frozen-VAE samples.

Two input modes share one MLP shape (in -> w -> w -> 1, ReLU):

* ``decoded``: the flattened soft symbol distribution ``decode(z)``
* ``latent``: ``z`` itself (the ablation baseline)

Labels always come from the oracle run on the argmax-decoded molecule.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_io
from . import selfies
from .oracles import OracleError
from .tensor import (
    DTYPE,
    Adam,
    Linear,
    Module,
    Tensor,
    as_tensor,
    mse,
    no_grad,
    relu,
    reshape,
    scale,
)
from .vae import VaeModel, argmax_symbols, sample_latents

log = logging.getLogger(__name__)

MODES = ("decoded", "latent")


@dataclass
class PropertyDataset:
    z: np.ndarray
    y: np.ndarray
    oracle: str = ""

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "PropertyDataset":
        return PropertyDataset(self.z[idx], self.y[idx], self.oracle)

    def split(self, holdout: float = 0.1, seed: int = 0):
        """Shuffled (train, held-out) split; held-out gets ``round(holdout * N)`` rows."""
        order = np.random.default_rng(seed).permutation(len(self))
        k = int(round(holdout * len(self)))
        return self.subset(order[k:]), self.subset(order[:k])


@dataclass
class PredictorConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    width: int = 128
    seed: int = 0


def gen_training_set(model: VaeModel, oracle, count: int, seed: int,
                     batch_size: int = 1024) -> PropertyDataset:
    """Sample ``z ~ N(0, I)`` and label each with the oracle on its argmax molecule.

    Items the oracle cannot score are dropped and logged.
    """
    m = model.dims.m
    if count == 0:
        return PropertyDataset(np.zeros((0, m), DTYPE), np.zeros(0), oracle.name)
    z = sample_latents(count, m, seed)
    graphs = []
    for start in range(0, count, batch_size):
        for s in argmax_symbols(model.decode_numpy(z[start : start + batch_size])):
            graphs.append(selfies.decode(s))
    if hasattr(oracle, "score_batch"):
        scores = list(oracle.score_batch(graphs))
    else:
        scores = []
        for g in graphs:
            try:
                scores.append(oracle(g))
            except (OracleError, ValueError) as exc:
                log.warning("oracle %s failed on a sample: %s", oracle.name, exc)
                scores.append(None)
    keep = [i for i, s in enumerate(scores) if s is not None and np.isfinite(s)]
    if len(keep) < count:
        log.warning("dropped %d of %d samples the oracle could not score", count - len(keep), count)
    y = np.array([scores[i] for i in keep], dtype=np.float64)
    return PropertyDataset(z[keep], y, oracle.name)


class PropertyPredictor(Module):
    def __init__(self, mode: str, in_dim: int, width: int = 128, seed: int = 0,
                 target: str = "", dtype=DTYPE):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        rng = np.random.default_rng(seed)
        self.mode = mode
        self.in_dim = in_dim
        self.width = width
        self.target = target
        self.y_mean = 0.0
        self.y_std = 1.0
        self.l1 = Linear(in_dim, width, rng, dtype)
        self.l2 = Linear(width, width, rng, dtype)
        self.l3 = Linear(width, 1, rng, dtype)

    def standardized(self, x: Tensor) -> Tensor:
        h = relu(self.l1(x))
        h = relu(self.l2(h))
        return reshape(self.l3(h), (x.shape[0],))

    def __call__(self, x: Tensor) -> Tensor:
        """Predicted property in oracle units for a batch of input features."""
        return scale(self.standardized(x), self.y_std) + self.y_mean

    def features(self, z, vae: VaeModel | None) -> Tensor:
        """Predictor input for latent batch ``z``; differentiable in ``z``."""
        z = as_tensor(z, self.l1.weight.dtype)
        if z.data.ndim == 1:
            z = reshape(z, (1, -1))
        if self.mode == "latent":
            x = z
        else:
            if vae is None:
                raise ValueError("decoded-mode predictor needs the VAE")
            y = vae.decode(z)
            x = reshape(y, (y.shape[0], -1))
        if x.shape[1] != self.in_dim:
            raise ValueError(f"{self.mode} predictor expects input size {self.in_dim}, got {x.shape[1]}")
        return x

    def predict_tensor(self, z, vae: VaeModel | None = None) -> Tensor:
        return self(self.features(z, vae))


def predict(p: PropertyPredictor, z, model: VaeModel | None = None):
    """Prediction for one latent vector (float) or a batch (array)."""
    single = np.asarray(z.data if isinstance(z, Tensor) else z).ndim == 1
    with no_grad():
        out = p.predict_tensor(z, model).data.astype(np.float64)
    return float(out[0]) if single else out


def input_matrix(data: PropertyDataset, mode: str, vae: VaeModel | None, batch_size: int = 1024):
    if mode == "latent":
        return np.asarray(data.z, dtype=DTYPE)
    if vae is None:
        raise ValueError("decoded mode needs the VAE")
    chunks = [vae.decode_numpy(data.z[s : s + batch_size]) for s in range(0, len(data), batch_size)]
    y = np.concatenate(chunks) if chunks else np.zeros((0, vae.dims.n, vae.dims.d), DTYPE)
    return y.reshape(len(y), -1)


@dataclass
class PredictorHistory:
    epoch_loss: list = field(default_factory=list)


def train_predictor(data: PropertyDataset, mode: str, config: PredictorConfig = PredictorConfig(),
                    vae: VaeModel | None = None, history: PredictorHistory | None = None) -> PropertyPredictor:
    """Fit an MLP to the oracle labels by MSE with Adam. The VAE is only read."""
    if len(data) < 2:
        raise ValueError("need at least 2 examples to train a predictor")
    x = input_matrix(data, mode, vae)
    y = np.asarray(data.y, dtype=np.float64)
    p = PropertyPredictor(mode, x.shape[1], config.width, config.seed, data.oracle)
    p.y_mean = float(y.mean())
    std = float(y.std())
    if std == 0.0:
        warnings.warn("predictor targets are constant; the fit is degenerate", RuntimeWarning)
        log.warning("predictor targets are constant (%s)", p.y_mean)
        std = 1.0
    p.y_std = std
    t = ((y - p.y_mean) / std).astype(DTYPE)

    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(p.parameters(), lr=config.lr)
    bs = max(1, config.batch_size)
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), bs):
            idx = order[start : start + bs]
            opt.zero_grad()
            loss = mse(p.standardized(as_tensor(x[idx])), t[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        if history is not None:
            history.epoch_loss.append(total / len(y))
        log.info("predictor epoch %d mse %.4f", epoch + 1, total / len(y))
    return p


def r_squared(p: PropertyPredictor, heldout: PropertyDataset, vae: VaeModel | None = None) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot`` on held-out pairs."""
    if len(heldout) < 2:
        raise ValueError("r_squared needs at least 2 held-out points")
    y = np.asarray(heldout.y, dtype=np.float64)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("held-out targets have zero variance")
    pred = np.concatenate([predict(p, heldout.z[s : s + 1024], vae) for s in range(0, len(y), 1024)])
    return 1.0 - float(((y - pred) ** 2).sum()) / ss_tot


# ---------------------------------------------------------------------------
# persistence


def to_checkpoint(p: PropertyPredictor, vae_dims) -> ckpt_io.Checkpoint:
    kind = ckpt_io.KIND_PREDICTOR_DECODED if p.mode == "decoded" else ckpt_io.KIND_PREDICTOR_LATENT
    meta = {"target": p.target, "y_mean": p.y_mean, "y_std": p.y_std, "in_dim": p.in_dim}
    return ckpt_io.Checkpoint(vae_dims.n, vae_dims.d, vae_dims.m, (p.width, p.width), kind, meta, p.state())


def save_predictor(p: PropertyPredictor, vae_dims, path) -> None:
    ckpt_io.save(path, to_checkpoint(p, vae_dims))


def from_checkpoint(ck: ckpt_io.Checkpoint) -> PropertyPredictor:
    if ck.kind == ckpt_io.KIND_PREDICTOR_DECODED:
        mode = "decoded"
    elif ck.kind == ckpt_io.KIND_PREDICTOR_LATENT:
        mode = "latent"
    else:
        raise ckpt_io.CheckpointError("checkpoint does not hold a property predictor")
    in_dim = int(ck.meta["in_dim"])
    expected = ck.n * ck.d if mode == "decoded" else ck.m
    if in_dim != expected:
        raise ckpt_io.CheckpointError(f"{mode} predictor input {in_dim} != {expected}")
    p = PropertyPredictor(mode, in_dim, ck.widths[0], target=ck.meta.get("target", ""))
    p.y_mean = float(ck.meta["y_mean"])
    p.y_std = float(ck.meta["y_std"])
    ckpt_io.assign_state(p, ck.blocks)
    return p


def load_predictor(path) -> PropertyPredictor:
    return from_checkpoint(ckpt_io.load(path))
