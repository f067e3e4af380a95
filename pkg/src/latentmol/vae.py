"""Fully connected VAE over fixed-length symbol strings."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_io
from . import selfies
from .tensor import (
    DTYPE,
    Adam,
    Embedding,
    Linear,
    MLPBlock,
    Module,
    Tensor,
    as_tensor,
    exp,
    gaussian_kl,
    gaussian_sample,
    log_softmax,
    mean,
    no_grad,
    one_hot_nll,
    reshape,
    scale,
    softmax,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VaeDims:
    n: int = selfies.DEFAULT_LENGTH
    d: int = selfies.ALPHABET_SIZE
    m: int = 64
    embedding: int = 64
    hidden: tuple = (512, 256, 256, 256)


DESK_DIMS = VaeDims()
PAPER_DIMS = VaeDims(m=1024, hidden=(2000, 1000, 1000, 1000))


@dataclass
class VaeTrainConfig:
    epochs: int = 18
    lr: float = 1e-4
    recon_weight: float = 0.9
    kl_weight: float = 0.1
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.recon_weight < 0 or self.kl_weight < 0:
            raise ValueError("loss weights must be non-negative")


LOGVAR_INIT = -6.0


class VaeModel(Module):
    def __init__(self, dims: VaeDims = DESK_DIMS, seed: int = 0, dtype=DTYPE):
        self.dims = dims
        rng = np.random.default_rng(seed)
        n, d, m, e = dims.n, dims.d, dims.m, dims.embedding
        self.embed = Embedding(d, e, rng, dtype)
        widths = list(dims.hidden)
        enc_in = [n * e] + widths[:-1]
        self.encoder = [MLPBlock(a, b, rng, dtype) for a, b in zip(enc_in, widths)]
        self.mu_head = Linear(widths[-1], m, rng, dtype)
        self.logvar_head = Linear(widths[-1], m, rng, dtype)
        # start with a narrow posterior; unit variance drowns the mean early on
        self.logvar_head.bias.data[:] = LOGVAR_INIT
        dec = widths[::-1]
        dec_in = [m] + dec[:-1]
        self.decoder = [MLPBlock(a, b, rng, dtype) for a, b in zip(dec_in, dec)]
        self.out = Linear(dec[-1], n * d, rng, dtype)

    # -- encoder -------------------------------------------------------------
    def encode_tensor(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.shape[1] != self.dims.n:
            raise ValueError(f"string length {ids.shape[1]} != model length {self.dims.n}")
        h = reshape(self.embed(ids), (ids.shape[0], -1))
        for block in self.encoder:
            h = block(h)
        return self.mu_head(h), self.logvar_head(h)

    def encode(self, ids):
        """Deterministic encoder heads ``(mu, logvar)`` as numpy arrays."""
        single = np.asarray(ids).ndim == 1
        with no_grad():
            mu, logvar = self.encode_tensor(ids)
        if single:
            return mu.data[0], logvar.data[0]
        return mu.data, logvar.data

    # -- decoder -------------------------------------------------------------
    def decode_logits(self, z) -> Tensor:
        z = as_tensor(z, self.out.weight.dtype)
        if z.data.ndim == 1:
            z = reshape(z, (1, -1))
        if z.shape[-1] != self.dims.m:
            raise ValueError(f"latent size {z.shape[-1]} != {self.dims.m}")
        if not np.all(np.isfinite(z.data)):
            raise ValueError("latent vector contains NaN or inf")
        h = z
        for block in self.decoder:
            h = block(h)
        return reshape(self.out(h), (z.shape[0], self.dims.n, self.dims.d))

    def decode(self, z) -> Tensor:
        """Per-position symbol distributions, shape (batch, n, d)."""
        return softmax(self.decode_logits(z), axis=-1)

    def decode_numpy(self, z) -> np.ndarray:
        with no_grad():
            return self.decode(z).data

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


def argmax_symbols(probs) -> tuple:
    """Most probable symbol per position; ties go to the lowest id."""
    probs = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    ids = probs.argmax(axis=-1)  # numpy picks the first maximum
    if ids.ndim == 1:
        return tuple(int(i) for i in ids)
    return [tuple(int(i) for i in row) for row in ids]


def elbo_terms(log_probs: Tensor, targets, mu: Tensor, sigma: Tensor,
               recon_weight=0.9, kl_weight=0.1) -> Tensor:
    """``recon_weight * NLL + kl_weight * KL`` averaged over the batch."""
    nll = one_hot_nll(log_probs, targets)
    kl = gaussian_kl(mu, sigma)
    return mean(scale(nll, recon_weight) + scale(kl, kl_weight))


def elbo_loss(x, model: VaeModel, config: VaeTrainConfig, rng=None):
    """ELBO on a batch of id strings. Sampling noise comes from ``rng``;
    without one the posterior mean is decoded."""
    x = np.asarray(x, dtype=np.int64)
    mu, logvar = model.encode_tensor(x)
    sigma = exp(scale(logvar, 0.5))
    if rng is None:
        z = mu
    else:
        z = gaussian_sample(mu, sigma, rng.standard_normal(mu.shape))
    log_probs = log_softmax(model.decode_logits(z), axis=-1)
    return elbo_terms(log_probs, x, mu, sigma, config.recon_weight, config.kl_weight)


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)


def train_vae(dataset, config: VaeTrainConfig = VaeTrainConfig(), dims: VaeDims = DESK_DIMS,
              model: VaeModel | None = None, history: TrainHistory | None = None) -> VaeModel:
    """Train with Adam on the ELBO. Deterministic for a given seed."""
    data = np.asarray(list(dataset), dtype=np.int64)
    if data.size == 0:
        raise ValueError("empty dataset")
    if model is None:
        model = VaeModel(dims, seed=config.seed)
    model.train()
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(model.parameters(), lr=config.lr)
    bs = max(2, config.batch_size)
    for epoch in range(config.epochs):
        order = rng.permutation(len(data)) if config.shuffle else np.arange(len(data))
        total, count = 0.0, 0
        for start in range(0, len(data), bs):
            idx = order[start : start + bs]
            if len(idx) < 2:
                continue  # batchnorm needs two rows
            opt.zero_grad()
            loss = elbo_loss(data[idx], model, config, rng)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        epoch_loss = total / max(count, 1)
        if history is not None:
            history.epoch_loss.append(epoch_loss)
        log.info("vae epoch %d loss %.4f", epoch + 1, epoch_loss)
    model.eval()
    return model


def reconstruction_accuracy(model: VaeModel, dataset, batch_size: int = 256) -> float:
    """Fraction of symbols recovered by argmax(decode(mu(x)))."""
    data = np.asarray(list(dataset), dtype=np.int64)
    hits = 0
    for start in range(0, len(data), batch_size):
        batch = data[start : start + batch_size]
        mu, _ = model.encode(batch)
        pred = model.decode_numpy(mu).argmax(-1)
        hits += int((pred == batch).sum())
    return hits / data.size


def sample_latents(k: int, m: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((k, m)).astype(DTYPE)


def sample_strings(model: VaeModel, k: int, seed: int, batch_size: int = 1024) -> list:
    z = sample_latents(k, model.dims.m, seed)
    out = []
    for start in range(0, k, batch_size):
        out.extend(argmax_symbols(model.decode_numpy(z[start : start + batch_size])))
    return out


def sample_random(model: VaeModel, k: int, seed: int) -> list:
    """Draw ``z ~ N(0, I)``, decode, take argmax symbols, decode to graphs."""
    return [selfies.decode(s) for s in sample_strings(model, k, seed)]


# ---------------------------------------------------------------------------
# persistence


def to_checkpoint(model: VaeModel) -> ckpt_io.Checkpoint:
    dims = model.dims
    return ckpt_io.Checkpoint(
        dims.n, dims.d, dims.m, tuple(dims.hidden), ckpt_io.KIND_VAE,
        {"embedding": dims.embedding}, model.state(),
    )


def save_vae(model: VaeModel, path) -> None:
    ckpt_io.save(path, to_checkpoint(model))


def from_checkpoint(ck: ckpt_io.Checkpoint) -> VaeModel:
    if ck.kind != ckpt_io.KIND_VAE:
        raise ckpt_io.CheckpointError("checkpoint does not hold a VAE")
    dims = VaeDims(ck.n, ck.d, ck.m, int(ck.meta.get("embedding", 64)), tuple(ck.widths))
    model = VaeModel(dims)
    ckpt_io.assign_state(model, ck.blocks)
    return model.eval()


def load_vae(path) -> VaeModel:
    return from_checkpoint(ckpt_io.load(path))
