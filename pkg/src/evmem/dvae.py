"""Discrete VAE over histogram patches: the event tokenizer.

A shared 2-layer MLP encodes each patch to logits over N codebook
entries; Gumbel-Softmax relaxes the categorical bottleneck during
training; a shared 2-layer MLP decodes the selected (or mixed) codebook
row back to patch values, clamped to [0, 1]. Inference-time tokenize()
is the plain argmax of the encoder logits, lowest index on ties.

Training minimizes  MSE(recon, hist) + kl_weight * mean_patches KL(q || uniform),
with KL(q || uniform) = ln N - H(q).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import (
    INIT_STEP,
    STAGE_DVAE,
    LabeledDataset,
    PreprocessConfig,
    batch_eval,
    batch_train,
    step_rng,
)
from .optim import Adam, exponential_lr


class IndivisibleShape(ValueError):
    def __init__(self, h: int, w: int, patch: int):
        super().__init__(f"histogram {h}x{w} not divisible by patch size {patch}")


class NonpositiveTemperature(ValueError):
    def __init__(self, tau: float):
        super().__init__(f"Gumbel-Softmax temperature must be > 0, got {tau}")


@dataclass
class DvaeConfig:
    vocab_size: int = 128
    latent_dim: int = 32
    patch: int = 16
    channels: int = 2
    hidden: int = 256

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch


@dataclass
class DvaeModel:
    config: DvaeConfig
    params: dict = field(default_factory=dict)


def init_dvae(config: DvaeConfig, rng: np.random.Generator) -> DvaeModel:
    """He-scaled normals for the MLPs; decoder output bias starts at 0.5
    so step-0 reconstructions sit mid-range inside the [0,1] clamp
    (a flat 0/1 start would park half the outputs on a clamp boundary)."""
    d_in, h, n, d = config.patch_dim, config.hidden, config.vocab_size, config.latent_dim

    def dense(fan_in, fan_out):
        return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)), requires_grad=True)

    params = {
        "enc.w1": dense(d_in, h),
        "enc.b1": Tensor(np.zeros(h), requires_grad=True),
        "enc.w2": dense(h, n),
        "enc.b2": Tensor(np.zeros(n), requires_grad=True),
        "codebook": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(n, d)), requires_grad=True),
        "dec.w1": dense(d, h),
        "dec.b1": Tensor(np.zeros(h), requires_grad=True),
        "dec.w2": dense(h, d_in),
        "dec.b2": Tensor(np.full(d_in, 0.5), requires_grad=True),
    }
    return DvaeModel(config, params)


def patch_grid(height: int, width: int, patch: int) -> tuple:
    if height % patch or width % patch:
        raise IndivisibleShape(height, width, patch)
    return height // patch, width // patch


def patchify(hist: np.ndarray, patch: int) -> np.ndarray:
    """(C,H,W) -> (rows*cols, C*P*P) or (B,C,H,W) -> (B, rows*cols, C*P*P).
    Patches are row-major: patch (r, c) sits at index r*cols + c; each
    vector is channel-major, then patch rows, then patch columns."""
    hist = np.asarray(hist, dtype=np.float64)
    single = hist.ndim == 3
    if single:
        hist = hist[None]
    b, c, h, w = hist.shape
    rows, cols = patch_grid(h, w, patch)
    out = (
        hist.reshape(b, c, rows, patch, cols, patch)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(b, rows * cols, c * patch * patch)
    )
    return out[0] if single else out


def unpatchify(patches: np.ndarray, channels: int, height: int, width: int, patch: int) -> np.ndarray:
    """Inverse of patchify for plain arrays."""
    patches = np.asarray(patches, dtype=np.float64)
    single = patches.ndim == 2
    if single:
        patches = patches[None]
    b = patches.shape[0]
    rows, cols = patch_grid(height, width, patch)
    out = (
        patches.reshape(b, rows, cols, channels, patch, patch)
        .transpose(0, 3, 1, 4, 2, 5)
        .reshape(b, channels, height, width)
    )
    return out[0] if single else out


def unpatchify_t(patches: Tensor, channels: int, height: int, width: int, patch: int) -> Tensor:
    """unpatchify as differentiable tensor ops."""
    rows, cols = patch_grid(height, width, patch)
    b = patches.shape[0]
    x = ad.reshape(patches, (b, rows, cols, channels, patch, patch))
    x = ad.transpose(x, (0, 3, 1, 4, 2, 5))
    return ad.reshape(x, (b, channels, height, width))


def _mlp(x: Tensor, params: dict, prefix: str) -> Tensor:
    h = ad.gelu(ad.matmul(x, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
    return ad.matmul(h, params[f"{prefix}.w2"]) + params[f"{prefix}.b2"]


def encode(model: DvaeModel, hist: np.ndarray) -> Tensor:
    """Per-patch logits over the vocabulary: (num_patches, N), or batched
    (B, num_patches, N) for a (B,C,H,W) input."""
    return _mlp(Tensor(patchify(hist, model.config.patch)), model.params, "enc")


def gumbel_softmax(
    logits: Tensor,
    tau: float,
    rng: np.random.Generator = None,
    hard: bool = False,
    noise: np.ndarray = None,
) -> Tensor:
    """softmax((logits + G)/tau) with standard Gumbel noise G. hard mode
    forwards the one-hot argmax but keeps the soft gradient
    (straight-through). Pass noise explicitly to pin it in tests."""
    if tau <= 0:
        raise NonpositiveTemperature(tau)
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax needs an rng when noise is not given")
        noise = rng.gumbel(size=logits.shape)
    soft = ad.softmax((logits + Tensor(np.asarray(noise, dtype=np.float64))) * (1.0 / tau))
    if not hard:
        return soft
    idx = soft.data.argmax(axis=-1)
    one_hot = np.zeros_like(soft.data)
    np.put_along_axis(one_hot, idx[..., None], 1.0, axis=-1)
    return soft + Tensor(one_hot - soft.data)  # forward one-hot, soft backward


def decode(model: DvaeModel, assignments: Tensor, height: int, width: int) -> Tensor:
    """Assignment-weighted codebook rows through the decoder MLP, patches
    reassembled to (B,C,H,W) (or (C,H,W) for a 2-D assignment), clamped
    to [0,1]. A one-hot assignment selects exactly one codebook row."""
    cfg = model.config
    single = assignments.ndim == 2
    if single:
        assignments = ad.reshape(assignments, (1,) + assignments.shape)
    latent = ad.matmul(assignments, model.params["codebook"])
    patches = ad.clip01(_mlp(latent, model.params, "dec"))
    out = unpatchify_t(patches, cfg.channels, height, width, cfg.patch)
    return ad.reshape(out, out.shape[1:]) if single else out


def kl_uniform(assignments: Tensor) -> Tensor:
    """Mean over patches of KL(q || uniform) = ln N - H(q). Exactly 0 for
    uniform q (1/N scaling is lossless for power-of-two N) and exactly
    ln N for one-hot q."""
    n = assignments.shape[-1]
    neg_entropy = ad.tsum(ad.xlogx(assignments), axis=-1)
    return ad.tmean(neg_entropy) + float(np.log(n))


def elbo_loss(hist: np.ndarray, recon: Tensor, assignments: Tensor, kl_weight: float) -> Tensor:
    """MSE(recon, hist) + kl_weight * kl_uniform(assignments), a scalar."""
    recon_mse = ad.mse(recon, Tensor(np.asarray(hist, dtype=np.float64)))
    return recon_mse + kl_uniform(assignments) * kl_weight


def tokenize(model: DvaeModel, hist: np.ndarray) -> np.ndarray:
    """TokenGrid: (rows, cols) int ids from noiseless argmax (ties take
    the lowest index). Batched input gives (B, rows, cols)."""
    cfg = model.config
    arr = np.asarray(hist)
    single = arr.ndim == 3
    rows, cols = patch_grid(arr.shape[-2], arr.shape[-1], cfg.patch)
    with ad.no_grad():
        logits = encode(model, arr)
    ids = logits.data.argmax(axis=-1)
    return ids.reshape((rows, cols) if single else (arr.shape[0], rows, cols))


def autoencode(model: DvaeModel, hist: np.ndarray) -> np.ndarray:
    """Inference-path reconstruction: hard tokenize, decode the one-hot."""
    cfg = model.config
    arr = np.asarray(hist, dtype=np.float64)
    ids = tokenize(model, arr)
    flat = ids.reshape(-1) if arr.ndim == 3 else ids.reshape(arr.shape[0], -1)
    one_hot = np.eye(cfg.vocab_size)[flat]
    with ad.no_grad():
        recon = decode(model, Tensor(one_hot), arr.shape[-2], arr.shape[-1])
    return recon.data


def tau_schedule(step: int, total_steps: int, start: float = 1.0, end: float = 0.0625,
                 anneal_frac: float = 0.6) -> float:
    """Exponential interpolation start -> end over the first anneal_frac
    of training, constant afterwards."""
    anneal = max(int(total_steps * anneal_frac), 1)
    frac = min(step / anneal, 1.0)
    return float(start * (end / start) ** frac)


@dataclass
class DvaeTrainConfig:
    steps: int = 600
    batch_size: int = 16
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    clip_norm: float = 1e-2
    kl_weight: float = 1e-10
    tau_start: float = 1.0
    tau_end: float = 0.0625
    anneal_frac: float = 0.6
    hard_frac: float = 0.1  # final fraction of steps in straight-through mode
    lr_decay: float = 0.99  # per epoch
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: DvaeConfig = field(default_factory=DvaeConfig)


def train_dvae(dataset: LabeledDataset, config: DvaeTrainConfig, start_step: int = 0,
               stop_step: int = None, model: DvaeModel = None, opt_state: dict = None):
    """Train on the dataset's streams; returns (model, curve, opt_state)
    with curve rows (step, recon_mse, kl, tau) and the final optimizer
    state for checkpointing. Schedules always span config.steps;
    start_step/stop_step plus model/opt_state carve out a segment, so an
    interrupted run resumed at its stop point is bit-identical to an
    uninterrupted one (step k consumes step_rng(seed, stage, k) either way)."""
    cfg = config
    if model is None:
        model = init_dvae(cfg.model, step_rng(cfg.seed, STAGE_DVAE, INIT_STEP))
    opt = Adam(model.params, lr=cfg.lr, betas=cfg.betas,
               weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    if opt_state is not None:
        opt.load_state_dict(opt_state)
    steps_per_epoch = max(len(dataset) // max(cfg.batch_size, 1), 1)
    curve = []
    hard_from = int(np.ceil(cfg.steps * (1.0 - cfg.hard_frac)))
    for step in range(start_step, cfg.steps if stop_step is None else stop_step):
        rng = step_rng(cfg.seed, STAGE_DVAE, step)
        idx = rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)), replace=False)
        hists = batch_train(dataset, idx, cfg.preprocess, rng)
        tau = tau_schedule(step, cfg.steps, cfg.tau_start, cfg.tau_end, cfg.anneal_frac)
        hard = step >= hard_from
        logits = encode(model, hists)
        assign = gumbel_softmax(logits, tau, rng=rng, hard=hard)
        recon = decode(model, assign, hists.shape[-2], hists.shape[-1])
        recon_mse = ad.mse(recon, Tensor(hists))
        kl = kl_uniform(assign)
        loss = recon_mse + kl * cfg.kl_weight
        opt.zero_grad()
        ad.backward(loss)
        opt.step(lr=exponential_lr(step, steps_per_epoch, cfg.lr, cfg.lr_decay))
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"dVAE loss diverged at step {step}")
        curve.append((step, float(recon_mse.data), float(kl.data), tau))
    return model, curve, opt.state_dict()


def eval_recon_mse(model: DvaeModel, dataset: LabeledDataset, preprocess: PreprocessConfig,
                   batch_size: int = 32) -> float:
    """Mean reconstruction MSE of the inference path over a dataset."""
    total, count = 0.0, 0
    for lo in range(0, len(dataset), batch_size):
        idx = range(lo, min(lo + batch_size, len(dataset)))
        hists = batch_eval(dataset, idx, preprocess)
        recon = autoencode(model, hists)
        total += float(((recon - hists) ** 2).mean()) * len(hists)
        count += len(hists)
    return total / max(count, 1)


def codebook_usage(model: DvaeModel, dataset: LabeledDataset, preprocess: PreprocessConfig) -> float:
    """Fraction of codebook entries that appear at least once when
    tokenizing the dataset."""
    seen = np.zeros(model.config.vocab_size, dtype=bool)
    for lo in range(0, len(dataset), 32):
        idx = range(lo, min(lo + 32, len(dataset)))
        hists = batch_eval(dataset, idx, preprocess)
        seen[np.unique(tokenize(model, hists))] = True
    return float(seen.mean())
