"""Transformer backbone with masked-patch pretraining.

Patch embeddings feed pre-layer-norm transformer blocks whose attention
logits carry a learned per-head relative position bias. During
pretraining a sampled subset of patch embeddings is replaced by a single
learnable mask embedding, and the model predicts the tokenizer's ids at
the masked positions (cross-entropy over masked positions only). The
alternative pixel objective regresses raw patch values instead, either
over masked patches or over the whole histogram.

No CLS token: every position carries the prediction head, and
downstream consumers pool over positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .data import (
    INIT_STEP,
    STAGE_PRETRAIN,
    LabeledDataset,
    PreprocessConfig,
    batch_train,
    step_rng,
)
from .dvae import DvaeModel, decode, patchify, tokenize
from .histogram import render
from .optim import Adam, cosine_warmup_lr


class EmptyMask(ValueError):
    def __init__(self):
        super().__init__("loss over masked positions needs a non-empty mask")


@dataclass
class VitConfig:
    layers: int = 4
    dim: int = 128
    heads: int = 4
    mlp_dim: int = 256
    patch: int = 16
    channels: int = 2
    rows: int = 4  # patch grid of the expected input
    cols: int = 4
    vocab_size: int = 128  # width of the token-prediction head
    drop_path: float = 0.0  # accepted for config compatibility; inactive

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch

    @property
    def head_dim(self) -> int:
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        return self.dim // self.heads


# reference-scale preset: 12 blocks of width 768 with 12 heads, MLP 3072
VIT_BASE = dict(layers=12, dim=768, heads=12, mlp_dim=3072)


@dataclass
class VitModel:
    config: VitConfig
    params: dict = field(default_factory=dict)
    pos_index: np.ndarray = None  # (n, n) rows into the bias table

    def block_names(self, i: int) -> list:
        return [k for k in self.params if k.startswith(f"blocks.{i}.")]


def relative_index(rows: int, cols: int) -> np.ndarray:
    """(n, n) indices into a ((2R-1)(2C-1),) table: entry (i, j) encodes
    the 2-D offset between patch i and patch j."""
    r = np.arange(rows * cols) // cols
    c = np.arange(rows * cols) % cols
    dr = r[:, None] - r[None, :] + rows - 1
    dc = c[:, None] - c[None, :] + cols - 1
    return dr * (2 * cols - 1) + dc


def init_vit(config: VitConfig, rng: np.random.Generator, with_pixel_head: bool = False) -> VitModel:
    cfg = config
    cfg.head_dim  # validate divisibility

    def w(*shape, scale=0.02):
        return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)

    def b(n):
        return Tensor(np.zeros(n), requires_grad=True)

    params = {
        "patch_embed.w": w(cfg.patch_dim, cfg.dim),
        "patch_embed.b": b(cfg.dim),
        "mask_embed": w(cfg.dim),
        "pos_bias": b(((2 * cfg.rows - 1) * (2 * cfg.cols - 1), cfg.heads)),
    }
    for i in range(cfg.layers):
        p = f"blocks.{i}."
        params[p + "ln1.g"] = Tensor(np.ones(cfg.dim), requires_grad=True)
        params[p + "ln1.b"] = b(cfg.dim)
        for name in ("wq", "wk", "wv", "wo"):
            params[p + f"attn.{name}"] = w(cfg.dim, cfg.dim)
        for name in ("bq", "bk", "bv", "bo"):
            params[p + f"attn.{name}"] = b(cfg.dim)
        params[p + "ln2.g"] = Tensor(np.ones(cfg.dim), requires_grad=True)
        params[p + "ln2.b"] = b(cfg.dim)
        params[p + "mlp.w1"] = w(cfg.dim, cfg.mlp_dim)
        params[p + "mlp.b1"] = b(cfg.mlp_dim)
        params[p + "mlp.w2"] = w(cfg.mlp_dim, cfg.dim)
        params[p + "mlp.b2"] = b(cfg.dim)
    params["ln_f.g"] = Tensor(np.ones(cfg.dim), requires_grad=True)
    params["ln_f.b"] = b(cfg.dim)
    params["mem_head.w"] = w(cfg.dim, cfg.vocab_size)
    params["mem_head.b"] = b(cfg.vocab_size)
    if with_pixel_head:
        params["pixel_head.w"] = w(cfg.dim, cfg.patch_dim)
        params["pixel_head.b"] = b(cfg.patch_dim)
    return VitModel(cfg, params, relative_index(cfg.rows, cfg.cols))


def sample_mask(num_patches: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement of round(ratio * num_patches)
    distinct patch indices, sorted. Rounding is half-up."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}")
    count = int(np.floor(ratio * num_patches + 0.5))
    return np.sort(rng.choice(num_patches, size=count, replace=False)).astype(np.int64)


def _attention(x: Tensor, params: dict, prefix: str, cfg: VitConfig,
               bias: Tensor, collect_attn: list = None) -> Tensor:
    bsz, n, _ = x.shape
    h, hd = cfg.heads, cfg.head_dim

    def heads_of(t):
        return ad.transpose(ad.reshape(t, (bsz, n, h, hd)), (0, 2, 1, 3))

    q = heads_of(ad.matmul(x, params[prefix + "attn.wq"]) + params[prefix + "attn.bq"])
    k = heads_of(ad.matmul(x, params[prefix + "attn.wk"]) + params[prefix + "attn.bk"])
    v = heads_of(ad.matmul(x, params[prefix + "attn.wv"]) + params[prefix + "attn.bv"])
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
    attn = ad.softmax(scores + bias)
    if collect_attn is not None:
        collect_attn.append(attn.data.copy())
    mixed = ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3))
    mixed = ad.reshape(mixed, (bsz, n, cfg.dim))
    return ad.matmul(mixed, params[prefix + "attn.wo"]) + params[prefix + "attn.bo"]


def _pos_bias(model: VitModel) -> Tensor:
    """(heads, n, n) bias, gathered from the learned table."""
    n = model.config.num_patches
    rows = ad.gather_rows(model.params["pos_bias"], model.pos_index.reshape(-1))
    return ad.transpose(ad.reshape(rows, (n, n, model.config.heads)), (2, 0, 1))


def forward_backbone(model: VitModel, hist: np.ndarray, mask: np.ndarray = None,
                     collect_attn: list = None) -> Tensor:
    """Per-patch features: (num_patches, D) for a (C,H,W) input, batched
    (B, num_patches, D) for (B,C,H,W). Masked patches have their
    embedding replaced by the mask embedding before any mixing."""
    cfg = model.config
    arr = np.asarray(hist, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    patches = patchify(arr, cfg.patch)
    if patches.shape[1] != cfg.num_patches:
        raise ShapeMismatch("forward_backbone", (cfg.rows, cfg.cols),
                            (arr.shape[-2] // cfg.patch, arr.shape[-1] // cfg.patch))
    x = ad.matmul(Tensor(patches), model.params["patch_embed.w"]) + model.params["patch_embed.b"]
    if mask is not None and len(mask):
        keep = np.ones((cfg.num_patches, cfg.dim))
        keep[np.asarray(mask, dtype=np.int64)] = 0.0
        x = x * Tensor(keep) + model.params["mask_embed"] * Tensor(1.0 - keep)
    bias = _pos_bias(model)
    for i in range(cfg.layers):
        p = f"blocks.{i}."
        normed = ad.layer_norm(x, model.params[p + "ln1.g"], model.params[p + "ln1.b"])
        x = x + _attention(normed, model.params, p, cfg, bias, collect_attn)
        normed = ad.layer_norm(x, model.params[p + "ln2.g"], model.params[p + "ln2.b"])
        hidden = ad.gelu(ad.matmul(normed, model.params[p + "mlp.w1"]) + model.params[p + "mlp.b1"])
        x = x + ad.matmul(hidden, model.params[p + "mlp.w2"]) + model.params[p + "mlp.b2"]
    x = ad.layer_norm(x, model.params["ln_f.g"], model.params["ln_f.b"])
    return ad.reshape(x, x.shape[1:]) if single else x


def _masked_rows(values: Tensor, mask: np.ndarray) -> Tensor:
    """Select mask positions from (B, n, K) rows -> (B*|M|, K)."""
    bsz, n, k = values.shape
    flat = ad.reshape(values, (bsz * n, k))
    idx = (np.arange(bsz)[:, None] * n + np.asarray(mask)[None, :]).reshape(-1)
    return ad.gather_rows(flat, idx)


def mem_logits(model: VitModel, hist: np.ndarray, mask: np.ndarray) -> Tensor:
    """Token-prediction logits for every position: (B, n, N)."""
    features = forward_backbone(model, hist, mask)
    return ad.matmul(features, model.params["mem_head.w"]) + model.params["mem_head.b"]


def mem_loss(model: VitModel, hist: np.ndarray, tokens: np.ndarray, mask: np.ndarray = None,
             rng: np.random.Generator = None, ratio: float = 0.5) -> Tensor:
    """Cross-entropy between predicted and tokenizer ids, averaged over
    the masked positions only. mask=None samples one internally (needs
    rng); an empty mask is an error."""
    arr = np.asarray(hist, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    tokens = np.asarray(tokens).reshape(arr.shape[0], -1)
    if mask is None:
        mask = sample_mask(model.config.num_patches, ratio, rng)
    if len(mask) == 0:
        raise EmptyMask()
    logits = _masked_rows(mem_logits(model, arr, mask), mask)
    labels = tokens[:, np.asarray(mask)].reshape(-1)
    return ad.cross_entropy(logits, labels)


def masked_token_accuracy(model: VitModel, hist: np.ndarray, tokens: np.ndarray,
                          mask: np.ndarray) -> float:
    """Fraction of masked positions whose argmax prediction matches."""
    arr = np.asarray(hist, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    tokens = np.asarray(tokens).reshape(arr.shape[0], -1)
    with ad.no_grad():
        logits = mem_logits(model, arr, mask)
    pred = logits.data[:, np.asarray(mask), :].argmax(axis=-1)
    return float((pred == tokens[:, np.asarray(mask)]).mean())


def emae_loss(model: VitModel, hist: np.ndarray, mask: np.ndarray, mode: str) -> Tensor:
    """Pixel-regression objective: MSE between the pixel head's patch
    reconstructions and the true patches, over masked patches only
    ("only_mask") or all patches ("entire_hist")."""
    if mode not in ("only_mask", "entire_hist"):
        raise ValueError(f"mode must be only_mask or entire_hist, got {mode!r}")
    if "pixel_head.w" not in model.params:
        raise KeyError("model has no pixel head; init with with_pixel_head=True")
    arr = np.asarray(hist, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    features = forward_backbone(model, arr, mask)
    recon = ad.matmul(features, model.params["pixel_head.w"]) + model.params["pixel_head.b"]
    target = patchify(arr, model.config.patch)
    if mode == "entire_hist":
        return ad.mse(recon, Tensor(target))
    if mask is None or len(mask) == 0:
        raise EmptyMask()
    bsz, n, k = recon.shape
    idx = (np.arange(bsz)[:, None] * n + np.asarray(mask)[None, :]).reshape(-1)
    sel_target = target.reshape(bsz * n, k)[idx]
    return ad.mse(_masked_rows(recon, mask), Tensor(sel_target))


@dataclass
class PretrainConfig:
    steps: int = 800
    batch_size: int = 16
    lr: float = 1e-3
    betas: tuple = (0.9, 0.95)
    weight_decay: float = 0.05
    warmup_frac: float = 0.1
    min_lr: float = 1e-5
    clip_norm: float = 30.0
    mask_ratio: float = 0.5
    objective: str = "mem"  # or emae_only_mask / emae_entire
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: VitConfig = field(default_factory=VitConfig)


def pretrain(dvae_model: DvaeModel, dataset: LabeledDataset, config: PretrainConfig,
             start_step: int = 0, stop_step: int = None, model: VitModel = None,
             opt_state: dict = None):
    """Masked-patch pretraining against the frozen tokenizer. Returns
    (model, curve, opt_state); curve rows are (step, loss, lr,
    masked_token_accuracy). The accuracy column is NaN for the pixel
    objectives (no token predictions there). Segment semantics match
    train_dvae: schedules span config.steps."""
    cfg = config
    if cfg.objective not in ("mem", "emae_only_mask", "emae_entire"):
        raise ValueError(f"unknown objective {cfg.objective!r}")
    pixel = cfg.objective.startswith("emae")
    if model is None:
        model = init_vit(cfg.model, step_rng(cfg.seed, STAGE_PRETRAIN, INIT_STEP),
                         with_pixel_head=pixel)
    opt = Adam(model.params, lr=cfg.lr, betas=cfg.betas,
               weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    if opt_state is not None:
        opt.load_state_dict(opt_state)
    warmup = int(cfg.steps * cfg.warmup_frac)
    curve = []
    for step in range(start_step, cfg.steps if stop_step is None else stop_step):
        rng = step_rng(cfg.seed, STAGE_PRETRAIN, step)
        idx = rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)), replace=False)
        hists = batch_train(dataset, idx, cfg.preprocess, rng)
        mask = sample_mask(cfg.model.num_patches, cfg.mask_ratio, rng)
        if pixel:
            loss = emae_loss(model, hists, mask,
                             "only_mask" if cfg.objective == "emae_only_mask" else "entire_hist")
            acc = float("nan")
        else:
            tokens = tokenize(dvae_model, hists)
            loss = mem_loss(model, hists, tokens, mask)
            acc = masked_token_accuracy(model, hists, tokens, mask)
        opt.zero_grad()
        ad.backward(loss)
        lr = cosine_warmup_lr(step, cfg.steps, cfg.lr, warmup, cfg.min_lr)
        opt.step(lr=lr)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"pretraining loss diverged at step {step}")
        curve.append((step, float(loss.data), lr, acc))
    return model, curve, opt.state_dict()


def predict_masked_tokens(dvae_model: DvaeModel, vit_model: VitModel, hist: np.ndarray,
                          mask: np.ndarray) -> np.ndarray:
    """Merged token grid: the tokenizer's own ids at visible positions,
    the backbone's argmax predictions at masked positions."""
    tokens = tokenize(dvae_model, hist).copy()
    flat = tokens.reshape(-1)
    if mask is not None and len(mask):
        with ad.no_grad():
            logits = mem_logits(vit_model, hist[None], mask)
        flat[np.asarray(mask)] = logits.data[0, np.asarray(mask), :].argmax(axis=-1)
    return tokens


@dataclass
class ReconTriple:
    masked: bytes  # input with masked patches blanked
    recon: bytes  # decoded merged tokens
    truth: bytes  # the input itself
    recon_hist: np.ndarray


def reconstruct_masked(dvae_model: DvaeModel, vit_model: VitModel, hist: np.ndarray,
                       mask: np.ndarray, out_prefix: str = None) -> ReconTriple:
    """Render (masked input, reconstruction, ground truth) for one
    histogram. With an empty mask the reconstruction is exactly the
    tokenizer's own autoencoding of the input. out_prefix writes
    <prefix>_{masked,recon,truth}.ppm."""
    arr = np.asarray(hist, dtype=np.float64)
    c, h, w = arr.shape
    p = dvae_model.config.patch
    cols = w // p
    masked_view = arr.copy()
    if mask is not None:
        for k in np.asarray(mask, dtype=np.int64).reshape(-1):
            r, col = divmod(int(k), cols)
            masked_view[:, r * p:(r + 1) * p, col * p:(col + 1) * p] = 0.0
    tokens = predict_masked_tokens(dvae_model, vit_model, arr, mask)
    one_hot = np.eye(dvae_model.config.vocab_size)[tokens.reshape(-1)]
    with ad.no_grad():
        recon_hist = decode(dvae_model, Tensor(one_hot), h, w).data
    triple = ReconTriple(
        masked=render(masked_view),
        recon=render(recon_hist),
        truth=render(arr),
        recon_hist=recon_hist,
    )
    if out_prefix is not None:
        for name in ("masked", "recon", "truth"):
            with open(f"{out_prefix}_{name}.ppm", "wb") as f:
                f.write(getattr(triple, name))
    return triple
