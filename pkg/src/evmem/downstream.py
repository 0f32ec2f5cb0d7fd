"""Heads and training loops that consume the pretrained backbone:
classification finetuning, frozen-backbone linear probing, stratified
few-label splits, and a toy per-patch segmentation head with
aAcc/mAcc/mIoU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import (
    STAGE_EVAL,
    STAGE_FINETUNE,
    STAGE_PROBE,
    STAGE_SPLIT,
    LabeledDataset,
    PreprocessConfig,
    batch_eval,
    batch_train,
    preprocess_eval,
    step_rng,
)
from .optim import Adam, cosine_warmup_lr
from .vit import VitConfig, VitModel, forward_backbone


class InsufficientSamples(ValueError):
    def __init__(self, class_id: int):
        self.class_id = class_id
        super().__init__(f"class {class_id} has too few samples for the requested split")


HEAD_PREFIXES = ("mem_head.", "pixel_head.")


def _copy_backbone(backbone: VitModel) -> dict:
    return {
        name: Tensor(p.data.copy(), requires_grad=True)
        for name, p in backbone.params.items()
        if not name.startswith(HEAD_PREFIXES)
    }


@dataclass
class ClassifierModel:
    config: VitConfig
    params: dict
    pos_index: np.ndarray
    num_classes: int


def attach_classifier(backbone: VitModel, num_classes: int) -> ClassifierModel:
    """Fresh classifier over a deep copy of the backbone: pretraining
    heads are discarded and a zero-initialized K-way linear head is
    added, so the untrained classifier predicts uniformly (CE = ln K).
    The copy keeps the source model reusable across runs."""
    params = _copy_backbone(backbone)
    params["cls_head.w"] = Tensor(np.zeros((backbone.config.dim, num_classes)), requires_grad=True)
    params["cls_head.b"] = Tensor(np.zeros(num_classes), requires_grad=True)
    return ClassifierModel(backbone.config, params, backbone.pos_index.copy(), num_classes)


def forward_classifier(model: ClassifierModel, hist: np.ndarray) -> Tensor:
    """Mean-pooled patch features through the linear head: (B, K)."""
    arr = np.asarray(hist, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    features = forward_backbone(model, arr)
    pooled = ad.tmean(features, axis=(1,))
    logits = ad.matmul(pooled, model.params["cls_head.w"]) + model.params["cls_head.b"]
    return ad.reshape(logits, logits.shape[1:]) if single else logits


def layerwise_lr_scales(config: VitConfig, params: dict, decay: float) -> dict:
    """Deepest block trains at the base lr and each earlier block is
    scaled down by another factor of decay; the patch/mask/position
    embeddings sit below block 0; the final norm and the task head are
    never scaled."""
    scales = {}
    for name in params:
        if name.startswith("blocks."):
            i = int(name.split(".")[1])
            scales[name] = decay ** (config.layers - 1 - i)
        elif name.startswith(("patch_embed.", "mask_embed", "pos_bias")):
            scales[name] = decay ** config.layers
        else:
            scales[name] = 1.0
    return scales


@dataclass
class FinetuneConfig:
    steps: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.05
    layer_decay: float = 0.65
    warmup_frac: float = 0.1
    min_lr: float = 1e-6
    clip_norm: float = None
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)


def finetune(model: ClassifierModel, dataset: LabeledDataset, config: FinetuneConfig,
             start_step: int = 0, stop_step: int = None, opt_state: dict = None):
    """Supervised finetuning with layer-wise lr decay. Returns (model,
    curve, opt_state); curve rows are (step, loss, lr, batch_top1).
    Segment semantics match the other trainers."""
    cfg = config
    opt = Adam(model.params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay,
               clip_norm=cfg.clip_norm,
               lr_scale=layerwise_lr_scales(model.config, model.params, cfg.layer_decay))
    if opt_state is not None:
        opt.load_state_dict(opt_state)
    warmup = int(cfg.steps * cfg.warmup_frac)
    curve = []
    for step in range(start_step, cfg.steps if stop_step is None else stop_step):
        rng = step_rng(cfg.seed, STAGE_FINETUNE, step)
        idx = rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)), replace=False)
        hists = batch_train(dataset, idx, cfg.preprocess, rng)
        labels = dataset.labels[idx]
        logits = forward_classifier(model, hists)
        loss = ad.cross_entropy(logits, labels)
        opt.zero_grad()
        ad.backward(loss)
        lr = cosine_warmup_lr(step, cfg.steps, cfg.lr, warmup, cfg.min_lr)
        opt.step(lr=lr)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"finetuning loss diverged at step {step}")
        curve.append((step, float(loss.data), lr, topk_accuracy(logits.data, labels, 1)))
    return model, curve, opt.state_dict()


def eval_classifier(model: ClassifierModel, dataset: LabeledDataset,
                    preprocess: PreprocessConfig, batch_size: int = 32) -> float:
    """Deterministic top-1 accuracy over a dataset."""
    hits, total = 0.0, 0
    for lo in range(0, len(dataset), batch_size):
        idx = range(lo, min(lo + batch_size, len(dataset)))
        hists = batch_eval(dataset, idx, preprocess)
        with ad.no_grad():
            logits = forward_classifier(model, hists)
        hits += topk_accuracy(logits.data, dataset.labels[lo:lo + len(hists)], 1) * len(hists)
        total += len(hists)
    return hits / max(total, 1)


def backbone_features(backbone, dataset: LabeledDataset, preprocess: PreprocessConfig,
                      batch_size: int = 32) -> np.ndarray:
    """Mean-pooled deterministic features for every sample: (N, D)."""
    out = []
    for lo in range(0, len(dataset), batch_size):
        idx = range(lo, min(lo + batch_size, len(dataset)))
        hists = batch_eval(dataset, idx, preprocess)
        with ad.no_grad():
            features = forward_backbone(backbone, hists)
        out.append(features.data.mean(axis=1))
    return np.concatenate(out, axis=0)


@dataclass
class ProbeConfig:
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-2
    weight_decay: float = 0.0
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)


def linear_probe(backbone, train_set: LabeledDataset, test_set: LabeledDataset,
                 config: ProbeConfig):
    """Logistic head on frozen mean-pooled features. The backbone is
    never touched (its tensors are only read under no_grad); features for
    both splits use the deterministic eval pipeline.

    Training runs on features whitened with train-set statistics (the
    usual normalization in front of a probe; learned features have wildly
    uneven per-dim scales). The whitening is folded into the returned
    head, so it stays a plain linear map on raw features. Returns (head
    params, test top-1)."""
    cfg = config
    x_train = backbone_features(backbone, train_set, cfg.preprocess)
    x_test = backbone_features(backbone, test_set, cfg.preprocess)
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0) + 1e-8  # keeps dead feature dims finite
    x_white = (x_train - mu) / sd
    k = train_set.num_classes
    head = {
        "probe.w": Tensor(np.zeros((x_train.shape[1], k)), requires_grad=True),
        "probe.b": Tensor(np.zeros(k), requires_grad=True),
    }
    opt = Adam(head, lr=cfg.lr, weight_decay=cfg.weight_decay)
    for step in range(cfg.steps):
        rng = step_rng(cfg.seed, STAGE_PROBE, step)
        idx = rng.choice(len(x_white), size=min(cfg.batch_size, len(x_white)), replace=False)
        logits = ad.matmul(Tensor(x_white[idx]), head["probe.w"]) + head["probe.b"]
        loss = ad.cross_entropy(logits, train_set.labels[idx])
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
    # fold the whitening: ((x - mu) / sd) W + b == x (W / sd) + (b - (mu / sd) W)
    w = head["probe.w"].data / sd[:, None]
    b = head["probe.b"].data - (mu / sd) @ head["probe.w"].data
    head = {"probe.w": Tensor(w, requires_grad=True),
            "probe.b": Tensor(b, requires_grad=True)}
    test_logits = x_test @ w + b
    return head, topk_accuracy(test_logits, test_set.labels, 1)


def split_labels(dataset: LabeledDataset, fractions, seed: int) -> list:
    """Mutually exclusive stratified subsets, one per fraction. Cell j
    holds round(len(dataset) * fractions[j]) samples, apportioned across
    classes by largest remainder, with at least one sample of every class
    per cell. Raises InsufficientSamples when a class pool cannot cover
    its seats."""
    fractions = [float(f) for f in fractions]
    if any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if sum(fractions) > 1.0 + 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, must be <= 1")
    labels = dataset.labels
    classes = range(dataset.num_classes)
    pools = {}
    rng = step_rng(seed, STAGE_SPLIT, 0)
    for c in classes:
        pool = np.flatnonzero(labels == c)
        pools[c] = list(rng.permutation(pool))

    class_sizes = {c: int(np.sum(labels == c)) for c in classes}
    seats = []  # per cell: class -> count
    for f in fractions:
        target = int(np.floor(len(dataset) * f + 0.5))
        base = {c: int(np.floor(class_sizes[c] * f)) for c in classes}
        remainder = {c: class_sizes[c] * f - base[c] for c in classes}
        leftover = target - sum(base.values())
        for c in sorted(classes, key=lambda c: (-remainder[c], c))[:max(leftover, 0)]:
            base[c] += 1
        for c in classes:  # enforce stratification within the same cell size
            while base[c] == 0:
                donor = max(classes, key=lambda d: (base[d], -d))
                if base[donor] <= 1:
                    raise InsufficientSamples(c)
                base[donor] -= 1
                base[c] += 1
        seats.append(base)

    for c in classes:
        need = sum(cell[c] for cell in seats)
        if need > len(pools[c]):
            raise InsufficientSamples(c)

    cells = []
    for cell_seats in seats:
        take = []
        for c in classes:
            take.extend(pools[c][:cell_seats[c]])
            pools[c] = pools[c][cell_seats[c]:]
        cells.append(dataset.subset(sorted(take)))
    return cells


def save_manifest(dataset: LabeledDataset, path) -> None:
    """One sample id per line; the textual record of a label split."""
    with open(path, "w") as f:
        for sample_id in dataset.ids:
            f.write(f"{sample_id}\n")


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int = 1) -> float:
    """Fraction of rows whose label is among the k highest logits. Ties
    rank the lowest class id first, so uniform logits predict class 0."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float((order == labels[:, None]).any(axis=1).mean())


@dataclass
class SegModel:
    config: VitConfig
    params: dict
    pos_index: np.ndarray
    num_classes: int


def attach_segmenter(backbone: VitModel, num_classes: int) -> SegModel:
    """Per-patch K-way head over a deep copy of the backbone."""
    params = _copy_backbone(backbone)
    params["seg_head.w"] = Tensor(np.zeros((backbone.config.dim, num_classes)), requires_grad=True)
    params["seg_head.b"] = Tensor(np.zeros(num_classes), requires_grad=True)
    return SegModel(backbone.config, params, backbone.pos_index.copy(), num_classes)


def forward_segmenter(model: SegModel, hist: np.ndarray) -> Tensor:
    """Per-patch class logits: (B, num_patches, K)."""
    arr = np.asarray(hist, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    features = forward_backbone(model, arr)
    return ad.matmul(features, model.params["seg_head.w"]) + model.params["seg_head.b"]


def predict_segmenter(model: SegModel, hist: np.ndarray) -> np.ndarray:
    """Per-pixel class map(s): patch argmax, nearest-neighbor upsampled
    to the pixel grid. Ties take the lowest class id."""
    arr = np.asarray(hist, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    with ad.no_grad():
        logits = forward_segmenter(model, arr)
    cfg = model.config
    ids = logits.data.argmax(axis=-1).reshape(arr.shape[0], cfg.rows, cfg.cols)
    maps = np.repeat(np.repeat(ids, cfg.patch, axis=1), cfg.patch, axis=2)
    return maps[0] if single else maps


def _patch_label_counts(class_map: np.ndarray, patch: int, num_classes: int) -> np.ndarray:
    """(num_patches, K) pixel-label counts per patch."""
    h, w = class_map.shape
    rows, cols = h // patch, w // patch
    blocks = class_map.reshape(rows, patch, cols, patch).transpose(0, 2, 1, 3).reshape(-1, patch * patch)
    return np.stack([np.bincount(b, minlength=num_classes) for b in blocks]).astype(np.float64)


@dataclass
class SegTrainConfig:
    steps: int = 300
    batch_size: int = 8
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.05
    layer_decay: float = 0.65
    warmup_frac: float = 0.1
    min_lr: float = 1e-6
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)


def train_segmenter(model: SegModel, samples: list, config: SegTrainConfig):
    """Minimizes per-pixel cross-entropy, computed as per-patch CE
    weighted by in-patch pixel-label counts (the two are equal under
    nearest upsampling). Histograms use the deterministic pipeline:
    geometric augments would desync the label maps. Returns (model,
    curve, opt_state) with curve rows (step, loss, lr)."""
    cfg = config
    opt = Adam(model.params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay,
               lr_scale=layerwise_lr_scales(model.config, model.params, cfg.layer_decay))
    warmup = int(cfg.steps * cfg.warmup_frac)
    k = model.num_classes
    patch = model.config.patch
    curve = []
    for step in range(cfg.steps):
        rng = step_rng(cfg.seed, STAGE_FINETUNE, step)
        idx = rng.choice(len(samples), size=min(cfg.batch_size, len(samples)), replace=False)
        hists = np.stack([preprocess_eval(samples[i].stream, cfg.preprocess) for i in idx])
        counts = np.stack([_patch_label_counts(samples[i].class_map, patch, k) for i in idx])
        logp = ad.log_softmax(forward_segmenter(model, hists))
        pixels = counts.sum()
        loss = ad.tsum(logp * Tensor(counts)) * (-1.0 / pixels)
        opt.zero_grad()
        ad.backward(loss)
        lr = cosine_warmup_lr(step, cfg.steps, cfg.lr, warmup, cfg.min_lr)
        opt.step(lr=lr)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"segmentation loss diverged at step {step}")
        curve.append((step, float(loss.data), lr))
    return model, curve, opt.state_dict()


def seg_confusion(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    """K x K counts, rows = truth, columns = prediction."""
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth must have equal size")
    return np.bincount(truth * num_classes + pred, minlength=num_classes ** 2).reshape(
        num_classes, num_classes
    )


def seg_metrics(confusion: np.ndarray) -> tuple:
    """(aAcc, mAcc, mIoU) from a confusion matrix. aAcc is overall pixel
    accuracy; mAcc averages recall over classes present in the truth;
    mIoU averages TP/(TP+FP+FN) over classes present in truth or
    prediction."""
    confusion = np.asarray(confusion, dtype=np.float64)
    total = confusion.sum()
    tp = np.diag(confusion)
    truth_count = confusion.sum(axis=1)
    pred_count = confusion.sum(axis=0)
    a_acc = tp.sum() / total if total else 0.0
    in_truth = truth_count > 0
    m_acc = float((tp[in_truth] / truth_count[in_truth]).mean()) if in_truth.any() else 0.0
    present = (truth_count + pred_count) > 0
    union = truth_count + pred_count - tp
    m_iou = float((tp[present] / union[present]).mean()) if present.any() else 0.0
    return float(a_acc), m_acc, m_iou


def eval_segmenter(model: SegModel, samples: list, preprocess: PreprocessConfig) -> dict:
    """Aggregate confusion over samples, then the three metrics."""
    k = model.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for sample in samples:
        hist = preprocess_eval(sample.stream, preprocess)
        pred = predict_segmenter(model, hist)
        confusion += seg_confusion(pred, sample.class_map, k)
    a_acc, m_acc, m_iou = seg_metrics(confusion)
    return {"aAcc": a_acc, "mAcc": m_acc, "mIoU": m_iou}
