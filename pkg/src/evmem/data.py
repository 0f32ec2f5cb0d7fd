"""Dataset containers and the stream -> network-input pipeline.

The training pipeline, in draw order (one rng drives every stochastic
choice, so a step seed fixes the whole sample):

    slice_events -> flip_polarity -> hflip -> jitter
    -> layout histogram -> hot-pixel removal -> count normalization
    -> optional bilinear resize -> rand_augment

Evaluation preprocessing is the deterministic subset: first-n_max slice,
layout histogram, hot-pixel removal, normalization, optional resize.

Layouts: "c2" (polarity counts), "c3" (counts + latest-timestamp
channel), "c8" (four time chunks x two polarities). The c3 timestamp
channel is already in [0, 1] by construction, so count normalization
and the hot-pixel statistic apply to the count channels only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import augment as aug
from . import histogram as hg
from .events import EventStream

STAGE_GEN = 0
STAGE_DVAE = 1
STAGE_PRETRAIN = 2
STAGE_FINETUNE = 3
STAGE_PROBE = 4
STAGE_EVAL = 5
STAGE_SPLIT = 6

# reserved step index for parameter-init draws, far past any real step
INIT_STEP = 2**62


def step_rng(seed: int, stage: int, step: int) -> np.random.Generator:
    """Generator for one (stage, step) cell. Deriving every step's rng
    from the triple keeps resumed runs bit-identical to uninterrupted
    ones: step k draws the same values no matter where the run started."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stage), int(step)]))


@dataclass
class LabeledDataset:
    streams: list
    labels: np.ndarray
    num_classes: int
    split: str  # "train" or "test"
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.streams) != len(self.labels):
            raise ValueError("streams and labels must have equal length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        if not self.ids:
            self.ids = list(range(len(self.streams)))

    def __len__(self) -> int:
        return len(self.streams)

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            [self.streams[i] for i in indices],
            self.labels[indices],
            self.num_classes,
            self.split,
            [self.ids[i] for i in indices],
        )


@dataclass
class SegSample:
    stream: EventStream
    class_map: np.ndarray  # (H, W) int ids, 0 = background
    sample_id: int = 0

    def __post_init__(self):
        self.class_map = np.asarray(self.class_map, dtype=np.int64)
        if self.class_map.shape != (self.stream.height, self.stream.width):
            raise ValueError("class map dims must match sensor dims")


@dataclass
class PreprocessConfig:
    layout: str = "c2"
    n_max: int = hg.N_MAX_DEFAULT
    hot_pixel_k: float = 10.0
    target_size: tuple | None = None  # (H, W) resize, None keeps native
    augment: aug.AugmentConfig = field(default_factory=aug.AugmentConfig)
    use_randaugment: bool = True

    def validate(self) -> "PreprocessConfig":
        if self.layout not in _LAYOUT_KEYS:
            raise ValueError(f"layout must be one of {sorted(_LAYOUT_KEYS)}, got {self.layout!r}")
        self.augment.validate()
        return self


def _layout_histogram(stream: EventStream, layout: str, n_max: int) -> np.ndarray:
    if layout == "c2":
        return hg.build_histogram(stream, n_max)
    if layout == "c3":
        return hg.add_timestamp_channel(stream, n_max)
    if layout == "c8":
        return hg.build_time_slices(stream, n_max)
    raise ValueError(f"unknown layout {layout!r}")


_LAYOUT_KEYS = {"c2": "two_polarity", "c3": "two_polarity_timestamp", "c8": "four_slices_two_polarity"}


def _finish(hist: np.ndarray, layout: str, cfg: PreprocessConfig) -> np.ndarray:
    count_channels = (0, 1) if layout == "c3" else None
    hist = hg.remove_hot_pixels(hist, cfg.hot_pixel_k, count_channels=count_channels)
    if layout == "c3":
        hist[:2] = hg.normalize(hist[:2])  # timestamp channel is pre-scaled
    else:
        hist = hg.normalize(hist)
    if cfg.target_size is not None:
        hist = hg.resize_bilinear(hist, cfg.target_size[0], cfg.target_size[1])
    return hist


def layout_channels(layout: str) -> int:
    return hg.LAYOUTS[_LAYOUT_KEYS[layout]]


def preprocess_train(stream: EventStream, cfg: PreprocessConfig, rng: np.random.Generator) -> np.ndarray:
    a = cfg.augment
    s = aug.slice_events(stream, cfg.n_max, rng)
    s = aug.flip_polarity(s, a.p_polarity_flip, rng)
    s = aug.hflip(s, a.p_hflip, rng)
    s = aug.jitter(s, a.jitter_range, rng)
    hist = _finish(_layout_histogram(s, cfg.layout, cfg.n_max), cfg.layout, cfg)
    if cfg.use_randaugment and a.randaugment_ops > 0:
        hist = aug.rand_augment(hist, a.randaugment_ops, a.randaugment_magnitude, rng)
    return hist


def preprocess_eval(stream: EventStream, cfg: PreprocessConfig) -> np.ndarray:
    return _finish(_layout_histogram(stream, cfg.layout, cfg.n_max), cfg.layout, cfg)


def batch_train(dataset: LabeledDataset, indices, cfg: PreprocessConfig, rng) -> np.ndarray:
    return np.stack([preprocess_train(dataset.streams[i], cfg, rng) for i in indices])


def batch_eval(dataset: LabeledDataset, indices, cfg: PreprocessConfig) -> np.ndarray:
    return np.stack([preprocess_eval(dataset.streams[i], cfg) for i in indices])
