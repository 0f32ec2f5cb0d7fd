"""Synthetic event scenes: moving shapes under an idealized event model.

A scene is one anti-aliased shape (bar, circle, cross, triangle) on a
dark background, translating linearly across the frame sequence. Events
come from the standard threshold model: each pixel tracks a reference
log-intensity, and every crossing of +/-c along the linearly
interpolated path between frames emits one event at the interpolated
microsecond, moving the reference by one threshold step.

Class identity lives purely in shape geometry: size, speed, heading,
start position, and contrast share one distribution across classes, so
nothing about raw event counts gives the class away.
"""

from __future__ import annotations

import os
import struct

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, SegSample
from .events import EventStream

SHAPES = ("bar", "circle", "cross", "triangle")

BACKGROUND = 0.05  # intensity floor; keeps log() finite
FRAME_DT_US = 1000


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    width: int
    height: int
    frames: int
    start: tuple  # (x, y) shape center at frame 0
    velocity: tuple  # (vx, vy) px/frame
    size: float  # characteristic radius, px
    angle: float  # orientation, radians
    contrast: float  # log-intensity threshold c

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if self.contrast <= 0:
            raise ValueError("contrast threshold must be > 0")
        if self.frames < 2:
            raise ValueError("need at least 2 frames to produce events")


def _shape_distance(spec: SceneSpec, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Signed distance to the shape boundary (negative inside), px units."""
    ca, sa = np.cos(spec.angle), np.sin(spec.angle)
    u = ca * px + sa * py
    v = -sa * px + ca * py
    r = spec.size
    if spec.shape == "circle":
        return np.hypot(px, py) - r
    if spec.shape == "bar":
        return np.maximum(np.abs(u) - r, np.abs(v) - 0.28 * r)
    if spec.shape == "cross":
        arm = 0.22 * r
        bar1 = np.maximum(np.abs(u) - r, np.abs(v) - arm)
        bar2 = np.maximum(np.abs(v) - r, np.abs(u) - arm)
        return np.minimum(bar1, bar2)
    # equilateral triangle with circumradius r: intersection of 3 half-planes
    d = None
    for k in range(3):
        a = spec.angle + np.pi / 2 + k * 2 * np.pi / 3
        plane = px * np.cos(a) + py * np.sin(a) - 0.5 * r
        d = plane if d is None else np.maximum(d, plane)
    return d


def render_frame(spec: SceneSpec, index: int) -> np.ndarray:
    """Intensity image in [BACKGROUND, 1] with a ~1 px anti-aliased edge."""
    if not 0 <= index < spec.frames:
        raise ValueError(f"frame index {index} outside [0, {spec.frames})")
    cx = spec.start[0] + spec.velocity[0] * index
    cy = spec.start[1] + spec.velocity[1] * index
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width]
    dist = _shape_distance(spec, xs - cx, ys - cy)
    coverage = np.clip(0.5 - dist, 0.0, 1.0)
    return BACKGROUND + (1.0 - BACKGROUND) * coverage


def render_class_map(spec: SceneSpec, index: int, class_id: int) -> np.ndarray:
    """Per-pixel ids: 0 background, class_id + 1 where the shape covers
    at least half the pixel."""
    cx = spec.start[0] + spec.velocity[0] * index
    cy = spec.start[1] + spec.velocity[1] * index
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width]
    dist = _shape_distance(spec, xs - cx, ys - cy)
    return np.where(dist <= 0.0, class_id + 1, 0).astype(np.int64)


def frames_to_events(frames: np.ndarray, threshold: float, dt_us: int = FRAME_DT_US) -> EventStream:
    """Threshold-crossing events with linearly interpolated timestamps.

    Per pixel the reference starts at log(frame 0); a frame step from
    prev to cur emits floor(|cur - ref| / c) events at the levels
    ref + j*c*sign, each time-stamped where the linear path prev->cur
    crosses that level, and advances ref by the emitted steps.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise ValueError("frames must be (T, H, W) with T >= 1")
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    t_count, height, width = frames.shape
    logs = np.log(frames)
    ref = logs[0].copy()
    all_t, all_x, all_y, all_p = [], [], [], []
    for k in range(t_count - 1):
        prev, cur = logs[k], logs[k + 1]
        delta = cur - ref
        sign = np.sign(delta)
        n = np.floor(np.abs(delta) / threshold).astype(np.int64)
        top = int(n.max()) if n.size else 0
        for j in range(1, top + 1):
            active = n >= j
            ay, ax = np.nonzero(active)
            level = ref[active] + sign[active] * (j * threshold)
            denom = cur[active] - prev[active]
            # float residue can owe a crossing to a step where prev == cur;
            # emit it at the frame boundary and clamp any rounding spill
            frac = np.where(denom != 0.0, (level - prev[active]) / np.where(denom != 0.0, denom, 1.0), 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            all_t.append(np.round((k + frac) * dt_us).astype(np.uint64))
            all_x.append(ax.astype(np.uint64))
            all_y.append(ay.astype(np.uint64))
            all_p.append(sign[active].astype(np.int8))
        ref += sign * n * threshold
    if not all_t:
        return EventStream(width, height, [], [], [], [])
    t = np.concatenate(all_t)
    x = np.concatenate(all_x)
    y = np.concatenate(all_y)
    p = np.concatenate(all_p)
    order = np.argsort(t, kind="stable")
    return EventStream(width, height, t[order], x[order], y[order], p[order])


def make_scene(
    class_id: int,
    rng: np.random.Generator,
    width: int = 64,
    height: int = 64,
    frames: int = 12,
) -> SceneSpec:
    """Random trajectory/size/orientation for one class; the path is
    clamped so the shape stays inside the sensor at every frame."""
    size = rng.uniform(0.14, 0.26) * min(width, height)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    speed = rng.uniform(0.8, 2.2)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    vx, vy = speed * np.cos(heading), speed * np.sin(heading)
    contrast = rng.uniform(0.2, 0.3)
    margin = size + 1.0
    span = frames - 1

    def pick_start(extent: float, v: float) -> float:
        lo = margin + max(0.0, -v * span)
        hi = extent - 1 - margin - max(0.0, v * span)
        if hi <= lo:  # too fast for the sensor; park in the middle
            return extent / 2.0
        return rng.uniform(lo, hi)

    max_disp_x = width - 1 - 2 * margin
    max_disp_y = height - 1 - 2 * margin
    if abs(vx * span) > max_disp_x:
        vx = np.sign(vx) * max_disp_x / span
    if abs(vy * span) > max_disp_y:
        vy = np.sign(vy) * max_disp_y / span
    start = (pick_start(width, vx), pick_start(height, vy))
    return SceneSpec(
        shape=SHAPES[class_id],
        width=width,
        height=height,
        frames=frames,
        start=start,
        velocity=(vx, vy),
        size=size,
        angle=angle,
        contrast=contrast,
    )


def _scene_stream(spec: SceneSpec) -> EventStream:
    frames = np.stack([render_frame(spec, i) for i in range(spec.frames)])
    return frames_to_events(frames, spec.contrast)


def gen_dataset(
    per_class: int,
    seed: int,
    width: int = 64,
    height: int = 64,
    frames: int = 12,
    num_classes: int = len(SHAPES),
    train_frac: float = 0.8,
):
    """(train, test) LabeledDatasets with an exact per-class 80/20 split.
    Sample ids encode (class, index) and are unique across both splits."""
    if not 1 <= num_classes <= len(SHAPES):
        raise ValueError(f"num_classes must be in [1, {len(SHAPES)}]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    n_train = int(round(per_class * train_frac))
    tr_streams, tr_labels, tr_ids = [], [], []
    te_streams, te_labels, te_ids = [], [], []
    for class_id in range(num_classes):
        for i in range(per_class):
            spec = make_scene(class_id, rng, width, height, frames)
            stream = _scene_stream(spec)
            sample_id = class_id * per_class + i
            if i < n_train:
                tr_streams.append(stream)
                tr_labels.append(class_id)
                tr_ids.append(sample_id)
            else:
                te_streams.append(stream)
                te_labels.append(class_id)
                te_ids.append(sample_id)
    train = LabeledDataset(tr_streams, np.array(tr_labels), num_classes, "train", tr_ids)
    test = LabeledDataset(te_streams, np.array(te_labels), num_classes, "test", te_ids)
    return train, test


def gen_seg_dataset(
    per_class: int,
    seed: int,
    width: int = 64,
    height: int = 64,
    frames: int = 12,
    num_classes: int = len(SHAPES),
):
    """SegSamples whose class map is rendered at the middle frame (the
    temporal center of the event slice). Ids class-major, like gen_dataset."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    samples = []
    for class_id in range(num_classes):
        for i in range(per_class):
            spec = make_scene(class_id, rng, width, height, frames)
            stream = _scene_stream(spec)
            class_map = render_class_map(spec, frames // 2, class_id)
            samples.append(SegSample(stream, class_map, class_id * per_class + i))
    return samples


def write_mask(class_map: np.ndarray, path) -> None:
    """Segmentation mask file: u32-LE width, u32-LE height, then
    height*width class-id bytes row-major. Ids must fit in a byte."""
    class_map = np.asarray(class_map)
    if class_map.ndim != 2:
        raise ValueError("class map must be 2-D")
    if class_map.min() < 0 or class_map.max() > 255:
        raise ValueError("class ids must lie in [0, 255]")
    h, w = class_map.shape
    payload = struct.pack("<II", w, h) + class_map.astype(np.uint8).tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def read_mask(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8:
        raise ValueError(f"{path}: mask header truncated")
    w, h = struct.unpack("<II", data[:8])
    if len(data) != 8 + w * h:
        raise ValueError(f"{path}: expected {8 + w * h} bytes, got {len(data)}")
    return np.frombuffer(data[8:], dtype=np.uint8).reshape(h, w).astype(np.int64)
