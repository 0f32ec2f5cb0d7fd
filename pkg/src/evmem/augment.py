"""Stochastic augmentations over event streams and histograms.

Event-level ops (slice, polarity flip, horizontal flip, per-event
jitter) run before histogram building; rand_augment acts on normalized
histograms. Every op takes an explicit numpy Generator and draws in a
fixed documented order, so identical seed + input gives bit-identical
output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream
from .histogram import N_MAX_DEFAULT


@dataclass
class AugmentConfig:
    n_max: int = N_MAX_DEFAULT
    p_polarity_flip: float = 0.5
    p_hflip: float = 0.5
    jitter_range: int = 15
    randaugment_ops: int = 2
    randaugment_magnitude: float = 20.0
    seed: int = 0

    def validate(self) -> "AugmentConfig":
        if not 0.0 <= self.p_polarity_flip <= 1.0 or not 0.0 <= self.p_hflip <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.jitter_range < 0:
            raise ValueError("jitter_range must be >= 0")
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")
        if not 0.0 <= self.randaugment_magnitude <= 30.0:
            raise ValueError("randaugment_magnitude uses the 0-30 scale")
        return self


def slice_events(stream: EventStream, n_max: int, rng: np.random.Generator) -> EventStream:
    """Contiguous run of min(n_max, len) events at a uniform random start."""
    if n_max <= 0:
        raise ValueError("n_max must be > 0")
    n = len(stream)
    if n <= n_max:
        return stream.take(0, n)
    start = int(rng.integers(0, n - n_max + 1))
    return stream.take(start, start + n_max)


def flip_polarity(stream: EventStream, p: float, rng: np.random.Generator) -> EventStream:
    """All-or-nothing: with probability p every polarity is negated."""
    if rng.random() < p:
        return stream.replace(polarity=-stream.polarity)
    return stream.take(0, len(stream))


def hflip(stream: EventStream, p: float, rng: np.random.Generator) -> EventStream:
    """With probability p every x becomes width-1-x."""
    if rng.random() < p:
        flipped = (stream.width - 1 - stream.x.astype(np.int64)).astype(np.uint16)
        return stream.replace(x=flipped)
    return stream.take(0, len(stream))


def jitter(stream: EventStream, jitter_range: int, rng: np.random.Generator) -> EventStream:
    """Shift each event by integer offsets ~ U(-range, range), drawn for x
    then y; events pushed outside the sensor are dropped."""
    if jitter_range < 0:
        raise ValueError("jitter_range must be >= 0")
    if jitter_range == 0 or len(stream) == 0:
        return stream.take(0, len(stream))
    n = len(stream)
    dx = rng.integers(-jitter_range, jitter_range + 1, size=n)
    dy = rng.integers(-jitter_range, jitter_range + 1, size=n)
    nx = stream.x.astype(np.int64) + dx
    ny = stream.y.astype(np.int64) + dy
    keep = (nx >= 0) & (nx < stream.width) & (ny >= 0) & (ny < stream.height)
    out = EventStream.__new__(EventStream)
    out.width, out.height = stream.width, stream.height
    out.t = stream.t[keep].copy()
    out.x = nx[keep].astype(np.uint16)
    out.y = ny[keep].astype(np.uint16)
    out.polarity = stream.polarity[keep].copy()
    return out


# rand_augment op table; order matters for rng reproducibility
RAND_AUGMENT_OPS = (
    "translate_x",
    "translate_y",
    "rotate",
    "shear_x",
    "shear_y",
    "scale",
    "cutout",
    "channel_gain",
)

_MAX_TRANSLATE = 0.3   # fraction of the axis length
_MAX_ROTATE = np.pi / 6.0
_MAX_SHEAR = 0.3
_MAX_ZOOM = 0.4        # scale factor 1 +/- this
_MAX_CUTOUT = 0.4      # fraction of the short side
_MAX_GAIN = 0.5        # per-channel gain 1 +/- this


def _sample_bilinear(hist: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Sample each channel at float coords (sy, sx); outside reads 0."""
    c, h, w = hist.shape
    inside = (sy > -1.0) & (sy < h) & (sx > -1.0) & (sx < w)
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = sy - y0
    fx = sx - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    def tap(yy, xx):
        ok = inside & (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        v = hist[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return v * ok

    out = (
        tap(y0, x0) * ((1 - fy) * (1 - fx))
        + tap(y0, x0 + 1) * ((1 - fy) * fx)
        + tap(y0 + 1, x0) * (fy * (1 - fx))
        + tap(y0 + 1, x0 + 1) * (fy * fx)
    )
    return out


def _warp(hist: np.ndarray, inv: np.ndarray, shift) -> np.ndarray:
    """Inverse-warp about the image center: output pixel (y, x) reads the
    input at inv @ (x-cx, y-cy) + center + shift."""
    c, h, w = hist.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w]
    rx = xs - cx
    ry = ys - cy
    sx = inv[0, 0] * rx + inv[0, 1] * ry + cx + shift[0]
    sy = inv[1, 0] * rx + inv[1, 1] * ry + cy + shift[1]
    return _sample_bilinear(hist, sy, sx)


def rand_augment(
    hist: np.ndarray,
    n_ops: int = 2,
    magnitude: float = 20.0,
    rng: np.random.Generator = None,
) -> np.ndarray:
    """Apply n_ops ops drawn uniformly (with replacement) from
    RAND_AUGMENT_OPS at strength magnitude/30; geometric ops get a random
    sign, cutout a random position, channel_gain a random per-channel
    direction. Output is clamped to [0, 1].

    Per-op draw order: op index, then the op's own parameters.
    """
    if rng is None:
        raise ValueError("rand_augment needs an explicit rng")
    out = np.asarray(hist, dtype=np.float64).copy()
    s = float(magnitude) / 30.0
    c, h, w = out.shape
    for _ in range(int(n_ops)):
        name = RAND_AUGMENT_OPS[int(rng.integers(len(RAND_AUGMENT_OPS)))]
        if name == "translate_x":
            sign = 1.0 if rng.random() < 0.5 else -1.0
            out = _warp(out, np.eye(2), (-sign * s * _MAX_TRANSLATE * w, 0.0))
        elif name == "translate_y":
            sign = 1.0 if rng.random() < 0.5 else -1.0
            out = _warp(out, np.eye(2), (0.0, -sign * s * _MAX_TRANSLATE * h))
        elif name == "rotate":
            sign = 1.0 if rng.random() < 0.5 else -1.0
            a = sign * s * _MAX_ROTATE
            inv = np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]])
            out = _warp(out, inv, (0.0, 0.0))
        elif name == "shear_x":
            sign = 1.0 if rng.random() < 0.5 else -1.0
            inv = np.array([[1.0, -sign * s * _MAX_SHEAR], [0.0, 1.0]])
            out = _warp(out, inv, (0.0, 0.0))
        elif name == "shear_y":
            sign = 1.0 if rng.random() < 0.5 else -1.0
            inv = np.array([[1.0, 0.0], [-sign * s * _MAX_SHEAR, 1.0]])
            out = _warp(out, inv, (0.0, 0.0))
        elif name == "scale":
            sign = 1.0 if rng.random() < 0.5 else -1.0
            f = 1.0 + sign * s * _MAX_ZOOM
            out = _warp(out, np.eye(2) / f, (0.0, 0.0))
        elif name == "cutout":
            side = int(round(s * _MAX_CUTOUT * min(h, w)))
            if side > 0:
                y0 = int(rng.integers(0, h - side + 1))
                x0 = int(rng.integers(0, w - side + 1))
                out[:, y0 : y0 + side, x0 : x0 + side] = 0.0
        elif name == "channel_gain":
            gains = 1.0 + s * _MAX_GAIN * rng.uniform(-1.0, 1.0, size=c)
            out = out * gains[:, None, None]
    return np.clip(out, 0.0, 1.0)
