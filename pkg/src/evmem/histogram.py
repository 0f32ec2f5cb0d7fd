"""Dense histogram representations of event slices.

Histograms are float64 arrays of shape (C, H, W). Three channel layouts
are produced here:

    two_polarity            C=2  per-pixel counts, channel 0 positive
    two_polarity_timestamp  C=3  counts + latest normalized timestamp
    four_slices_two_polarity C=8 four equal time chunks x two polarities,
                                 chunk-major channel order

Counts are exact integers stored as floats, so identities such as the
chunk partition summing to the plain histogram hold bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .events import EventStream

N_MAX_DEFAULT = 30_000

LAYOUTS = {
    "two_polarity": 2,
    "two_polarity_timestamp": 3,
    "four_slices_two_polarity": 8,
}


def _first(stream: EventStream, n_max: int):
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    n = min(len(stream), n_max)
    return stream.t[:n], stream.x[:n], stream.y[:n], stream.polarity[:n]


def build_histogram(stream: EventStream, n_max: int = N_MAX_DEFAULT) -> np.ndarray:
    """Accumulate the first n_max events into per-polarity counts."""
    t, x, y, p = _first(stream, n_max)
    hist = np.zeros((2, stream.height, stream.width), dtype=np.float64)
    pos = p == 1
    np.add.at(hist[0], (y[pos], x[pos]), 1.0)
    np.add.at(hist[1], (y[~pos], x[~pos]), 1.0)
    return hist


def add_timestamp_channel(stream: EventStream, n_max: int = N_MAX_DEFAULT) -> np.ndarray:
    """Counts plus a third channel: latest event time per pixel, scaled to
    [0, 1] over the slice span [t_first, t_last]. A zero-duration slice
    puts 1.0 at every event pixel; pixels with no event stay 0."""
    t, x, y, p = _first(stream, n_max)
    hist = np.zeros((3, stream.height, stream.width), dtype=np.float64)
    hist[:2] = build_histogram(stream, n_max)
    if len(t):
        dur = int(t[-1]) - int(t[0])
        if dur > 0:
            norm = (t - t[0]).astype(np.float64) / float(dur)
        else:
            norm = np.ones(len(t), dtype=np.float64)
        # fancy assignment keeps the last write per index; t is sorted, so
        # the surviving value is the latest event at each pixel
        hist[2, y, x] = norm
    return hist


def build_time_slices(stream: EventStream, n_max: int = N_MAX_DEFAULT) -> np.ndarray:
    """Split the slice span into 4 equal chunks, 2 polarity channels each.
    Summing channel pairs reproduces build_histogram exactly."""
    t, x, y, p = _first(stream, n_max)
    hist = np.zeros((8, stream.height, stream.width), dtype=np.float64)
    if len(t) == 0:
        return hist
    t0 = int(t[0])
    dur = int(t[-1]) - t0
    if dur == 0:
        chunk = np.zeros(len(t), dtype=np.int64)
    elif dur < 2**61:
        chunk = ((t - t[0]) * np.uint64(4) // np.uint64(dur)).astype(np.int64)
    else:
        chunk = np.array([(int(ti) - t0) * 4 // dur for ti in t], dtype=np.int64)
    np.minimum(chunk, 3, out=chunk)  # t == t_last lands in the final chunk
    channel = chunk * 2 + (p != 1)
    np.add.at(hist, (channel, y, x), 1.0)
    return hist


def remove_hot_pixels(hist: np.ndarray, k: float = 10.0, count_channels=None) -> np.ndarray:
    """Zero every pixel whose total count strictly exceeds mean + k*std of
    the per-pixel totals (population std). count_channels selects which
    channels form the statistic (default: all); all channels are zeroed
    at a hot pixel either way."""
    hist = np.asarray(hist, dtype=np.float64)
    totals = (hist if count_channels is None else hist[list(count_channels)]).sum(axis=0)
    hot = totals > totals.mean() + k * totals.std()
    out = hist.copy()
    out[:, hot] = 0.0
    return out


def normalize(hist: np.ndarray) -> np.ndarray:
    """Scale by the global max so values land in [0, 1]; all-zero input
    passes through unchanged."""
    hist = np.asarray(hist, dtype=np.float64)
    m = hist.max() if hist.size else 0.0
    return hist / m if m > 0 else hist.copy()


def resize_bilinear(hist: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Per-channel bilinear resize with half-pixel-centered sampling and
    edge clamping, as in standard image resizing."""
    if target_h <= 0 or target_w <= 0:
        raise ValueError("target size must be positive")
    hist = np.asarray(hist, dtype=np.float64)
    c, h, w = hist.shape
    if (target_h, target_w) == (h, w):
        return hist.copy()
    ys = (np.arange(target_h) + 0.5) * h / target_h - 0.5
    xs = (np.arange(target_w) + 0.5) * w / target_w - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = (ys - y0f)[:, None]
    fx = (xs - x0f)[None, :]
    # clamp the two taps independently so edge samples collapse onto the
    # border pixel instead of reaching across it
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)
    v00 = hist[:, y0[:, None], x0[None, :]]
    v01 = hist[:, y0[:, None], x1[None, :]]
    v10 = hist[:, y1[:, None], x0[None, :]]
    v11 = hist[:, y1[:, None], x1[None, :]]
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)


def render(hist: np.ndarray, path=None) -> bytes:
    """Encode a histogram as a binary PPM (P6): positive polarity in the
    red channel, negative in blue. The 8-chunk layout is folded to two
    polarity channels first; display scaling is by the global max."""
    hist = np.asarray(hist, dtype=np.float64)
    if hist.shape[0] == 8:
        pos, neg = hist[0::2].sum(axis=0), hist[1::2].sum(axis=0)
    else:
        pos, neg = hist[0], hist[1]
    m = max(pos.max() if pos.size else 0.0, neg.max() if neg.size else 0.0)
    scale = 255.0 / m if m > 0 else 0.0
    h, w = pos.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    rgb[:, :, 0] = np.clip(np.round(pos * scale), 0, 255).astype(np.uint8)
    rgb[:, :, 2] = np.clip(np.round(neg * scale), 0, 255).astype(np.uint8)
    data = f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(data)
    return data
