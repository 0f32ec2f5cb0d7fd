"""Event histograms: the three channel layouts and hot-pixel cleanup.

Shows how one stream becomes a dense tensor under each layout, that the
8-channel time slices sum back to the plain polarity histogram, and how
a stuck pixel is detected and zeroed.
"""

import numpy as np

from evmem.events import EventStream
from evmem.histogram import (add_timestamp_channel, build_histogram,
                             build_time_slices, remove_hot_pixels)
from evmem.synth import make_scene, _scene_stream

rng = np.random.default_rng(3)
stream = _scene_stream(make_scene(1, rng, width=48, height=48, frames=10))
print(f"stream: {len(stream)} events on a {stream.width}x{stream.height} sensor")

c2 = build_histogram(stream)
c3 = add_timestamp_channel(stream)
c8 = build_time_slices(stream)
print(f"two_polarity           {c2.shape}  counts, split by polarity")
print(f"two_polarity_timestamp {c3.shape}  plus normalized mean timestamp")
print(f"four_slices            {c8.shape}  counts per time quarter")
assert np.array_equal(c8[0::2].sum(axis=0), c2[0])
assert np.array_equal(c8[1::2].sum(axis=0), c2[1])
print("slice sums match the plain histogram exactly")

# simulate a defective pixel firing continuously
t = np.arange(5000, dtype=np.uint64)
hot = EventStream(48, 48,
                  np.sort(np.concatenate([stream.t, t])),
                  np.concatenate([stream.x, np.full(5000, 7)]),
                  np.concatenate([stream.y, np.full(5000, 9)]),
                  np.concatenate([stream.polarity, np.ones(5000, np.int8)]))
dirty = build_histogram(hot)
clean = remove_hot_pixels(dirty, k=10.0)
print(f"\npixel (7, 9) count {dirty[0, 9, 7]:.0f} -> {clean[0, 9, 7]:.0f} after cleanup")
others = np.ones((48, 48), dtype=bool)
others[9, 7] = False
assert np.array_equal(clean[:, others], dirty[:, others])
print("every other pixel untouched")
