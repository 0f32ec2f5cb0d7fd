"""Generate a synthetic event scene, save it, and render a preview.

A scene is one moving shape under the standard threshold event model.
This walks the full ingestion loop: scene spec -> event stream -> EVT1
bytes on disk -> parsed back -> polarity histogram -> PPM image.
"""

import os

import numpy as np

from evmem.events import parse_evt, write_evt
from evmem.histogram import build_histogram, render
from evmem.synth import SHAPES, make_scene, _scene_stream

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

rng = np.random.default_rng(7)
for class_id, shape in enumerate(SHAPES):
    spec = make_scene(class_id, rng, width=64, height=64, frames=12)
    stream = _scene_stream(spec)
    print(f"{shape:9s} size {spec.size:5.1f}px  speed "
          f"({spec.velocity[0]:+.2f}, {spec.velocity[1]:+.2f}) px/frame  "
          f"-> {len(stream)} events over {int(stream.t[-1])} us")

    path = os.path.join(OUT, f"{shape}.evt")
    with open(path, "wb") as f:
        f.write(write_evt(stream))
    with open(path, "rb") as f:
        back = parse_evt(f.read())
    assert np.array_equal(back.t, stream.t)

    hist = build_histogram(back)
    render(hist, os.path.join(OUT, f"{shape}.ppm"))

print(f"\nwrote .evt and .ppm files to {OUT}")
print("positive events drive the red channel, negative the blue")
