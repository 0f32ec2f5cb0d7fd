"""Event stream container plus EVT1 binary and CSV interchange.

An event is (t, x, y, polarity): timestamp in microseconds since stream
start (unsigned 64-bit, non-decreasing), pixel column and row (unsigned
16-bit, inside the sensor), and polarity +1/-1 for brightness up/down.

EVT1 file layout, little-endian, no padding:

    offset  size  field
    0       4     magic b"EVT1"
    4       2     sensor width  (u16)
    6       2     sensor height (u16)
    8       8     event count   (u64)
    16      13*n  records: t u64, x u16, y u16, polarity u8

The polarity byte is 0 (negative) or 1 (positive); any other value is
rejected. The parser reads exactly `count` records and ignores trailing
bytes, so concatenated files are not detected.

CSV interchange: first line "width,height", then one "t,x,y,polarity"
line per event with polarity in {0, 1}. See docs/formats.md for golden
files of both encodings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAGIC = b"EVT1"
HEADER = np.dtype([("magic", "S4"), ("width", "<u2"), ("height", "<u2"), ("count", "<u8")])
RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])

assert HEADER.itemsize == 16 and RECORD.itemsize == 13


class EventIOError(ValueError):
    """Base class for event parsing and validation failures."""


class BadMagic(EventIOError):
    def __init__(self, got: bytes):
        self.got = bytes(got)
        super().__init__(f"bad magic {self.got!r}, expected {MAGIC!r}")


class TruncatedFile(EventIOError):
    def __init__(self, needed: int, available: int):
        self.needed = needed
        self.available = available
        super().__init__(f"need {needed} bytes, only {available} available")


class OutOfBounds(EventIOError):
    def __init__(self, index: int, x: int, y: int, width: int, height: int):
        self.index = index
        super().__init__(f"event {index} at ({x}, {y}) outside {width}x{height} sensor")


class UnsortedTimestamps(EventIOError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"event {index} has a smaller timestamp than event {index - 1}")


class BadPolarity(EventIOError):
    def __init__(self, value: int):
        self.value = value
        super().__init__(f"polarity must be 0 or 1 in files, +1/-1 in memory; got {value}")


class ParseError(EventIOError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int


class EventStream:
    """Column-oriented event sequence with validated invariants.

    Arrays are t: u64, x: u16, y: u16, polarity: i8 holding +1/-1.
    Construction checks bounds, ordering, and polarity values and raises
    the typed errors above with the first offending event index.
    """

    __slots__ = ("width", "height", "t", "x", "y", "polarity")

    def __init__(self, width, height, t, x, y, polarity):
        self.width = int(width)
        self.height = int(height)
        if not (0 <= self.width <= 0xFFFF and 0 <= self.height <= 0xFFFF):
            raise EventIOError(f"sensor size {self.width}x{self.height} does not fit u16")
        t = np.asarray(t, dtype=np.uint64)
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        polarity = np.asarray(polarity, dtype=np.int8)
        if not (t.shape == x.shape == y.shape == polarity.shape) or t.ndim != 1:
            raise EventIOError("t, x, y, polarity must be 1-D arrays of equal length")
        bad = (x < 0) | (x >= self.width) | (y < 0) | (y >= self.height)
        if bad.any():
            i = int(np.argmax(bad))
            raise OutOfBounds(i, int(x[i]), int(y[i]), self.width, self.height)
        if len(t) > 1:
            drop = t[1:] < t[:-1]
            if drop.any():
                raise UnsortedTimestamps(int(np.argmax(drop)) + 1)
        ok = (polarity == 1) | (polarity == -1)
        if not ok.all():
            raise BadPolarity(int(polarity[int(np.argmax(~ok))]))
        self.t = t
        self.x = x.astype(np.uint16)
        self.y = y.astype(np.uint16)
        self.polarity = polarity

    @classmethod
    def from_events(cls, width: int, height: int, events) -> "EventStream":
        events = list(events)
        return cls(
            width,
            height,
            [e.t for e in events],
            [e.x for e in events],
            [e.y for e in events],
            [e.polarity for e in events],
        )

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for i in range(len(self.t)):
            yield self[i]

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.polarity[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.polarity, other.polarity)
        )

    def __repr__(self) -> str:
        return f"EventStream({self.width}x{self.height}, {len(self)} events)"

    def take(self, start: int, stop: int) -> "EventStream":
        """Contiguous sub-stream by index; invariants survive slicing."""
        s = EventStream.__new__(EventStream)
        s.width, s.height = self.width, self.height
        s.t = self.t[start:stop].copy()
        s.x = self.x[start:stop].copy()
        s.y = self.y[start:stop].copy()
        s.polarity = self.polarity[start:stop].copy()
        return s

    def replace(self, t=None, x=None, y=None, polarity=None) -> "EventStream":
        return EventStream(
            self.width,
            self.height,
            self.t if t is None else t,
            self.x if x is None else x,
            self.y if y is None else y,
            self.polarity if polarity is None else polarity,
        )


def write_evt(stream: EventStream) -> bytes:
    header = np.zeros(1, dtype=HEADER)
    header["magic"] = MAGIC
    header["width"] = stream.width
    header["height"] = stream.height
    header["count"] = len(stream)
    records = np.zeros(len(stream), dtype=RECORD)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = (stream.polarity == 1).astype(np.uint8)
    return header.tobytes() + records.tobytes()


def write_evt_file(stream: EventStream, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_evt(stream))


def parse_evt(data) -> EventStream:
    """Parse EVT1 bytes (or a path to them) into a validated stream."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        with open(data, "rb") as fh:
            data = fh.read()
    data = bytes(data)
    if len(data) < HEADER.itemsize:
        raise TruncatedFile(HEADER.itemsize, len(data))
    header = np.frombuffer(data, dtype=HEADER, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise BadMagic(bytes(header["magic"]))
    count = int(header["count"])
    needed = HEADER.itemsize + count * RECORD.itemsize
    if len(data) < needed:
        raise TruncatedFile(needed, len(data))
    records = np.frombuffer(data, dtype=RECORD, count=count, offset=HEADER.itemsize)
    p = records["p"]
    bad = p > 1
    if bad.any():
        raise BadPolarity(int(p[int(np.argmax(bad))]))
    return EventStream(
        int(header["width"]),
        int(header["height"]),
        records["t"],
        records["x"],
        records["y"],
        p.astype(np.int8) * 2 - 1,
    )


def write_csv(stream: EventStream) -> str:
    lines = [f"{stream.width},{stream.height}"]
    pol = (stream.polarity == 1).astype(np.uint8)
    for i in range(len(stream)):
        lines.append(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{pol[i]}")
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> EventStream:
    """Parse the CSV interchange form; errors carry 1-based line numbers."""
    lines = text.splitlines()
    if not lines:
        raise ParseError(1, "missing width,height header")
    head = lines[0].split(",")
    if len(head) != 2:
        raise ParseError(1, "header must be width,height")
    try:
        width, height = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError(1, "header fields must be integers") from None
    if not 0 <= width <= 0xFFFF or not 0 <= height <= 0xFFFF:
        raise ParseError(1, "sensor size does not fit u16")
    t, x, y, pol = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            continue  # trailing newline produces one empty split entry
        fields = line.split(",")
        if len(fields) != 4:
            raise ParseError(lineno, "expected t,x,y,polarity")
        try:
            ti, xi, yi, pi = (int(f) for f in fields)
        except ValueError:
            raise ParseError(lineno, "fields must be integers") from None
        if not 0 <= ti < 2**64:
            raise ParseError(lineno, "timestamp outside u64 range")
        if t and ti < t[-1]:
            raise ParseError(lineno, "timestamps must be non-decreasing")
        if not (0 <= xi < width and 0 <= yi < height):
            raise ParseError(lineno, f"({xi}, {yi}) outside {width}x{height} sensor")
        if pi not in (0, 1):
            raise ParseError(lineno, f"polarity must be 0 or 1, got {pi}")
        t.append(ti)
        x.append(xi)
        y.append(yi)
        pol.append(pi * 2 - 1)
    return EventStream(width, height, np.array(t, dtype=np.uint64), x, y, pol)
