import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evmem.events import (
    BadMagic,
    BadPolarity,
    Event,
    EventStream,
    OutOfBounds,
    ParseError,
    TruncatedFile,
    UnsortedTimestamps,
    parse_csv,
    parse_evt,
    write_csv,
    write_evt,
)
from util import random_stream

# hand-encoded golden file: one event (t=5, x=3, y=7, pol=1) on a 16x16 sensor
GOLDEN_BYTES = b"EVT1" + struct.pack("<HHQ", 16, 16, 1) + struct.pack("<QHHB", 5, 3, 7, 1)
GOLDEN_CSV = "16,16\n5,3,7,1\n"


class TestBinaryFormat:
    def test_empty_stream_is_header_only(self):
        s = EventStream(16, 16, [], [], [], [])
        data = write_evt(s)
        assert len(data) == 16
        back = parse_evt(data)
        assert back == s
        assert (back.width, back.height) == (16, 16)

    def test_hand_encoded_single_event(self):
        s = parse_evt(GOLDEN_BYTES)
        assert len(s) == 1
        assert s[0] == Event(t=5, x=3, y=7, polarity=1)
        assert (s.width, s.height) == (16, 16)

    def test_write_matches_hand_encoding(self):
        s = EventStream(16, 16, [5], [3], [7], [1])
        assert write_evt(s) == GOLDEN_BYTES

    def test_three_event_roundtrip(self):
        s = EventStream(8, 8, [1, 2, 2], [0, 7, 3], [0, 1, 2], [1, -1, 1])
        assert parse_evt(write_evt(s)) == s

    def test_roundtrip_random_streams(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = random_stream(rng)
            assert parse_evt(write_evt(s)) == s

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            parse_evt(b"EVX1" + GOLDEN_BYTES[4:])

    def test_truncated_header(self):
        with pytest.raises(TruncatedFile):
            parse_evt(GOLDEN_BYTES[:10])

    def test_truncated_records(self):
        with pytest.raises(TruncatedFile):
            parse_evt(GOLDEN_BYTES[:-1])

    def test_out_of_bounds_reports_index(self):
        data = b"EVT1" + struct.pack("<HHQ", 4, 4, 2)
        data += struct.pack("<QHHB", 1, 0, 0, 1)
        data += struct.pack("<QHHB", 2, 9, 0, 1)
        with pytest.raises(OutOfBounds) as exc:
            parse_evt(data)
        assert exc.value.index == 1

    def test_unsorted_reports_index(self):
        data = b"EVT1" + struct.pack("<HHQ", 4, 4, 2)
        data += struct.pack("<QHHB", 5, 0, 0, 1)
        data += struct.pack("<QHHB", 2, 0, 0, 1)
        with pytest.raises(UnsortedTimestamps) as exc:
            parse_evt(data)
        assert exc.value.index == 1

    def test_bad_polarity_reports_value(self):
        data = b"EVT1" + struct.pack("<HHQ", 4, 4, 1) + struct.pack("<QHHB", 1, 0, 0, 7)
        with pytest.raises(BadPolarity) as exc:
            parse_evt(data)
        assert exc.value.value == 7

    def test_trailing_bytes_ignored(self):
        # count drives the parse; concatenated junk does not affect it
        assert parse_evt(GOLDEN_BYTES + b"junk") == parse_evt(GOLDEN_BYTES)


class TestCsvFormat:
    def test_single_event_matches_binary(self):
        assert parse_csv(GOLDEN_CSV) == parse_evt(GOLDEN_BYTES)

    def test_header_only_is_empty_stream(self):
        s = parse_csv("16,16\n")
        assert len(s) == 0
        assert (s.width, s.height) == (16, 16)

    def test_bad_polarity_line_number(self):
        with pytest.raises(ParseError) as exc:
            parse_csv("16,16\n5,3,7,2\n")
        assert exc.value.line == 2

    def test_bad_line_number_later(self):
        with pytest.raises(ParseError) as exc:
            parse_csv("16,16\n5,3,7,1\n6,3,7,oops\n")
        assert exc.value.line == 3

    def test_out_of_bounds_is_parse_error(self):
        with pytest.raises(ParseError):
            parse_csv("4,4\n5,9,0,1\n")

    def test_unsorted_is_parse_error(self):
        with pytest.raises(ParseError) as exc:
            parse_csv("4,4\n5,0,0,1\n2,0,0,1\n")
        assert exc.value.line == 3

    def test_roundtrip_random_streams(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            s = random_stream(rng)
            assert parse_csv(write_csv(s)) == s

    def test_cross_format_equality(self):
        rng = np.random.default_rng(2)
        s = random_stream(rng, n=40)
        assert parse_csv(write_csv(s)) == parse_evt(write_evt(s))


class TestStreamValidation:
    def test_rejects_unsorted(self):
        with pytest.raises(UnsortedTimestamps):
            EventStream(8, 8, [5, 1], [0, 0], [0, 0], [1, 1])

    def test_rejects_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            EventStream(8, 8, [1], [8], [0], [1])

    def test_rejects_bad_polarity(self):
        with pytest.raises(BadPolarity):
            EventStream(8, 8, [1], [0], [0], [0])

    def test_equal_timestamps_allowed(self):
        s = EventStream(8, 8, [3, 3], [0, 1], [0, 1], [1, -1])
        assert len(s) == 2


@given(st.binary(max_size=200))
@settings(max_examples=300, deadline=None)
def test_fuzz_binary_parser_never_crashes(data):
    try:
        parse_evt(data)
    except (BadMagic, TruncatedFile, OutOfBounds, UnsortedTimestamps, BadPolarity):
        pass


@given(st.text(alphabet="0123456789,.-x\n ", max_size=120))
@settings(max_examples=200, deadline=None)
def test_fuzz_csv_parser_never_crashes(text):
    try:
        parse_csv(text)
    except ParseError:
        pass
