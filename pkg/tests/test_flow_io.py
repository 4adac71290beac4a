import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtad.flow_io import (FloDimensionError, FloMagicError, FloTruncatedError, FlowField,
                           read_boxes, read_flo, segment_motion, write_boxes, write_flo)


def raw_flo(w, h, values, magic=202021.25):
    return struct.pack("<fii", magic, w, h) + struct.pack(f"<{len(values)}f", *values)


def test_minimal_file(tmp_path):
    p = tmp_path / "a.flo"
    p.write_bytes(raw_flo(1, 1, [2.0, -1.0]))
    f = read_flo(p)
    assert (f.width, f.height) == (1, 1)
    assert f.vectors.dtype == np.float64
    assert f.vectors[0, 0].tolist() == [2.0, -1.0]


def test_bad_magic(tmp_path):
    p = tmp_path / "a.flo"
    p.write_bytes(raw_flo(1, 1, [0.0, 0.0], magic=1.0))
    with pytest.raises(FloMagicError):
        read_flo(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "a.flo"
    p.write_bytes(raw_flo(2, 2, [0.0] * 6))
    with pytest.raises(FloTruncatedError):
        read_flo(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "a.flo"
    p.write_bytes(struct.pack("<f", 202021.25) + b"\x01")
    with pytest.raises(FloTruncatedError):
        read_flo(p)


@pytest.mark.parametrize("w,h", [(0, 3), (3, -1)])
def test_nonpositive_dimensions(tmp_path, w, h):
    p = tmp_path / "a.flo"
    p.write_bytes(raw_flo(w, h, []))
    with pytest.raises(FloDimensionError):
        read_flo(p)


def test_zero_field_size(tmp_path):
    p = tmp_path / "z.flo"
    write_flo(FlowField(np.zeros((1, 1, 2))), p)
    assert p.stat().st_size == 12 + 8


def test_byte_identical_round_trip_4x3(tmp_path):
    rng = np.random.default_rng(5)
    vals = rng.normal(scale=5, size=3 * 4 * 2).astype(np.float32)
    src = tmp_path / "src.flo"
    src.write_bytes(raw_flo(4, 3, vals.tolist()))
    dst = tmp_path / "dst.flo"
    write_flo(read_flo(src), dst)
    assert dst.read_bytes() == src.read_bytes()


def test_narrowing_is_idempotent(tmp_path):
    rng = np.random.default_rng(6)
    field = FlowField(rng.normal(size=(8, 8, 2)))
    write_flo(field, tmp_path / "a.flo")
    once = read_flo(tmp_path / "a.flo")
    write_flo(once, tmp_path / "b.flo")
    twice = read_flo(tmp_path / "b.flo")
    assert np.array_equal(once.vectors, twice.vectors)
    assert np.array_equal(once.vectors, field.vectors.astype(np.float32).astype(np.float64))


def test_float32_representable_values_survive_exactly(tmp_path):
    v = np.random.default_rng(7).normal(size=(8, 8, 2)).astype(np.float32).astype(np.float64)
    write_flo(FlowField(v), tmp_path / "a.flo")
    assert np.array_equal(read_flo(tmp_path / "a.flo").vectors, v)


def test_flow_field_rejects_nan():
    v = np.zeros((2, 2, 2))
    v[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        FlowField(v)


# ---------------------------------------------------------------- segmentation

def test_no_boxes_all_background():
    f = FlowField(np.zeros((4, 5, 2)))
    fg, bg = segment_motion(f, [])
    assert len(fg) == 0 and len(bg) == 20


def test_full_frame_box_all_foreground():
    f = FlowField(np.zeros((4, 5, 2)))
    fg, bg = segment_motion(f, [(0, 0, 5, 4)])
    assert len(fg) == 20 and len(bg) == 0


def test_inclusive_box_count():
    f = FlowField(np.zeros((4, 4, 2)))
    fg, bg = segment_motion(f, [(1, 1, 2, 2)])
    assert (len(fg), len(bg)) == (4, 12)
    assert sorted(map(tuple, fg.pixels.tolist())) == [(1, 1), (1, 2), (2, 1), (2, 2)]


def test_box_outside_frame_rejected():
    with pytest.raises(ValueError):
        segment_motion(FlowField(np.zeros((4, 4, 2))), [(0, 0, 5, 2)])


def _box(draw, w, h):
    x0 = draw(st.integers(0, w))
    x1 = draw(st.integers(x0, w))
    y0 = draw(st.integers(0, h))
    y1 = draw(st.integers(y0, h))
    return (x0, y0, x1, y1)


@st.composite
def field_and_boxes(draw):
    w, h = draw(st.integers(1, 9)), draw(st.integers(1, 9))
    boxes = [_box(draw, w, h) for _ in range(draw(st.integers(0, 4)))]
    return w, h, boxes


@settings(max_examples=100, deadline=None)
@given(field_and_boxes(), st.randoms(use_true_random=False))
def test_partition_and_order_independence(fb, rnd):
    w, h, boxes = fb
    vec = np.arange(h * w * 2, dtype=float).reshape(h, w, 2)
    f = FlowField(vec)
    fg, bg = segment_motion(f, boxes)
    assert len(fg) + len(bg) == w * h
    covered = {tuple(p) for p in fg.pixels.tolist()} | {tuple(p) for p in bg.pixels.tolist()}
    assert len(covered) == w * h
    shuffled = list(boxes)
    rnd.shuffle(shuffled)
    fg2, _ = segment_motion(f, shuffled)
    assert np.array_equal(fg.vectors, fg2.vectors)


def test_boxes_json_round_trip(tmp_path):
    boxes = [[(0.0, 1.0, 2.0, 3.0)], [], [(1.0, 1.0, 1.0, 1.0), (0.0, 0.0, 4.0, 4.0)]]
    write_boxes(boxes, tmp_path / "b.json")
    assert json.loads((tmp_path / "b.json").read_text())[0] == [[0.0, 1.0, 2.0, 3.0]]
    assert read_boxes(tmp_path / "b.json") == boxes


def test_boxes_json_rejects_bad_shape(tmp_path):
    (tmp_path / "b.json").write_text("[[[1, 2, 3]]]")
    with pytest.raises(ValueError):
        read_boxes(tmp_path / "b.json")
