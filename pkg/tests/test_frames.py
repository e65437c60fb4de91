"""Frame file formats: header arithmetic, roundtrips, cross-format."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from submfem.frames import (Frame, FrameFormatError, export_frames,
                            load_frames)


def make_frames(count, r, seed=0):
    rng = np.random.default_rng(seed)
    return [Frame(i + 1, (i + 1) * 0.01, rng.standard_normal(r))
            for i in range(count)]


def test_binary_size_arithmetic(tmp_path):
    frames = make_frames(1, 12)
    path = tmp_path / "one.smfx"
    export_frames(frames, path, format="binary")
    assert path.stat().st_size == 16 + 96  # header + 12 float64


def test_binary_roundtrip_exact(tmp_path):
    frames = make_frames(7, 30)
    path = tmp_path / "frames.smfx"
    export_frames(frames, path, format="binary")
    loaded = load_frames(path, dt=0.01)
    assert len(loaded) == 7
    for orig, back in zip(frames, loaded):
        assert back.step == orig.step
        assert back.time == pytest.approx(orig.time)
        assert np.array_equal(back.u, orig.u)


def test_jsonl_roundtrip_exact(tmp_path):
    frames = make_frames(5, 24)
    path = tmp_path / "frames.jsonl"
    export_frames(frames, path, format="jsonl")
    loaded = load_frames(path)
    for orig, back in zip(frames, loaded):
        assert back.step == orig.step
        assert back.time == orig.time
        assert np.array_equal(back.u, orig.u)


def test_write_read_write_byte_identical(tmp_path):
    frames = make_frames(4, 12, seed=3)
    for fmt, name in (("binary", "a.smfx"), ("jsonl", "a.jsonl")):
        p1 = tmp_path / name
        p2 = tmp_path / ("re_" + name)
        export_frames(frames, p1, format=fmt)
        export_frames(load_frames(p1), p2, format=fmt)
        assert p1.read_bytes() == p2.read_bytes()


def test_cross_format_identical_u(tmp_path):
    frames = make_frames(6, 36, seed=5)
    pb = tmp_path / "f.smfx"
    pj = tmp_path / "f.jsonl"
    export_frames(frames, pb, format="binary")
    export_frames(frames, pj, format="jsonl")
    ub = [f.u for f in load_frames(pb)]
    uj = [f.u for f in load_frames(pj)]
    for a, b in zip(ub, uj):
        assert np.array_equal(a, b)


def test_empty_run(tmp_path):
    path = tmp_path / "empty.smfx"
    export_frames([], path, format="binary")
    assert load_frames(path) == []


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.smfx"
    path.write_bytes(b"SMFY" + b"\x00" * 12)
    with pytest.raises(FrameFormatError):
        load_frames(path)


def test_truncated_payload_rejected(tmp_path):
    frames = make_frames(3, 10)
    path = tmp_path / "t.smfx"
    export_frames(frames, path, format="binary")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FrameFormatError):
        load_frames(path)


def test_malformed_jsonl_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"step": 1, "time": 0.1}\n')  # missing u
    with pytest.raises(FrameFormatError):
        load_frames(path)


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(FrameFormatError):
        export_frames([], tmp_path / "x", format="csv")
