"""Frame records and their on-disk formats.

Two interchangeable formats:

- ``jsonl``: one ``{"step": n, "time": t, "u": [...]}`` object per line.
- ``binary``: 16-byte little-endian header (magic ``SMFX``, version u32,
  r u32, count u32) followed by ``count * r`` float64 coordinates. The
  binary format stores only the coordinate payload; step indices are
  implicit (0-based) and times are reconstructed from an optional dt.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

MAGIC = b"SMFX"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FrameFormatError(ValueError):
    """Raised on malformed frame files."""


@dataclass(frozen=True)
class Frame:
    """One recorded simulation frame (reduced or full coordinates)."""

    step: int
    time: float
    u: NDArray[np.float64]


def export_frames(frames: list[Frame], path: str | Path,
                  format: str = "binary") -> None:
    path = Path(path)
    if format == "jsonl":
        with open(path, "w") as fh:
            for fr in frames:
                fh.write(json.dumps({"step": fr.step, "time": fr.time,
                                     "u": fr.u.tolist()}))
                fh.write("\n")
    elif format == "binary":
        r = frames[0].u.shape[0] if frames else 0
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, r, len(frames)))
            for fr in frames:
                if fr.u.shape[0] != r:
                    raise FrameFormatError("inconsistent frame lengths")
                fh.write(np.asarray(fr.u, dtype="<f8").tobytes())
    else:
        raise FrameFormatError(f"unknown frame format {format!r}")


def load_frames(path: str | Path, dt: float | None = None) -> list[Frame]:
    """Read either format back; the format is sniffed from the magic bytes.

    For binary files the step index is positional (first frame is step 1,
    matching the recorder) and times are ``step * dt`` when dt is given.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return _load_binary(path, dt)
    return _load_jsonl(path)


def _load_binary(path: Path, dt: float | None) -> list[Frame]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FrameFormatError("truncated header")
    magic, version, r, count = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise FrameFormatError("bad magic or version")
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * r * count:
        raise FrameFormatError("payload size does not match header")
    data = np.frombuffer(payload, dtype="<f8").reshape(count, r)
    h = 0.0 if dt is None else dt
    return [Frame(i + 1, (i + 1) * h, data[i].copy()) for i in range(count)]


def _load_jsonl(path: Path) -> list[Frame]:
    frames = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                frames.append(Frame(int(obj["step"]), float(obj["time"]),
                                    np.asarray(obj["u"], dtype=np.float64)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FrameFormatError(
                    f"{path}:{line_no}: malformed frame record") from exc
    return frames
