"""Binary netpbm readers and writers (P6 color, P5 grayscale).

Readers accept the full header grammar (whitespace runs, # comments,
maxval up to 65535 with two-byte big-endian samples). Writers emit the
canonical 8-bit form `P6\\n{w} {h}\\n255\\n` so written files are
byte-stable.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError

_WS = b" \t\r\n"


def _quantize8(values: np.ndarray) -> np.ndarray:
    """Clamp to [0,1] and quantize to bytes, halves rounding away from zero."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


class _HeaderScanner:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def skip_space(self) -> None:
        """Consume whitespace and # comments (comment runs to end of line)."""
        while self.pos < len(self.buf):
            c = self.buf[self.pos : self.pos + 1]
            if c in (b" ", b"\t", b"\r", b"\n"):
                self.pos += 1
            elif c == b"#":
                nl = self.buf.find(b"\n", self.pos)
                if nl < 0:
                    raise ParseError("comment runs past end of file", self.pos)
                self.pos = nl + 1
            else:
                return

    def read_int(self, what: str) -> int:
        self.skip_space()
        start = self.pos
        while self.pos < len(self.buf) and self.buf[self.pos : self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            raise ParseError(f"expected {what}", start)
        return int(self.buf[start : self.pos])


def read_netpbm(path) -> tuple[np.ndarray, int]:
    """Read a P5/P6 file into an HxWxC float64 array scaled to [0, 1].

    Returns (array, maxval); C is 1 for P5 and 3 for P6.
    """
    buf = Path(path).read_bytes()
    if len(buf) < 2:
        raise ParseError("file too short for a netpbm magic", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}", 0)
    sc = _HeaderScanner(buf)
    sc.pos = 2
    width = sc.read_int("width")
    height = sc.read_int("height")
    maxval = sc.read_int("maxval")
    if not 0 < maxval < 65536:
        raise ParseError(f"maxval {maxval} outside 1..65535", sc.pos)
    # exactly one whitespace byte separates the header from the raster
    if sc.pos >= len(buf) or buf[sc.pos : sc.pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise ParseError("missing whitespace before raster", sc.pos)
    sc.pos += 1
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    wide = maxval > 255
    need = count * (2 if wide else 1)
    raster = buf[sc.pos : sc.pos + need]
    if len(raster) != need:
        raise ParseError(
            f"raster truncated: need {need} bytes, have {len(raster)}", sc.pos + len(raster)
        )
    if wide:
        samples = np.frombuffer(raster, dtype=">u2").astype(np.float64)
    else:
        samples = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    arr = (samples / maxval).reshape(height, width, channels)
    return arr, maxval


def write_ppm(path, values: np.ndarray) -> None:
    """Write an HxWx3 array in [0, 1] as an 8-bit binary P6."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 3 or v.shape[2] != 3:
        raise ParseError(f"ppm writer needs HxWx3, got {v.shape}")
    header = f"P6\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + _quantize8(v).tobytes())


def write_pgm(path, values: np.ndarray) -> None:
    """Write an HxW or HxWx1 array in [0, 1] as an 8-bit binary P5."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 3 and v.shape[2] == 1:
        v = v[:, :, 0]
    if v.ndim != 2:
        raise ParseError(f"pgm writer needs HxW or HxWx1, got {np.asarray(values).shape}")
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + _quantize8(v).tobytes())
