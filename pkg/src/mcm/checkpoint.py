"""Binary checkpoints: magic "MCM1", config echo, named f32 tensor table.

Layout (all integers little-endian):

  magic    4 bytes  "MCM1"
  version  u32      1
  config   u32 byte length, then utf-8 "key = value\\n" lines, keys sorted
  count    u32      number of tensors
  tensor   u16 name length + utf-8 name
           u8 dtype tag (0 = f32)
           u8 ndim, then ndim x u32 dims
           row-major f32 payload

Optimizer state rides along as extra tensors named "opt.m.<param>",
"opt.v.<param>" and "opt.step". Tensors are stored at f32; loading and
re-saving reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Tensor

MAGIC = b"MCM1"
VERSION = 1
_DTYPE_F32 = 0


@dataclass
class Checkpoint:
    version: int
    config: dict[str, str]
    tensors: dict[str, np.ndarray]  # f32 arrays, file order preserved


def _config_text(config: dict[str, str]) -> bytes:
    lines = [f"{k} = {config[k]}" for k in sorted(config)]
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def _parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def save_checkpoint(
    named: dict[str, Tensor | np.ndarray],
    config: dict[str, str],
    path,
    opt_state=None,
) -> None:
    """Write tensors (and optionally AdamW moments) in table order."""
    table: list[tuple[str, np.ndarray]] = []
    for name, t in named.items():
        table.append((name, t.data if isinstance(t, Tensor) else np.asarray(t)))
    if opt_state is not None:
        for name in named:
            if name in opt_state.m:
                table.append((f"opt.m.{name}", opt_state.m[name]))
                table.append((f"opt.v.{name}", opt_state.v[name]))
        table.append(("opt.step", np.array([opt_state.step_count], dtype=np.float64)))
    cfg_bytes = _config_text(config)
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg_bytes)), cfg_bytes]
    parts.append(struct.pack("<I", len(table)))
    for name, arr in table:
        nb = name.encode("utf-8")
        payload = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", _DTYPE_F32, payload.ndim))
        parts.append(struct.pack(f"<{payload.ndim}I", *payload.shape))
        parts.append(payload.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    try:
        if buf[:4] != MAGIC:
            raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
        (version,) = struct.unpack_from("<I", buf, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (cfg_len,) = struct.unpack_from("<I", buf, 8)
        cfg_end = 12 + cfg_len
        config = _parse_config_text(buf[12:cfg_end].decode("utf-8"))
        (count,) = struct.unpack_from("<I", buf, cfg_end)
        pos = cfg_end + 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + name_len].decode("utf-8")
            pos += name_len
            dtype, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            if dtype != _DTYPE_F32:
                raise FormatError(f"{path}: unknown dtype tag {dtype} for {name!r}")
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            raw = buf[pos : pos + 4 * n]
            if len(raw) != 4 * n:
                raise FormatError(f"{path}: payload truncated for tensor {name!r}")
            pos += 4 * n
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        if pos != len(buf):
            raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    except (struct.error, IndexError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    return Checkpoint(version=version, config=config, tensors=tensors)


def split_opt_tensors(
    tensors: dict[str, np.ndarray],
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], dict[str, np.ndarray], int | None]:
    """Separate parameter tensors from optimizer-state tensors."""
    params, m, v = {}, {}, {}
    step = None
    for name, arr in tensors.items():
        if name == "opt.step":
            step = int(arr.reshape(-1)[0])
        elif name.startswith("opt.m."):
            m[name[6:]] = arr
        elif name.startswith("opt.v."):
            v[name[6:]] = arr
        else:
            params[name] = arr
    return params, m, v, step


def restore_named(
    tensors: dict[str, np.ndarray],
    targets: dict[str, Tensor],
    names: list[str] | None = None,
    strict: bool = True,
) -> None:
    """Copy tensors into target parameters (cast back to f64).

    names limits the restore to a subset of the target tree; strict
    additionally rejects checkpoint tensors that match nothing.
    """
    wanted = list(targets) if names is None else names
    missing = [n for n in wanted if n not in tensors]
    if missing:
        raise FormatError(f"checkpoint lacks tensors: {', '.join(missing)}")
    if strict:
        unknown = [n for n in tensors if n not in targets]
        if unknown:
            raise FormatError(f"checkpoint has unknown tensors: {', '.join(unknown)}")
    for n in wanted:
        dst = targets[n]
        if tensors[n].shape != dst.data.shape:
            raise FormatError(
                f"tensor {n!r}: checkpoint shape {tensors[n].shape} vs model {dst.data.shape}"
            )
        dst.data = tensors[n].astype(np.float64)
