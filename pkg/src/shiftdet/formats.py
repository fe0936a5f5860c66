"""On-disk formats.

Everything the tool persists is either a small binary container or
line-delimited text, bit-exactly specified (see docs/FORMATS.md):

* SRVF frame container — raw uint8 video: magic ``SRVF``, version,
  (T, H, W, C) as little-endian uint32, then T*H*W*C samples row-major.
* SRCK checkpoint — magic ``SRCK``, version, embedded config text with
  its SHA-256, an ordered (name, shape, offset) manifest, then one
  contiguous little-endian float32 payload.
* dataset manifest — one JSON object per line (clip id, frame count,
  video path, per-frame boxes and labels).
* classes.txt — one class name per line; class id = line number + 1
  (0 is background).
* config — flat ``section.key = value`` text.
* record files — tab-separated tables opening with a
  ``# schema: shiftdet.<name> v1`` line.

Writes go through a temp file + rename so readers never see a partial
file.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

SRVF_MAGIC = b"SRVF"
SRCK_MAGIC = b"SRCK"
FORMAT_VERSION = 1


def _atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# SRVF frame container


def save_video(path, frames: np.ndarray):
    """frames: uint8 [T,H,W,C]."""
    frames = np.asarray(frames)
    if frames.dtype != np.uint8 or frames.ndim != 4:
        raise DataError(f"video must be uint8 [T,H,W,C], got {frames.dtype} {frames.shape}")
    header = SRVF_MAGIC + struct.pack("<5I", FORMAT_VERSION, *frames.shape)
    _atomic_write(path, header + frames.tobytes())


def load_video(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:4] != SRVF_MAGIC:
        raise DataError(f"{path}: not an SRVF container")
    version, t, h, w, c = struct.unpack("<5I", raw[4:24])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported SRVF version {version}")
    expect = 24 + t * h * w * c
    if len(raw) != expect:
        raise DataError(f"{path}: payload is {len(raw) - 24} bytes, header declares {expect - 24}")
    return np.frombuffer(raw[24:], dtype=np.uint8).reshape(t, h, w, c)


def frames_to_float(frames_u8: np.ndarray) -> np.ndarray:
    """uint8 [T,H,W,C] -> float32 [T,C,H,W] in [0,1]."""
    return np.ascontiguousarray(
        frames_u8.astype(np.float32).transpose(0, 3, 1, 2) / 255.0
    )


# ---------------------------------------------------------------------------
# SRCK checkpoint


def save_checkpoint(path, config_text: str, params: dict):
    """params: ordered {name: float32 ndarray}; order is preserved."""
    cfg = config_text.encode("utf-8")
    out = [SRCK_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    out.append(struct.pack("<I", len(cfg)))
    out.append(cfg)
    out.append(hashlib.sha256(cfg).digest())
    out.append(struct.pack("<I", len(params)))
    offset = 0
    payload = []
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        out.append(struct.pack("<Q", offset))
        offset += arr.size
        payload.append(arr.tobytes())
    out.append(struct.pack("<Q", offset))
    out.extend(payload)
    _atomic_write(path, b"".join(out))


def load_checkpoint(path) -> tuple:
    """Returns (config_text, ordered {name: float32 ndarray})."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != SRCK_MAGIC:
        raise DataError(f"{path}: not an SRCK checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported SRCK version {version}")
    pos = 8
    (cfg_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    cfg = raw[pos : pos + cfg_len]
    pos += cfg_len
    digest = raw[pos : pos + 32]
    pos += 32
    if hashlib.sha256(cfg).digest() != digest:
        raise DataError(f"{path}: config digest mismatch (corrupt checkpoint)")
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos) if ndim else ()
        pos += 4 * ndim
        (offset,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        entries.append((name, shape, offset))
    (total,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) - pos != total * 4:
        raise DataError(
            f"{path}: payload is {len(raw) - pos} bytes, manifest declares {total * 4}"
        )
    expect_offset = 0
    params = {}
    for name, shape, offset in entries:
        if offset != expect_offset:
            raise DataError(f"{path}: non-contiguous offset for {name!r}")
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos + 4 * offset)
        params[name] = arr.reshape(shape).copy()
        expect_offset += size
    if expect_offset != total:
        raise DataError(f"{path}: manifest sums to {expect_offset} elements, "
                        f"payload declares {total}")
    return cfg.decode("utf-8"), params


# ---------------------------------------------------------------------------
# dataset manifest / classes


def save_manifest(path, records: list):
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in records]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_manifest(path) -> list:
    out = []
    try:
        text = Path(path).read_text("utf-8")
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{i + 1}: bad manifest record: {e}") from e
    return out


def save_classes(path, names: list):
    _atomic_write(path, ("\n".join(names) + "\n").encode("utf-8"))


def load_classes(path) -> list:
    try:
        text = Path(path).read_text("utf-8")
    except OSError as e:
        raise DataError(f"cannot read classes file {path}: {e}") from e
    names = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not names:
        raise DataError(f"{path}: no class names")
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate class names")
    return names


# ---------------------------------------------------------------------------
# flat key=value config


def parse_config(text: str) -> dict:
    """``section.key = value`` lines; '#' starts a comment; later keys win."""
    out = {}
    for i, line in enumerate(text.splitlines()):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {i + 1}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key or "." not in key:
            raise ConfigError(f"line {i + 1}: keys must look like section.key, got {key!r}")
        out[key] = value.strip()
    return out


def load_config(path) -> dict:
    try:
        return parse_config(Path(path).read_text("utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def format_config(entries: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(entries.items()))


def config_get(cfg: dict, key: str, convert, default=None):
    """Fetch and convert one config value; ConfigError names the key."""
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing config key {key}")
        return default
    try:
        return convert(cfg[key])
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad value for {key}: {cfg[key]!r} ({e})") from e


def parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# ---------------------------------------------------------------------------
# record files (TSV with schema line)


def write_records(path, schema: str, columns: list, rows: list):
    lines = [f"# schema: shiftdet.{schema} v{FORMAT_VERSION}", "\t".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise DataError(f"record width {len(row)} != {len(columns)} columns")
        lines.append("\t".join(_format_cell(v) for v in row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _format_cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    if v is None:
        return "-"
    return str(v)


def read_records(path) -> tuple:
    """Returns (schema name, columns, rows as string lists)."""
    try:
        text = Path(path).read_text("utf-8")
    except OSError as e:
        raise DataError(f"cannot read records {path}: {e}") from e
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema: shiftdet."):
        raise DataError(f"{path}: missing schema line")
    schema = lines[0].split("shiftdet.", 1)[1].split(" ")[0]
    if len(lines) < 2:
        raise DataError(f"{path}: missing column header")
    columns = lines[1].split("\t")
    rows = [ln.split("\t") for ln in lines[2:] if ln]
    for r in rows:
        if len(r) != len(columns):
            raise DataError(f"{path}: ragged record row")
    return schema, columns, rows
