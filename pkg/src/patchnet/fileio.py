"""File formats: binary PPM frames, weight files, key=value configs, sequences, CSV."""
from __future__ import annotations

import csv
import io
import os
import re
import struct
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np

from .aggregation import AggregationStage, ModelParams, adjacency_masks
from .boxes import BBox
from .correlation import CorrelationConfig, FourierCoefficients

MAGIC = b"PNETW1"


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, newline="" if mode == "w" else None) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


# ----------------------------------------------------------------------------
# PPM


def write_ppm(path, image: np.ndarray):
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise FormatError(f"PPM writer needs an (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    atomic_write(path, b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def _tokens(data: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        out.append(data[start:pos])
    return out, pos


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(data, 4, 0)
    if magic != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    body = data[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: pixel data truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


# ----------------------------------------------------------------------------
# weights

_HEADER = struct.Struct("<7i")


def _param_arrays(params: ModelParams):
    yield params.coeffs.weights
    for st in params.stages:
        yield st.score_conv
        yield st.offset_conv
        yield st.pool_bias
        yield st.score_mask
        yield st.offset_mask
    yield np.array([params.loss_alpha])


def save_weights(path, params: ModelParams):
    c = params.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_HEADER.pack(c.N, c.K, c.template_size, c.search_size, c.corr_stride,
                           c.channels, len(params.stages)))
    for arr in _param_arrays(params):
        flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
        buf.write(struct.pack("<I", flat.size))
        buf.write(flat.tobytes())
    atomic_write(path, buf.getvalue())


def load_weights(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    pos = len(MAGIC)
    N, K, tsz, ssz, stride, ch, n_stages = _HEADER.unpack_from(data, pos)
    pos += _HEADER.size
    config = CorrelationConfig(N=N, K=K, template_size=tsz, search_size=ssz,
                               corr_stride=stride, channels=ch)
    if n_stages != config.stages:
        raise FormatError(f"{path}: {n_stages} stages, config implies {config.stages}")

    def take(shape):
        nonlocal pos
        want = int(np.prod(shape))
        if pos + 4 > len(data):
            raise FormatError(f"{path}: truncated payload")
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if count != want:
            raise FormatError(f"{path}: field has {count} values, expected {want} for shape {shape}")
        if pos + 8 * count > len(data):
            raise FormatError(f"{path}: truncated payload")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
        return arr

    coeffs = FourierCoefficients(take((K, K)))
    if not coeffs.is_symmetric():
        raise FormatError(f"{path}: Fourier coefficients are not mirror-symmetric")
    stages = []
    for s in range(1, n_stages + 1):
        sm, om = adjacency_masks(config, s)
        stages.append(AggregationStage(take(sm.shape), take(om.shape), take((4, 4)),
                                       take(sm.shape), take(om.shape)))
    alpha = float(take((1,))[0])
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return ModelParams(config, coeffs, stages, alpha)


# ----------------------------------------------------------------------------
# flat key=value config

_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")


class ConfigError(ValueError):
    pass


def parse_config(text: str, schema: dict[str, type]) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"line {n}: expected key=value, got {raw.strip()!r}")
        key, value = m.groups()
        if key not in schema:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        typ = schema[key]
        try:
            if typ is bool:
                low = value.lower()
                if low not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(value)
                out[key] = low in ("1", "true", "yes")
            else:
                out[key] = typ(value)
        except ValueError:
            raise ConfigError(f"line {n}: {key} expects {typ.__name__}, got {value!r}") from None
    return out


def schema_of(*classes) -> dict[str, type]:
    schema = {}
    for cls in classes:
        for f in fields(cls):
            typ = f.type if isinstance(f.type, type) else {"int": int, "float": float,
                                                            "bool": bool, "str": str}.get(f.type)
            if typ is not None:
                schema[f.name] = typ
    return schema


# ----------------------------------------------------------------------------
# sequences

FRAME_PATTERN = "frame_{:06d}.ppm"


def write_sequence(directory, frames, gt: dict[int, list[BBox]]):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        write_ppm(d / FRAME_PATTERN.format(i), f)
    lines = []
    for i in range(len(frames)):
        for obj_id, b in enumerate(gt.get(i, [])):
            lines.append(f"{obj_id},{b.x_min:.6f},{b.y_min:.6f},{b.x_max:.6f},{b.y_max:.6f}")
    atomic_write(d / "groundtruth.txt", "\n".join(lines) + "\n")


def list_frames(directory) -> list[Path]:
    """Dense frame list; raises naming the first gap in the numbering."""
    d = Path(directory)
    found = {}
    for p in d.glob("frame_*.ppm"):
        m = re.fullmatch(r"frame_(\d{6})\.ppm", p.name)
        if m:
            found[int(m.group(1))] = p
    if not found:
        raise FormatError(f"{d}: no frame_%06d.ppm files")
    for i in range(max(found) + 1):
        if i not in found:
            raise FormatError(f"{d}: missing frame {FRAME_PATTERN.format(i)}")
    return [found[i] for i in range(len(found))]


def read_groundtruth(path, n_frames: int | None = None) -> dict[int, list[BBox]]:
    """groundtruth.txt: one line per frame per object ``object_id,x_min,y_min,x_max,y_max``.

    Lines are grouped by frame: object ids restart (or repeat) when a new frame begins.
    """
    gt: dict[int, list[BBox]] = {}
    frame = -1
    seen: set[int] = set()
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise FormatError(f"{path}:{n}: expected 5 fields, got {len(parts)}")
        obj = int(parts[0])
        if frame < 0 or obj in seen:
            frame += 1
            seen = set()
        seen.add(obj)
        gt.setdefault(frame, []).append(BBox(*map(float, parts[1:])))
    if n_frames is not None:
        for i in range(n_frames):
            gt.setdefault(i, [])
    return gt


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    if path is None or str(path) == "-":
        return buf.getvalue()
    atomic_write(path, buf.getvalue())
    return buf.getvalue()
