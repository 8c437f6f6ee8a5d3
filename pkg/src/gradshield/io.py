"""Bit-specified persistence: PGM images, checkpoints, CSV/JSON results."""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import RESULTS_FORMAT
from .nn import ModelParams
from .tensor import Tensor

CHECKPOINT_MAGIC = b"DGSW1\n"
CHECKPOINT_VERSION = 1


# --- PGM (binary P5, maxval 255) -----------------------------------------


def write_pgm(path, image):
    """Clip to [0,1], scale to bytes, write binary P5."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    plane = arr.reshape(arr.shape[-2], arr.shape[-1])
    data = np.round(np.clip(plane, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary P5 -> (1,H,W) float32 in [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def fail(offset, why):
        raise ValueError(f"{path}: malformed PGM at byte {offset}: {why}")

    pos = 0

    def token():
        nonlocal pos
        while pos < len(blob):
            if blob[pos : pos + 1].isspace():
                pos += 1
            elif blob[pos : pos + 1] == b"#":
                nl = blob.find(b"\n", pos)
                pos = len(blob) if nl < 0 else nl + 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            fail(start, "unexpected end of header")
        return blob[start:pos], start

    magic, off = token()
    if magic != b"P5":
        fail(off, f"expected P5, got {magic!r}")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, off = token()
        try:
            fields.append(int(tok))
        except ValueError:
            fail(off, f"bad {name} {tok!r}")
    w, h, maxval = fields
    if maxval != 255:
        fail(off, f"unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    need = w * h
    raster = blob[pos : pos + need]
    if len(raster) != need:
        fail(pos, f"raster truncated ({len(raster)} of {need} bytes)")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(h, w)
    return (img.astype(np.float32) / 255.0)[None]


# --- checkpoints ----------------------------------------------------------


def save_checkpoint(params, path):
    """Binary checkpoint: magic, version, count, per-tensor name/dims/f32 LE."""
    items = list(params) if isinstance(params, ModelParams) else list(params.items())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(items)))
        for name, tensor in items:
            arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()

    def fail(why):
        raise ValueError(f"{path}: bad checkpoint: {why}")

    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        fail("magic mismatch")
    pos = len(CHECKPOINT_MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            fail(f"truncated at byte {pos}")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        fail(f"unsupported version {version}")
    params = ModelParams()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        payload = take(4 * int(np.prod(dims, dtype=np.int64)) if ndim else 4)
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        try:
            params.add(name, Tensor(arr, requires_grad=True))
        except ValueError as err:
            fail(str(err))
    if pos != len(blob):
        fail(f"{len(blob) - pos} trailing bytes")
    return params


# --- results --------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def write_curves_csv(path, attacker_view, defender_view):
    if len(attacker_view) != len(defender_view):
        raise ValueError("curve length mismatch")
    lines = ["step,attacker_view,defender_view"]
    for i, (a, d) in enumerate(zip(attacker_view, defender_view)):
        lines.append(f"{i},{_fmt(a)},{_fmt(d)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_metrics_json(path, records, extra=None):
    payload = {
        "format_version": RESULTS_FORMAT,
        "records": [r.as_dict() for r in records],
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_results(records, curves, path_prefix):
    """Write the two-curve CSV and the metrics JSON; returns written paths."""
    for rec in records:
        vals = [rec.psnr_db, rec.ms_ssim, rec.nc, rec.sr]
        if not np.isfinite(vals).all():
            raise ValueError(f"emit_results: non-finite metrics in {rec.name!r}")
    attacker_view, defender_view = curves
    if not (np.isfinite(attacker_view).all() and np.isfinite(defender_view).all()):
        raise ValueError("emit_results: non-finite curve values")
    csv_path = f"{path_prefix}curves.csv"
    json_path = f"{path_prefix}metrics.json"
    write_curves_csv(csv_path, list(attacker_view), list(defender_view))
    write_metrics_json(json_path, records)
    return [csv_path, json_path]
