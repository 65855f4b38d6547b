"""
Raster and table I/O.

Images load as float arrays in [0, 1] (8-bit channels divided by 255).
Masks load as boolean arrays: any 8-bit gray value >= 128 is in-mask.
PPM/PGM are written by hand (binary P6/P5, maxval 255) so output bytes do
not depend on the imaging library version; PNG goes through Pillow.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from PIL import Image

MASK_THRESHOLD = 128


def load_image(path: str | os.PathLike[str]) -> NDArray[np.float64]:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def load_mask(path: str | os.PathLike[str]) -> NDArray[np.bool_]:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= MASK_THRESHOLD


def to_bytes(arr: ArrayLike) -> NDArray[np.uint8]:
    a = np.asarray(arr, dtype=np.float64)
    return np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)


def encode_ppm(rgb: ArrayLike) -> bytes:
    px = to_bytes(rgb)
    h, w, _ = px.shape
    return b"P6\n%d %d\n255\n" % (w, h) + px.tobytes()


def encode_pgm(gray: ArrayLike) -> bytes:
    """``gray`` in [0, 1]; binary masks become 0/255."""
    px = to_bytes(gray)
    h, w = px.shape
    return b"P5\n%d %d\n255\n" % (w, h) + px.tobytes()


def save_image(rgb: ArrayLike, path: str | os.PathLike[str]) -> None:
    p = Path(path)
    if p.suffix.lower() in (".ppm", ".pnm"):
        p.write_bytes(encode_ppm(rgb))
    else:
        Image.fromarray(to_bytes(rgb)).save(p)


def save_mask(mask: ArrayLike, path: str | os.PathLike[str]) -> None:
    m = np.asarray(mask, dtype=np.float64)
    p = Path(path)
    if p.suffix.lower() in (".pgm", ".pnm"):
        p.write_bytes(encode_pgm(m))
    else:
        Image.fromarray(to_bytes(m)).save(p)


def matrix_to_json(values: ArrayLike, rows: Sequence[str] | None = None, cols: Sequence[str] | None = None, **extra: Any) -> dict[str, Any]:
    """Row-major values plus shape, for heatmap tools."""
    a = np.asarray(values, dtype=np.float64)
    out: dict[str, Any] = {"shape": list(a.shape), "values": a.reshape(-1).tolist()}
    if rows is not None:
        out["rows"] = list(rows)
    if cols is not None:
        out["cols"] = list(cols)
    out.update(extra)
    return out


def matrix_to_csv(values: ArrayLike, rows: Sequence[str] | None = None, cols: Sequence[str] | None = None) -> str:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("CSV export needs a 2-D matrix")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if cols is not None:
        w.writerow(([""] if rows is not None else []) + list(cols))
    for i, r in enumerate(a):
        cells = [repr(float(v)) for v in r]
        w.writerow(([rows[i]] if rows is not None else []) + cells)
    return buf.getvalue()


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"
