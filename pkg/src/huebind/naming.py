"""
RGB to basic-color-term attribution.

Two backends:

* a discretized lookup table of per-cell probabilities over the eleven basic
  English color terms (see :func:`load_naming_table` for the file format);
* a built-in prototype set of eleven Lab anchors, used when no table is given.

Term order is fixed everywhere (file columns, tie-breaks, arrays)::

    black, white, gray, red, green, blue, yellow, brown, orange, pink, purple
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .colorspace import LabColor, RgbColor, srgb_to_lab, srgb_to_lab_array

__all__ = [
    "TERMS",
    "CHROMATIC_TERMS",
    "ColorTerm",
    "NamingTable",
    "PrototypeSet",
    "DEFAULT_PROTOTYPES",
    "NamingTableError",
    "load_naming_table",
    "save_naming_table",
    "load_w2c_table",
    "table_from_prototypes",
    "name_color",
    "interpolate_colors",
    "TABLE_ENV_VAR",
]

TERMS: tuple[str, ...] = (
    "black",
    "white",
    "gray",
    "red",
    "green",
    "blue",
    "yellow",
    "brown",
    "orange",
    "pink",
    "purple",
)
CHROMATIC_TERMS = frozenset(TERMS[3:])

TABLE_ENV_VAR = "HUEBIND_NAMING_TABLE"

# Softmin temperature for prototype confidences, in delta-E units.
PROTOTYPE_TEMPERATURE = 10.0


class NamingTableError(ValueError):
    """Malformed naming-table file."""


@dataclass(frozen=True)
class ColorTerm:
    name: str

    def __post_init__(self) -> None:
        if self.name not in TERMS:
            raise ValueError(f"{self.name!r} is not a basic color term")

    @property
    def chromatic(self) -> bool:
        return self.name in CHROMATIC_TERMS

    @property
    def index(self) -> int:
        return TERMS.index(self.name)


@dataclass(frozen=True, eq=False)
class NamingTable:
    """Probability grid of shape (resolution, resolution, resolution, 11), indexed [r, g, b]."""

    resolution: int
    cells: NDArray[np.float64] = field(repr=False)

    def __post_init__(self) -> None:
        n = self.resolution
        if n < 1:
            raise ValueError("resolution must be >= 1")
        cells = np.asarray(self.cells, dtype=np.float64)
        if cells.shape != (n, n, n, len(TERMS)):
            raise ValueError(f"cells shape {cells.shape} != {(n, n, n, len(TERMS))}")
        if not np.all(np.isfinite(cells)) or np.any(cells < 0):
            raise ValueError("probabilities must be finite and non-negative")
        if np.any(np.abs(cells.sum(axis=-1) - 1.0) > 1e-6):
            raise ValueError("every cell must sum to 1 within 1e-6")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    def cell_index(self, c: RgbColor) -> tuple[int, int, int]:
        n = self.resolution
        return tuple(min(int(math.floor(v * n)), n - 1) for v in (c.r, c.g, c.b))  # type: ignore[return-value]

    def probabilities(self, c: RgbColor) -> NDArray[np.float64]:
        return self.cells[self.cell_index(c)]


@dataclass(frozen=True)
class PrototypeSet:
    """One sRGB anchor per term; Lab prototypes are derived from them."""

    anchors: dict[str, RgbColor]

    def __post_init__(self) -> None:
        if set(self.anchors) != set(TERMS):
            raise ValueError("prototype set must have exactly one anchor per basic term")

    @property
    def lab(self) -> NDArray[np.float64]:
        return srgb_to_lab_array(np.stack([self.anchors[t].to_array() for t in TERMS]))

    def prototype(self, term: str) -> LabColor:
        return srgb_to_lab(self.anchors[term])


# Documented constants, not measured focal colors.
DEFAULT_PROTOTYPES = PrototypeSet(
    {
        "black": RgbColor(0.0, 0.0, 0.0),
        "white": RgbColor(1.0, 1.0, 1.0),
        "gray": RgbColor(0.5, 0.5, 0.5),
        "red": RgbColor(1.0, 0.0, 0.0),
        "green": RgbColor(0.0, 0.5, 0.0),
        "blue": RgbColor(0.0, 0.0, 1.0),
        "yellow": RgbColor(1.0, 1.0, 0.0),
        "brown": RgbColor(0.545, 0.271, 0.075),
        "orange": RgbColor(1.0, 0.647, 0.0),
        "pink": RgbColor(1.0, 0.753, 0.796),
        "purple": RgbColor(0.5, 0.0, 0.5),
    }
)
_DEFAULT_LAB = DEFAULT_PROTOTYPES.lab


def _prototype_scores(lab: NDArray[np.float64], protos: NDArray[np.float64], temperature: float) -> NDArray[np.float64]:
    d = np.linalg.norm(lab[..., None, :] - protos, axis=-1)
    logits = -d / temperature
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def name_color(
    c: RgbColor,
    table: NamingTable | None = None,
    prototypes: PrototypeSet | None = None,
    temperature: float = PROTOTYPE_TEMPERATURE,
) -> tuple[ColorTerm, float]:
    """Return the basic color term for ``c`` and a confidence in [0, 1].

    With a table the term is the argmax of the enclosing cell and the
    confidence is that cell's probability. Without one, the nearest Lab
    prototype wins and the confidence is its softmin weight. Ties go to the
    earlier term in ``TERMS``.
    """
    if table is not None:
        p = table.probabilities(c)
        i = int(np.argmax(p))
        return ColorTerm(TERMS[i]), float(p[i])
    protos = _DEFAULT_LAB if prototypes is None else prototypes.lab
    lab = srgb_to_lab_array(c.to_array())
    d = np.linalg.norm(protos - lab, axis=-1)
    i = int(np.argmin(d))
    w = _prototype_scores(lab, protos, temperature)
    return ColorTerm(TERMS[i]), float(w[i])


def table_from_prototypes(
    resolution: int = 32,
    prototypes: PrototypeSet | None = None,
    temperature: float = PROTOTYPE_TEMPERATURE,
) -> NamingTable:
    """Build a table by evaluating prototype softmin weights at cell centers."""
    n = resolution
    centers = (np.arange(n, dtype=np.float64) + 0.5) / n
    grid = np.stack(np.meshgrid(centers, centers, centers, indexing="ij"), axis=-1)
    protos = _DEFAULT_LAB if prototypes is None else prototypes.lab
    cells = _prototype_scores(srgb_to_lab_array(grid), protos, temperature)
    return NamingTable(n, cells)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def load_naming_table(path: str | os.PathLike[str]) -> NamingTable:
    """Read a naming table.

    Format: a header line ``resolution=<N>``, then N**3 rows of eleven
    whitespace-separated probabilities in ``TERMS`` order. Rows are ordered
    row-major by (r-index, g-index, b-index), so b varies fastest. Blank lines
    and lines starting with ``#`` are skipped.
    """
    rows: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if s and not s.startswith("#"):
                rows.append((lineno, s))
    if not rows:
        raise NamingTableError(f"{path}: no rows")
    lineno, header = rows[0]
    key, _, value = header.partition("=")
    if key.strip() != "resolution" or not value.strip().isdigit() or int(value) < 1:
        raise NamingTableError(f"{path}:{lineno}: expected header 'resolution=<N>', got {header!r}")
    n = int(value)
    body = rows[1:]
    if not body:
        raise NamingTableError(f"{path}: no rows")
    if len(body) != n**3:
        raise NamingTableError(f"{path}: expected {n**3} rows for resolution {n}, found {len(body)}")

    cells = np.empty((n**3, len(TERMS)), dtype=np.float64)
    for k, (lineno, s) in enumerate(body):
        parts = s.split()
        if len(parts) != len(TERMS):
            raise NamingTableError(f"{path}:{lineno}: row {k} has {len(parts)} values, expected {len(TERMS)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise NamingTableError(f"{path}:{lineno}: row {k} is not numeric") from None
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise NamingTableError(f"{path}:{lineno}: row {k} has a negative or non-finite probability")
        total = math.fsum(vals)
        if abs(total - 1.0) > 1e-6:
            raise NamingTableError(f"{path}:{lineno}: row {k} sums to {total:.9g}, not 1")
        cells[k] = vals
    return NamingTable(n, cells.reshape(n, n, n, len(TERMS)))


def save_naming_table(table: NamingTable, path: str | os.PathLike[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"resolution={table.resolution}\n")
        for row in table.cells.reshape(-1, len(TERMS)):
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


# Column order of the widely distributed w2c.txt color-naming matrix.
_W2C_TERMS = ("black", "blue", "brown", "gray", "green", "orange", "pink", "purple", "red", "white", "yellow")


def load_w2c_table(path: str | os.PathLike[str], resolution: int = 32) -> NamingTable:
    """Import a flat ``R G B p1..p11`` matrix (w2c layout, alphabetical term columns).

    The RGB columns are bin values in 0..255; cells are placed by those values,
    not by row order. Rows are renormalized to absorb print rounding.
    """
    data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if data.shape[1] != 3 + len(TERMS):
        raise NamingTableError(f"{path}: expected 14 columns, found {data.shape[1]}")
    n = resolution
    idx = np.clip(np.floor(data[:, :3] / 256.0 * n).astype(int), 0, n - 1)
    perm = [_W2C_TERMS.index(t) for t in TERMS]
    probs = data[:, 3:][:, perm]
    sums = probs.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise NamingTableError(f"{path}: row with zero total probability")
    cells = np.full((n, n, n, len(TERMS)), np.nan)
    cells[idx[:, 0], idx[:, 1], idx[:, 2]] = probs / sums
    if np.isnan(cells).any():
        raise NamingTableError(f"{path}: not every cell of the {n}^3 grid is covered")
    return NamingTable(n, cells)


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------


def interpolate_colors(a: RgbColor, b: RgbColor, n: int) -> list[RgbColor]:
    """``n`` colors linearly spaced per sRGB channel, endpoints included exactly."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    out = []
    for i in range(n):
        if i == 0:
            out.append(a)
        elif i == n - 1:
            out.append(b)
        else:
            t = i / (n - 1)
            vals = [(1.0 - t) * x + t * y for x, y in zip((a.r, a.g, a.b), (b.r, b.g, b.b))]
            # rounding can step a hair outside the endpoint range
            vals = [min(max(v, min(x, y)), max(x, y)) for v, x, y in zip(vals, (a.r, a.g, a.b), (b.r, b.g, b.b))]
            out.append(RgbColor(*vals))
    return out
