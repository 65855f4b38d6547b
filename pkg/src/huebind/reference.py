"""
Color reference inputs: synthetic patches and deterministic stub encoders.

The stub encoders stand in for a pretrained text encoder and for an image
encoder plus adapter projection. They are seeded random linear maps; nothing
here carries learned semantics, so tests build any alignment they need
explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from . import rng
from .colorspace import RgbColor

__all__ = [
    "ReferenceImage",
    "StubTextEncoder",
    "StubImageEncoder",
    "band_sizes",
    "make_patch",
    "encode_reference",
    "encode_prompt",
]


def band_sizes(total: int, k: int) -> list[int]:
    """Split ``total`` pixels into ``k`` bands: each band takes ceil(remaining / bands_left).

    Equivalently the first ``total % k`` bands are one pixel taller.
    """
    if k < 1:
        raise ValueError("need at least one band")
    if total < k:
        raise ValueError(f"cannot split {total} pixels into {k} non-empty bands")
    sizes = []
    remaining = total
    for left in range(k, 0, -1):
        s = -(-remaining // left)
        sizes.append(s)
        remaining -= s
    return sizes


@dataclass(frozen=True, eq=False)
class ReferenceImage:
    """RGB raster (height, width, 3) in [0, 1] with its band layout."""

    pixels: NDArray[np.float64] = field(repr=False)
    colors: tuple[RgbColor, ...]
    orientation: str = "horizontal"

    def __post_init__(self) -> None:
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"pixels must be (H>=1, W>=1, 3), got {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 1:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.orientation not in ("horizontal", "vertical"):
            raise ValueError("orientation must be 'horizontal' or 'vertical'")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def regions(self) -> list[tuple[slice, slice]]:
        """(row slice, column slice) for each band, in color order."""
        axis_len = self.height if self.orientation == "horizontal" else self.width
        out = []
        start = 0
        for s in band_sizes(axis_len, len(self.colors)):
            band = slice(start, start + s)
            out.append((band, slice(None)) if self.orientation == "horizontal" else (slice(None), band))
            start += s
        return out


def make_patch(
    colors: Sequence[RgbColor],
    width: int,
    height: int,
    orientation: str = "horizontal",
) -> ReferenceImage:
    """Solid patch for one color; equal bands (top to bottom, or left to right) for several."""
    colors = tuple(colors)
    if not colors:
        raise ValueError("need at least one color")
    if width < 1 or height < 1:
        raise ValueError("patch dimensions must be >= 1")
    pixels = np.empty((height, width, 3), dtype=np.float64)
    shell = ReferenceImage(np.zeros((height, width, 3)), colors, orientation)
    for (rows, cols), c in zip(shell.regions(), colors):
        pixels[rows, cols] = c.to_array()
    return ReferenceImage(pixels, colors, orientation)


@dataclass(frozen=True, eq=False)
class StubImageEncoder:
    """Maps each band's mean RGB to one adapter token: ``token = W @ rgb + bias``."""

    weight: NDArray[np.float64]  # (dim, 3)
    bias: NDArray[np.float64]  # (dim,)

    @classmethod
    def seeded(cls, seed: int, dim: int, bias: bool = False) -> StubImageEncoder:
        w = rng.standard_normal(rng.derive_seed(seed, "image-encoder"), (dim, 3))
        b = rng.standard_normal(rng.derive_seed(seed, "image-bias"), (dim,)) if bias else np.zeros(dim)
        return cls(w, b)

    @property
    def dim(self) -> int:
        return self.weight.shape[0]


def encode_reference(img: ReferenceImage, encoder: StubImageEncoder) -> NDArray[np.float64]:
    """One token per band region, shape (bands, dim)."""
    means = np.stack([img.pixels[rows, cols].reshape(-1, 3).mean(axis=0) for rows, cols in img.regions()])
    return means @ encoder.weight.T + encoder.bias


@dataclass(frozen=True, eq=False)
class StubTextEncoder:
    """Token -> fixed embedding.

    Tokens in ``vocabulary`` use the given vectors; any other token gets a
    standard-normal vector seeded from SHA-256 of (seed, token), so it is
    stable across runs and processes.
    """

    dim: int
    seed: int = 0
    vocabulary: Mapping[str, NDArray[np.float64]] = field(default_factory=dict)

    def embed(self, token: str) -> NDArray[np.float64]:
        if token in self.vocabulary:
            v = np.asarray(self.vocabulary[token], dtype=np.float64)
            if v.shape != (self.dim,):
                raise ValueError(f"vocabulary vector for {token!r} has shape {v.shape}, expected ({self.dim},)")
            return v.copy()
        return rng.standard_normal(rng.derive_seed(self.seed, "token", token), (self.dim,))


def encode_prompt(
    tokens: Sequence[str],
    encoder: StubTextEncoder,
    object_token: str,
) -> tuple[NDArray[np.float64], int]:
    """Embed prompt tokens; return (embeddings, index of the first ``object_token``)."""
    tokens = list(tokens)
    if not tokens:
        raise ValueError("prompt has no tokens")
    try:
        index = tokens.index(object_token)
    except ValueError:
        raise ValueError(f"object token {object_token!r} not in prompt {tokens}") from None
    return np.stack([encoder.embed(t) for t in tokens]), index
