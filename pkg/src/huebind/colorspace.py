"""
Color space conversions and color-difference primitives.

Conversion chain: sRGB -> linear RGB -> CIE XYZ (D65, 2 deg observer) -> CIE Lab.
HSV uses the standard hexcone model with hue in full-range degrees [0, 360).

Every scalar operation is a thin wrapper around an array function so that
image-level metrics and single-color calls share one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "RgbColor",
    "LabColor",
    "HsvColor",
    "UndefinedAngleError",
    "srgb_to_linear",
    "linear_to_srgb",
    "srgb_to_lab",
    "lab_to_srgb",
    "srgb_to_hsv",
    "srgb_to_lab_array",
    "lab_to_srgb_array",
    "srgb_to_hsv_array",
    "delta_e",
    "delta_e_chroma",
    "angular_error_srgb",
    "angular_error_array",
    "hue_error",
    "hue_error_array",
    "hue_from_half_range",
    "parse_color",
]


class UndefinedAngleError(ValueError):
    """Raised when an angle is requested against the zero RGB vector."""


# sRGB (IEC 61966-2-1) primaries to XYZ, D65.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)

# White point taken as the image of RGB white so that (1, 1, 1) lands on L=100, a=b=0.
WHITE_XYZ = _RGB_TO_XYZ.sum(axis=1)

# CIE constants in exact rational form; keeps the piecewise f() continuous.
_EPSILON = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0


@dataclass(frozen=True)
class RgbColor:
    """sRGB color with channels in [0, 1]."""

    r: float
    g: float
    b: float

    def __post_init__(self) -> None:
        for name in ("r", "g", "b"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0 or v > 1.0:
                raise ValueError(f"RGB channel {name}={v!r} outside [0, 1]")

    @classmethod
    def from_bytes(cls, r: int, g: int, b: int) -> RgbColor:
        for v in (r, g, b):
            if not 0 <= int(v) <= 255:
                raise ValueError(f"byte channel {v!r} outside [0, 255]")
        return cls(r / 255.0, g / 255.0, b / 255.0)

    @classmethod
    def from_array(cls, arr: ArrayLike) -> RgbColor:
        r, g, b = (float(x) for x in np.asarray(arr, dtype=np.float64).reshape(3))
        return cls(r, g, b)

    def to_array(self) -> NDArray[np.float64]:
        return np.array([self.r, self.g, self.b], dtype=np.float64)

    def to_bytes(self) -> tuple[int, int, int]:
        return tuple(int(round(v * 255.0)) for v in (self.r, self.g, self.b))  # type: ignore[return-value]

    def to_hex(self) -> str:
        return "#{:02X}{:02X}{:02X}".format(*self.to_bytes())


@dataclass(frozen=True)
class LabColor:
    """CIE Lab color. ``l`` in [0, 100]; ``a`` and ``b`` unbounded."""

    l: float  # noqa: E741
    a: float
    b: float

    def __post_init__(self) -> None:
        for name in ("l", "a", "b"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Lab component {name} is not finite")
        if not 0.0 <= self.l <= 100.0:
            raise ValueError(f"L={self.l!r} outside [0, 100]")

    def to_array(self) -> NDArray[np.float64]:
        return np.array([self.l, self.a, self.b], dtype=np.float64)


@dataclass(frozen=True)
class HsvColor:
    """HSV color; hue in degrees [0, 360), saturation and value in [0, 1]."""

    h: float
    s: float
    v: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.h) and 0.0 <= self.h < 360.0):
            raise ValueError(f"hue {self.h!r} outside [0, 360)")
        for name in ("s", "v"):
            x = getattr(self, name)
            if not (math.isfinite(x) and 0.0 <= x <= 1.0):
                raise ValueError(f"{name}={x!r} outside [0, 1]")


# ---------------------------------------------------------------------------
# Transfer function
# ---------------------------------------------------------------------------


def srgb_to_linear(srgb: ArrayLike) -> NDArray[np.float64]:
    """Piecewise sRGB gamma expansion (0.04045 knee, 2.4 exponent segment)."""
    c = np.asarray(srgb, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, np.power((np.maximum(c, 0.04045) + 0.055) / 1.055, 2.4))


def linear_to_srgb(linear: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`srgb_to_linear`. Negative inputs are mirrored, not clipped."""
    c = np.asarray(linear, dtype=np.float64)
    mag = np.abs(c)
    out = np.where(
        mag <= 0.0031308,
        mag * 12.92,
        1.055 * np.power(np.maximum(mag, 0.0031308), 1.0 / 2.4) - 0.055,
    )
    return np.sign(c) * out


# ---------------------------------------------------------------------------
# Lab
# ---------------------------------------------------------------------------


def _f(t: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.where(t > _EPSILON, np.cbrt(t), (_KAPPA * t + 16.0) / 116.0)


def _f_inv(ft: NDArray[np.float64]) -> NDArray[np.float64]:
    cube = ft**3
    return np.where(cube > _EPSILON, cube, (116.0 * ft - 16.0) / _KAPPA)


def srgb_to_lab_array(rgb: ArrayLike) -> NDArray[np.float64]:
    """Convert an array of sRGB triples (..., 3) in [0, 1] to Lab (..., 3)."""
    lin = srgb_to_linear(rgb)
    xyz = lin @ _RGB_TO_XYZ.T
    fx, fy, fz = (_f(xyz[..., i] / WHITE_XYZ[i]) for i in range(3))
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    return lab


def lab_to_srgb_array(lab: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Convert Lab (..., 3) to sRGB.

    Returns the sRGB array clamped to [0, 1] and a boolean array (...,) that is
    True where clamping changed any channel by more than 1e-12.
    """
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx) * WHITE_XYZ[0], _f_inv(fy) * WHITE_XYZ[1], _f_inv(fz) * WHITE_XYZ[2]], axis=-1)
    rgb = linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    clamped = np.clip(rgb, 0.0, 1.0)
    flag = np.any(np.abs(clamped - rgb) > 1e-12, axis=-1)
    return clamped, flag


def srgb_to_lab(c: RgbColor) -> LabColor:
    l, a, b = srgb_to_lab_array(c.to_array())  # noqa: E741
    # cbrt rounding can put white a hair above 100
    return LabColor(float(min(max(l, 0.0), 100.0)), float(a), float(b))


def lab_to_srgb(c: LabColor) -> tuple[RgbColor, bool]:
    """Inverse of :func:`srgb_to_lab`. The flag is True when the result was clamped into gamut."""
    rgb, flag = lab_to_srgb_array(c.to_array())
    return RgbColor.from_array(rgb), bool(flag)


# ---------------------------------------------------------------------------
# HSV
# ---------------------------------------------------------------------------


def srgb_to_hsv_array(rgb: ArrayLike) -> NDArray[np.float64]:
    """Hexcone HSV for (..., 3) sRGB arrays. Achromatic pixels get h=0, s=0."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    delta = v - rgb.min(axis=-1)
    chromatic = delta > 0
    safe = np.where(chromatic, delta, 1.0)

    h = np.zeros_like(v)
    r_max = chromatic & (v == r)
    g_max = chromatic & (v == g) & ~r_max
    b_max = chromatic & ~r_max & ~g_max
    h = np.where(r_max, np.mod((g - b) / safe, 6.0), h)
    h = np.where(g_max, (b - r) / safe + 2.0, h)
    h = np.where(b_max, (r - g) / safe + 4.0, h)
    h = h * 60.0
    h = np.where(h >= 360.0, h - 360.0, h)

    s = np.where(v > 0, delta / np.where(v > 0, v, 1.0), 0.0)
    return np.stack([h, s, v], axis=-1)


def srgb_to_hsv(c: RgbColor) -> HsvColor:
    h, s, v = srgb_to_hsv_array(c.to_array())
    return HsvColor(float(h), float(s), float(v))


def hue_from_half_range(h: ArrayLike) -> NDArray[np.float64] | float:
    """Convert half-range hue (0-179, as in 8-bit OpenCV HSV) to degrees."""
    out = np.asarray(h, dtype=np.float64) * 2.0
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Differences
# ---------------------------------------------------------------------------


def delta_e(x: LabColor, y: LabColor) -> float:
    """CIE76 color difference: Euclidean distance over (L, a, b)."""
    return math.sqrt((x.l - y.l) ** 2 + (x.a - y.a) ** 2 + (x.b - y.b) ** 2)


def delta_e_chroma(x: LabColor, y: LabColor) -> float:
    """Euclidean distance over (a, b) only; lightness is ignored."""
    return math.sqrt((x.a - y.a) ** 2 + (x.b - y.b) ** 2)


def angular_error_array(rgb: ArrayLike, target: ArrayLike) -> NDArray[np.float64]:
    """Angle in degrees between each RGB vector in ``rgb`` (..., 3) and ``target``.

    Entries where either vector is zero come back as NaN; callers decide how
    to treat them.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    rgb, target = np.broadcast_arrays(rgb, target)
    norms = np.linalg.norm(rgb, axis=-1) * np.linalg.norm(target, axis=-1)
    # atan2 keeps precision for nearly parallel vectors where acos does not
    dot = np.sum(rgb * target, axis=-1)
    cross = np.linalg.norm(np.cross(rgb, target), axis=-1)
    return np.where(norms > 0, np.degrees(np.arctan2(cross, dot)), np.nan)


def angular_error_srgb(x: RgbColor, y: RgbColor) -> float:
    if max(x.r, x.g, x.b) == 0.0 or max(y.r, y.g, y.b) == 0.0:
        raise UndefinedAngleError("angle against the zero RGB vector is undefined")
    return float(angular_error_array(x.to_array(), y.to_array()))


def hue_error_array(h: ArrayLike, target_h: ArrayLike) -> NDArray[np.float64]:
    """Circular hue difference in degrees, wrapping at 360."""
    d = np.abs(np.asarray(h, dtype=np.float64) - np.asarray(target_h, dtype=np.float64)) % 360.0
    return np.minimum(d, 360.0 - d)


def hue_error(x: HsvColor, y: HsvColor) -> float:
    return float(hue_error_array(x.h, y.h))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_color(text: str) -> RgbColor:
    """Parse ``#RRGGBB`` / ``RRGGBB`` hex or ``r,g,b`` byte triples."""
    s = text.strip()
    if "," in s:
        parts = s.split(",")
        if len(parts) != 3:
            raise ValueError(f"expected r,g,b bytes, got {text!r}")
        try:
            vals = [int(p.strip()) for p in parts]
        except ValueError:
            raise ValueError(f"non-integer byte in {text!r}") from None
        return RgbColor.from_bytes(*vals)
    h = s[1:] if s.startswith("#") else s
    if len(h) != 6:
        raise ValueError(f"expected #RRGGBB, got {text!r}")
    try:
        vals = [int(h[i : i + 2], 16) for i in (0, 2, 4)]
    except ValueError:
        raise ValueError(f"bad hex digits in {text!r}") from None
    return RgbColor.from_bytes(*vals)
