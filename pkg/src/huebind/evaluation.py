"""
Color accuracy metrics over segmented images, color leakage, and paired-comparison scaling.

Masked metrics rank in-mask pixels by closeness to the target and average
each error family over the closest ``p`` percent. Four families are
reported: CIE76 delta-E, chroma-only delta-E, angular error between RGB
vectors, and circular hue error.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from statistics import NormalDist
from typing import Any, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .colorspace import (
    RgbColor,
    angular_error_array,
    hue_error_array,
    srgb_to_hsv_array,
    srgb_to_lab_array,
)

__all__ = [
    "FAMILIES",
    "DEFAULT_SELECTIONS",
    "DEFAULT_HUE_THRESHOLD",
    "MetricDomainError",
    "MaskedImage",
    "ColorMetricsReport",
    "LeakageReport",
    "ThurstoneResult",
    "BatchCase",
    "per_pixel_errors",
    "selection_count",
    "masked_color_metrics",
    "color_leakage",
    "thurstone_case_v",
    "montag_sigma",
    "read_study_csv",
    "batch_report",
    "format_selection",
]

FAMILIES = ("delta_e", "delta_e_ch", "mae_srgb", "mae_hue")
DEFAULT_SELECTIONS = (10.0, 50.0, 100.0)
DEFAULT_HUE_THRESHOLD = 10.0
RANKINGS = ("per_metric", "delta_e")


class MetricDomainError(ValueError):
    """Input outside a metric's domain (empty mask, no background, bad selection, ...)."""


@dataclass(frozen=True, eq=False)
class MaskedImage:
    """RGB image (H, W, 3) in [0, 1] and a boolean object mask (H, W)."""

    image: NDArray[np.float64]
    mask: NDArray[np.bool_]

    def __post_init__(self) -> None:
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {img.shape}")
        if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
            raise ValueError("image values must lie in [0, 1]")
        m = np.asarray(self.mask)
        if m.shape != img.shape[:2]:
            raise ValueError(f"mask shape {m.shape} != image shape {img.shape[:2]}")
        if m.dtype != np.bool_:
            if not np.all((m == 0) | (m == 1)):
                raise ValueError("mask must be binary")
            m = m.astype(bool)
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "mask", m)

    def inside(self) -> NDArray[np.float64]:
        return self.image[self.mask]

    def outside(self) -> NDArray[np.float64]:
        return self.image[~self.mask]


def format_selection(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else repr(float(p))


def selection_count(n: int, p: float) -> int:
    """Pixels kept for a ``p`` percent selection of ``n``: ceil(p/100 * n), computed exactly."""
    if not 0.0 < p <= 100.0:
        raise MetricDomainError(f"selection {p} outside (0, 100]")
    return math.ceil(Fraction(p) * n / 100)


def per_pixel_errors(
    pixels: ArrayLike, target: RgbColor, saturation_floor: float = 0.0
) -> dict[str, NDArray[np.float64]]:
    """Per-pixel error of each family against ``target``.

    Undefined entries are NaN: angular error for zero-RGB pixels, and hue
    error for pixels whose saturation is below ``saturation_floor``.
    """
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    t = target.to_array()
    lab = srgb_to_lab_array(px)
    t_lab = srgb_to_lab_array(t)
    diff = lab - t_lab
    hsv = srgb_to_hsv_array(px)
    t_hsv = srgb_to_hsv_array(t)
    hue = hue_error_array(hsv[:, 0], t_hsv[0])
    if saturation_floor > 0:
        hue = np.where(hsv[:, 1] < saturation_floor, np.nan, hue)
    return {
        "delta_e": np.sqrt(np.sum(diff**2, axis=1)),
        "delta_e_ch": np.sqrt(np.sum(diff[:, 1:] ** 2, axis=1)),
        "mae_srgb": angular_error_array(px, t),
        "mae_hue": hue,
    }


@dataclass
class ColorMetricsReport:
    selections: tuple[float, ...]
    ranking: str
    values: dict[str, dict[float, float]]
    pixels: dict[str, dict[float, int]]
    mask_pixels: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "selections": [format_selection(p) for p in self.selections],
            "ranking": self.ranking,
            "mask_pixels": self.mask_pixels,
            "metrics": {f: {format_selection(p): v for p, v in self.values[f].items()} for f in FAMILIES},
            "pixels": {f: {format_selection(p): k for p, k in self.pixels[f].items()} for f in FAMILIES},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ColorMetricsReport:
        sels = tuple(float(s) for s in d["selections"])
        return cls(
            selections=sels,
            ranking=d["ranking"],
            values={f: {float(p): float(v) for p, v in d["metrics"][f].items()} for f in FAMILIES},
            pixels={f: {float(p): int(k) for p, k in d["pixels"][f].items()} for f in FAMILIES},
            mask_pixels=int(d["mask_pixels"]),
        )


def masked_color_metrics(
    mi: MaskedImage,
    target: RgbColor,
    selections: Iterable[float] = DEFAULT_SELECTIONS,
    ranking: str = "per_metric",
    saturation_floor: float = 0.0,
) -> ColorMetricsReport:
    """Mean error of the closest ``p`` percent of in-mask pixels, for each selection.

    ``ranking="per_metric"`` ranks pixels separately by each family's own
    error, which makes every family non-decreasing in ``p``.
    ``ranking="delta_e"`` ranks once by delta-E and averages every family over
    that same pixel set. Stable sorting breaks ties by pixel order.
    Pixels with an undefined error (see :func:`per_pixel_errors`) are left
    out of that family.
    """
    if ranking not in RANKINGS:
        raise ValueError(f"ranking must be one of {RANKINGS}")
    sels = tuple(sorted({float(p) for p in selections}))
    if not sels:
        raise MetricDomainError("no selections requested")
    for p in sels:
        selection_count(1, p)
    if max(target.r, target.g, target.b) == 0.0:
        raise MetricDomainError("target is black; RGB angular error is undefined")
    px = mi.inside()
    if px.shape[0] == 0:
        raise MetricDomainError("mask is empty")
    errs = per_pixel_errors(px, target, saturation_floor)

    values: dict[str, dict[float, float]] = {f: {} for f in FAMILIES}
    counts: dict[str, dict[float, int]] = {f: {} for f in FAMILIES}
    if ranking == "per_metric":
        for f in FAMILIES:
            e = errs[f][~np.isnan(errs[f])]
            if e.size == 0:
                raise MetricDomainError(f"no in-mask pixel has a defined {f}")
            e = np.sort(e, kind="stable")
            prev = -math.inf
            for p in sels:
                k = selection_count(e.size, p)
                # exact prefix means of sorted data never decrease; drop ulp-level inversions
                prev = max(prev, math.fsum(e[:k]) / k)
                values[f][p] = prev
                counts[f][p] = k
    else:
        order = np.argsort(errs["delta_e"], kind="stable")
        for p in sels:
            kept = order[: selection_count(px.shape[0], p)]
            for f in FAMILIES:
                e = errs[f][kept]
                e = e[~np.isnan(e)]
                if e.size == 0:
                    raise MetricDomainError(f"no selected pixel has a defined {f} at {format_selection(p)}%")
                values[f][p] = math.fsum(e) / e.size
                counts[f][p] = int(e.size)
    return ColorMetricsReport(sels, ranking, values, counts, int(px.shape[0]))


# ---------------------------------------------------------------------------
# Leakage
# ---------------------------------------------------------------------------


@dataclass
class LeakageReport:
    percentage: float
    threshold: float
    counted: int
    total: int

    def to_dict(self) -> dict[str, Any]:
        return {"leakage": self.percentage, "threshold": self.threshold, "counted": self.counted, "total": self.total}


def color_leakage(
    mi: MaskedImage,
    target: RgbColor,
    hue_threshold: float = DEFAULT_HUE_THRESHOLD,
    saturation_floor: float = 0.0,
) -> LeakageReport:
    """Percentage of background pixels whose hue lies within ``hue_threshold`` degrees of the target hue.

    Background pixels below ``saturation_floor`` never count as matches but
    stay in the denominator.
    """
    if not hue_threshold > 0:
        raise MetricDomainError("hue threshold must be positive")
    bg = mi.outside()
    if bg.shape[0] == 0:
        raise MetricDomainError("mask covers the whole image; no background pixels")
    hsv = srgb_to_hsv_array(bg)
    t_h = srgb_to_hsv_array(target.to_array())[0]
    match = hue_error_array(hsv[:, 0], t_h) <= hue_threshold
    if saturation_floor > 0:
        match &= hsv[:, 1] >= saturation_floor
    counted = int(np.count_nonzero(match))
    total = int(bg.shape[0])
    return LeakageReport(100.0 * counted / total, float(hue_threshold), counted, total)


# ---------------------------------------------------------------------------
# Thurstone Case V
# ---------------------------------------------------------------------------

# Montag's empirical error-bar formula for paired comparisons:
#   sigma = b1 * (n - b2)**b3 * (N - b4)**b5
# n = number of stimuli, N = observations per pair. Coefficients are copied
# from the published fit; they do not come from any experiment in this repo.
MONTAG_COEFFS = (1.76, -3.08, -0.613, 2.55, -0.491)
Z_95 = 1.959963984540054


def montag_sigma(n_stimuli: int, n_observations: float) -> float | None:
    """Scale-value standard deviation; ``None`` when N <= 2.55 (formula undefined)."""
    b1, b2, b3, b4, b5 = MONTAG_COEFFS
    if n_observations <= b4:
        return None
    return b1 * (n_stimuli - b2) ** b3 * (n_observations - b4) ** b5


@dataclass
class ThurstoneResult:
    labels: list[str]
    scores: list[float]
    ci_half_width: float | None
    proportions: list[list[float]]
    trials_per_pair: int

    def intervals(self) -> list[tuple[float, float] | None]:
        if self.ci_half_width is None:
            return [None] * len(self.scores)
        return [(s - self.ci_half_width, s + self.ci_half_width) for s in self.scores]

    def to_dict(self) -> dict[str, Any]:
        return {
            "methods": [
                {
                    "label": lab,
                    "z": s,
                    "ci_low": None if iv is None else iv[0],
                    "ci_high": None if iv is None else iv[1],
                }
                for lab, s, iv in zip(self.labels, self.scores, self.intervals())
            ],
            "ci_half_width": self.ci_half_width,
            "trials_per_pair": self.trials_per_pair,
        }


def thurstone_case_v(counts: ArrayLike, labels: Sequence[str] | None = None) -> ThurstoneResult:
    """Interval-scale z-scores from a 2AFC win-count matrix.

    ``counts[i][j]`` is the number of trials where method i was preferred
    over method j. Proportions are clamped to [1/(2N), 1 - 1/(2N)] per pair,
    mapped through the inverse normal CDF, averaged across each row
    (diagonal z = 0 included) and mean-centered. The 95% half-width is
    1.96 * sigma from Montag's formula, using the smallest per-pair N.
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
        raise MetricDomainError(f"study matrix must be square with >= 2 methods, got {c.shape}")
    n = c.shape[0]
    labels = [str(i) for i in range(n)] if labels is None else list(labels)
    if len(labels) != n:
        raise ValueError("one label per method required")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise MetricDomainError("counts must be finite and non-negative")
    if np.any(np.diag(c) != 0):
        raise MetricDomainError("diagonal of the study matrix must be zero")

    nd = NormalDist()
    z = np.zeros((n, n))
    p = np.full((n, n), 0.5)
    min_trials: float = math.inf
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            trials = c[i, j] + c[j, i]
            if trials <= 0:
                raise MetricDomainError(f"no trials for pair ({labels[i]}, {labels[j]})")
            min_trials = min(min_trials, trials)
            lo = 1.0 / (2.0 * trials)
            p[i, j] = min(max(c[i, j] / trials, lo), 1.0 - lo)
            z[i, j] = nd.inv_cdf(p[i, j])
    raw = z.mean(axis=1)
    scores = raw - raw.mean()
    sigma = montag_sigma(n, min_trials)
    return ThurstoneResult(
        labels=labels,
        scores=[float(s) for s in scores],
        ci_half_width=None if sigma is None else Z_95 * sigma,
        proportions=p.tolist(),
        trials_per_pair=int(min_trials),
    )


def read_study_csv(path: str | os.PathLike[str]) -> tuple[list[str], NDArray[np.float64]]:
    """Read a square count matrix.

    With a header row the layout is ``method,A,B,...`` followed by
    ``A,c_AA,c_AB,...``; without one, rows are bare numbers and methods are
    labelled by index.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise MetricDomainError(f"{path}: empty study matrix")

    def numeric(cell: str) -> bool:
        try:
            float(cell)
        except ValueError:
            return False
        return True

    if numeric(rows[0][0]):
        labels = [str(i) for i in range(len(rows))]
        body = rows
    else:
        labels = [cell.strip() for cell in rows[0][1:]]
        row_labels = [r[0].strip() for r in rows[1:]]
        if row_labels != labels:
            raise MetricDomainError(f"{path}: row labels {row_labels} do not match header {labels}")
        body = [r[1:] for r in rows[1:]]
    try:
        mat = np.array([[float(x) for x in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise MetricDomainError(f"{path}: non-numeric count ({exc})") from None
    if mat.ndim != 2 or mat.shape != (len(labels), len(labels)):
        raise MetricDomainError(f"{path}: expected a {len(labels)}x{len(labels)} matrix")
    return labels, mat


# ---------------------------------------------------------------------------
# Batch reports
# ---------------------------------------------------------------------------


@dataclass
class BatchCase:
    """One evaluation case. ``image``/``mask`` are arrays or file paths."""

    case_id: str
    image: Any
    mask: Any
    target: RgbColor


def _load_case(case: BatchCase) -> MaskedImage:
    from .imageio import load_image, load_mask

    def read(loader, src, role):
        if not isinstance(src, (str, os.PathLike)):
            return src
        try:
            return loader(src)
        except OSError as exc:
            # basename only, so reports do not depend on where the data lives
            reason = exc.strerror or type(exc).__name__
            raise OSError(f"cannot read {role} {os.path.basename(os.fspath(src))}: {reason}") from None

    return MaskedImage(read(load_image, case.image, "image"), read(load_mask, case.mask, "mask"))


def _run_case(case: BatchCase, selections, hue_threshold, ranking) -> dict[str, Any]:
    entry: dict[str, Any] = {"id": case.case_id, "target": case.target.to_hex()}
    try:
        mi = _load_case(case)
        entry["metrics"] = masked_color_metrics(mi, case.target, selections, ranking).to_dict()["metrics"]
        entry["leakage"] = color_leakage(mi, case.target, hue_threshold).percentage
        entry["ok"] = True
    except (OSError, ValueError) as exc:
        entry["ok"] = False
        entry["error"] = str(exc)
    return entry


def _flat_row(entry: dict[str, Any], sel_keys: list[str]) -> dict[str, Any]:
    row = {"id": entry["id"]}
    for f in FAMILIES:
        for s in sel_keys:
            row[f"{f}_{s}"] = entry["metrics"][f][s]
    row["leakage"] = entry["leakage"]
    return row


def batch_report(
    cases: Sequence[BatchCase],
    out: str | os.PathLike[str] | None = None,
    selections: Iterable[float] = DEFAULT_SELECTIONS,
    hue_threshold: float = DEFAULT_HUE_THRESHOLD,
    ranking: str = "per_metric",
    workers: int = 1,
) -> dict[str, Any]:
    """Evaluate every case and aggregate by arithmetic mean over successful cases.

    Failed cases are reported with their error and excluded from the
    aggregate. With ``out`` set, ``<out>.json`` and ``<out>.csv`` are written.
    Output is identical for any ``workers`` value.
    """
    if not cases:
        raise MetricDomainError("batch has no cases")
    sels = tuple(sorted({float(p) for p in selections}))
    for p in sels:
        selection_count(1, p)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(lambda c: _run_case(c, sels, hue_threshold, ranking), cases))
    else:
        entries = [_run_case(c, sels, hue_threshold, ranking) for c in cases]

    sel_keys = [format_selection(p) for p in sels]
    ok = [e for e in entries if e["ok"]]
    aggregate: dict[str, Any] | None = None
    if ok:
        aggregate = {
            "metrics": {
                f: {s: math.fsum(e["metrics"][f][s] for e in ok) / len(ok) for s in sel_keys} for f in FAMILIES
            },
            "leakage": math.fsum(e["leakage"] for e in ok) / len(ok),
            "cases": len(ok),
        }
    report = {"selections": sel_keys, "ranking": ranking, "hue_threshold": hue_threshold, "cases": entries, "aggregate": aggregate}

    if out is not None:
        stem = Path(out)
        if stem.suffix in (".json", ".csv"):
            stem = stem.with_suffix("")
        json_text = dumps_json(report)
        csv_text = report_csv(report)
        stem.with_suffix(".json").write_text(json_text, encoding="utf-8")
        stem.with_suffix(".csv").write_text(csv_text, encoding="utf-8")
    return report


def report_csv(report: dict[str, Any]) -> str:
    """One row per successful case plus a ``mean`` row; columns follow family x selection."""
    sel_keys = report["selections"]
    fields = ["id"] + [f"{f}_{s}" for f in FAMILIES for s in sel_keys] + ["leakage"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for e in report["cases"]:
        if e["ok"]:
            w.writerow({k: _num(v) for k, v in _flat_row(e, sel_keys).items()})
    if report["aggregate"] is not None:
        agg = dict(report["aggregate"], id="mean")
        w.writerow({k: _num(v) for k, v in _flat_row(agg, sel_keys).items()})
    return buf.getvalue()


def _num(v: Any) -> Any:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def dumps_json(obj: Any) -> str:
    """JSON text with shortest round-trip floats and a trailing newline."""
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"
