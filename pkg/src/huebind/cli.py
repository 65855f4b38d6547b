"""
Command-line entry point.

Exit codes: 0 success, 2 argument/config/color parse error, 3 I/O failure,
4 metric-domain error. Output is JSON on stdout unless ``--out`` names a
file; ``--csv`` switches tabular subcommands to CSV. Flags override values
from ``--config``. Nothing is written until every input has been validated
and the result computed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .attention import DEFAULT_LAMBDA, AttentionLayer, align_image_keys, binding_similarity
from .colorspace import RgbColor, parse_color
from .diffusion import Conditioning, StubDenoiser, downsample_log, generate, make_schedule
from .evaluation import (
    DEFAULT_HUE_THRESHOLD,
    DEFAULT_SELECTIONS,
    FAMILIES,
    BatchCase,
    MaskedImage,
    MetricDomainError,
    batch_report,
    color_leakage,
    format_selection,
    masked_color_metrics,
    read_study_csv,
    report_csv,
    thurstone_case_v,
)
from .imageio import dumps, encode_pgm, encode_ppm, load_image, load_mask, matrix_to_csv, matrix_to_json, save_image
from .naming import TABLE_ENV_VAR, load_naming_table, name_color, interpolate_colors
from .reference import StubImageEncoder, StubTextEncoder, encode_prompt, encode_reference, make_patch

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_IO = 3
EXIT_DOMAIN = 4

LATENT_DECIMALS = 10


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _parse_error(msg: str) -> CliError:
    return CliError(EXIT_PARSE, msg)


def _color(text: str) -> RgbColor:
    try:
        return parse_color(str(text))
    except ValueError as exc:
        raise _parse_error(f"bad color {text!r}: {exc}") from None


def _load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _parse_error(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise _parse_error(f"config {path} must be a JSON object")
    cfg[_BASE] = Path(path).parent
    return cfg


_BASE = "\0base"


def _pick_path(args: argparse.Namespace, cfg: dict[str, Any], name: str) -> str | None:
    """Flag paths are taken as given; config paths are relative to the config file."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    v = cfg.get(name)
    return None if v is None else str(cfg[_BASE] / v)


def _pick(args: argparse.Namespace, cfg: dict[str, Any], name: str, default: Any = None, key: str | None = None) -> Any:
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(key or name, default)


def _require(value: Any, what: str) -> Any:
    if value is None:
        raise _parse_error(f"missing required {what}")
    return value


def _typed(value: Any, kind: Callable[[Any], Any], what: str) -> Any:
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise _parse_error(f"{what} has invalid value {value!r}") from None


def _emit(text: str | bytes, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if isinstance(text, str) else text.decode())
        return
    try:
        p = Path(out)
        if isinstance(text, bytes):
            p.write_bytes(text)
        else:
            p.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {out}: {exc}") from None


def _read(loader: Callable[[str], Any], path: str, what: str) -> Any:
    try:
        return loader(path)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot read {what} {path}: {exc}") from None


def _masked_image(args: argparse.Namespace, cfg: dict[str, Any]) -> tuple[MaskedImage, RgbColor]:
    image_path = _require(_pick_path(args, cfg, "image"), "--image")
    mask_path = _require(_pick_path(args, cfg, "mask"), "--mask")
    target = _color(_require(_pick(args, cfg, "target"), "--target"))
    image = _read(load_image, image_path, "image")
    mask = _read(load_mask, mask_path, "mask")
    try:
        return MaskedImage(image, mask), target
    except ValueError as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_name(args: argparse.Namespace) -> None:
    cfg = _load_config(args.config)
    color = _color(_require(_pick(args, cfg, "color"), "color"))
    table_path = _pick_path(args, cfg, "table") or os.environ.get(TABLE_ENV_VAR) or None
    table = _read(load_naming_table, table_path, "naming table") if table_path else None
    term, confidence = name_color(color, table)
    result = {
        "color": color.to_hex(),
        "term": term.name,
        "chromatic": term.chromatic,
        "confidence": confidence,
        "source": "table" if table is not None else "prototypes",
    }
    if args.format == "text":
        _emit(f"{term.name} {confidence!r}\n", args.out)
    else:
        _emit(dumps(result), args.out)


def cmd_metrics(args: argparse.Namespace) -> None:
    cfg = _load_config(args.config)
    selections = _pick(args, cfg, "select", list(DEFAULT_SELECTIONS), key="selections")
    selections = [_typed(s, float, "selection") for s in selections]
    ranking = _pick(args, cfg, "ranking", "per_metric")
    if ranking not in ("per_metric", "delta_e"):
        raise _parse_error(f"unknown ranking {ranking!r}")
    floor = _typed(_pick(args, cfg, "saturation_floor", 0.0), float, "saturation floor")
    mi, target = _masked_image(args, cfg)
    try:
        report = masked_color_metrics(mi, target, selections, ranking, floor)
    except MetricDomainError as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from None
    d = report.to_dict()
    d["target"] = target.to_hex()
    if args.csv:
        header = [f"{f}_{s}" for f in FAMILIES for s in d["selections"]]
        row = [repr(d["metrics"][f][s]) for f in FAMILIES for s in d["selections"]]
        _emit(",".join(header) + "\n" + ",".join(row) + "\n", args.out)
    else:
        _emit(dumps(d), args.out)


def cmd_leakage(args: argparse.Namespace) -> None:
    cfg = _load_config(args.config)
    threshold = _typed(_pick(args, cfg, "threshold", DEFAULT_HUE_THRESHOLD), float, "threshold")
    floor = _typed(_pick(args, cfg, "saturation_floor", 0.0), float, "saturation floor")
    mi, target = _masked_image(args, cfg)
    try:
        report = color_leakage(mi, target, threshold, floor)
    except MetricDomainError as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from None
    d = dict(report.to_dict(), target=target.to_hex())
    if args.csv:
        _emit("leakage,threshold,counted,total\n" + f"{report.percentage!r},{report.threshold!r},{report.counted},{report.total}\n", args.out)
    else:
        _emit(dumps(d), args.out)


def cmd_simmatrix(args: argparse.Namespace) -> None:
    cfg = _load_config(args.config)
    words = _require(_pick(args, cfg, "words"), "--words")
    colors = [_color(c) for c in _require(_pick(args, cfg, "colors"), "--colors")]
    seed = _typed(_pick(args, cfg, "seed", 0), int, "seed")
    dim = _typed(_pick(args, cfg, "dim", 16), int, "dim")
    heads = _typed(_pick(args, cfg, "heads", 2), int, "heads")
    normalize = _pick(args, cfg, "normalize", "softmax")
    normalize = None if normalize in (None, "none") else normalize
    if normalize not in (None, "softmax", "max", "cosine"):
        raise _parse_error(f"unknown normalization {normalize!r}")
    aligned = bool(_pick(args, cfg, "aligned", False))
    if dim < 1 or heads < 1 or dim % heads:
        raise _parse_error("dim must be a positive multiple of heads")

    text_enc = StubTextEncoder(dim, seed)
    img_enc = StubImageEncoder.seeded(seed, dim)
    text_tokens = np.stack([text_enc.embed(w) for w in words])
    img_tokens = np.concatenate([encode_reference(make_patch([c], 4, 4), img_enc) for c in colors])
    layer = AttentionLayer.random(seed, dim, dim, dim, heads, dim // heads)
    if aligned:
        if len(words) != len(colors):
            raise CliError(EXIT_DOMAIN, "--aligned needs one color per word")
        try:
            layer = align_image_keys(layer, text_tokens, img_tokens)
        except ValueError as exc:
            raise CliError(EXIT_DOMAIN, str(exc)) from None
    sim = binding_similarity(layer, text_tokens, img_tokens, normalize)
    cols = [c.to_hex() for c in colors]
    if args.csv:
        _emit(matrix_to_csv(sim.values, list(words), cols), args.out)
    else:
        _emit(dumps(matrix_to_json(sim.values, list(words), cols, normalize=normalize or "none", aligned=aligned)), args.out)


def _r(v: Any) -> float:
    return round(float(v), LATENT_DECIMALS) + 0.0


def cmd_generate(args: argparse.Namespace) -> None:
    cfg = _load_config(args.config)
    prompt = _require(_pick(args, cfg, "prompt"), "prompt")
    if isinstance(prompt, str):
        prompt = prompt.split()
    obj = _require(_pick(args, cfg, "object"), "object token")
    colors = [_color(c) for c in _pick(args, cfg, "colors", [])]
    steps = _typed(_pick(args, cfg, "steps", 50), int, "steps")
    lam = _typed(_pick(args, cfg, "lam", DEFAULT_LAMBDA, key="lambda"), float, "lambda")
    seed = _typed(_pick(args, cfg, "seed", 0), int, "seed")
    every = _typed(_pick(args, cfg, "every", 10), int, "every")
    alpha_start = _typed(cfg.get("alpha_start", 0.9999), float, "alpha_start")
    alpha_end = _typed(cfg.get("alpha_end", 0.01), float, "alpha_end")
    grid = tuple(_typed(g, int, "grid") for g in cfg.get("grid", (8, 8)))
    channels = _typed(cfg.get("channels", 4), int, "channels")
    dim = _typed(cfg.get("dim", 16), int, "dim")
    heads = _typed(cfg.get("heads", 2), int, "heads")
    if not 0.0 <= lam <= 100.0:
        raise _parse_error("lambda must be in [0, 100]")
    if every < 1 or len(grid) != 2 or min(grid) < 1:
        raise _parse_error("every must be >= 1 and grid must be two positive integers")
    try:
        sched = make_schedule(steps, alpha_start, alpha_end)
        text, index = encode_prompt(prompt, StubTextEncoder(dim, seed), obj)
        img = None
        if colors:
            img = encode_reference(make_patch(colors, 16, max(16, len(colors))), StubImageEncoder.seeded(seed, dim))
        denoiser = StubDenoiser.seeded(seed, dim, dim, grid, channels, dim, heads)
    except ValueError as exc:
        raise _parse_error(str(exc)) from None
    result = generate(sched, Conditioning(text, img, index), denoiser, lam, seed)

    kept = downsample_log(result.mask_log, result.mask_timesteps(), every)
    z = result.final.z
    summary = {
        "steps": steps,
        "lambda": lam,
        "seed": seed,
        "prompt": list(prompt),
        "object_token_index": index,
        "colors": [c.to_hex() for c in colors],
        "final_t": result.final.t,
        # rounded: 50 chained tanh/exp steps amplify platform libm ulp differences
        "latent": {
            "shape": list(z.shape),
            "mean": _r(z.mean()),
            "std": _r(z.std()),
            "l2": _r(np.linalg.norm(z)),
            "values": [_r(v) for v in z.reshape(-1)],
        },
        "mask_log_length": len(result.mask_log),
        "masks": [{"t": t, "kept": int(m.sum()), "grid": m.astype(int).tolist()} for t, m in kept],
    }
    mask_files: list[tuple[Path, bytes]] = []
    if args.mask_dir:
        d = Path(args.mask_dir)
        mask_files = [(d / f"mask_t{t:04d}.pgm", encode_pgm(m)) for t, m in kept]
    try:
        for p, data in mask_files:
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_bytes(data)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write masks: {exc}") from None
    _emit(dumps(summary), args.out)


def cmd_interpolate(args: argparse.Namespace) -> None:
    a, b = _color(args.start), _color(args.end)
    if args.n < 2:
        raise _parse_error("n must be >= 2")
    if args.size < 1:
        raise _parse_error("size must be >= 1")
    table_path = args.table or os.environ.get(TABLE_ENV_VAR) or None
    table = _read(load_naming_table, table_path, "naming table") if table_path else None
    colors = interpolate_colors(a, b, args.n)
    entries = []
    files: list[tuple[Path, Any]] = []
    for i, c in enumerate(colors):
        term, conf = name_color(c, table)
        entry = {"index": i, "rgb": [c.r, c.g, c.b], "hex": c.to_hex(), "term": term.name, "confidence": conf}
        if args.out_dir:
            path = Path(args.out_dir) / f"patch_{i:03d}.{args.format}"
            entry["file"] = path.name
            files.append((path, make_patch([c], args.size, args.size).pixels))
        entries.append(entry)
    try:
        for path, pixels in files:
            path.parent.mkdir(parents=True, exist_ok=True)
            if args.format == "ppm":
                path.write_bytes(encode_ppm(pixels))
            else:
                save_image(pixels, path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write patches: {exc}") from None
    _emit(dumps({"start": a.to_hex(), "end": b.to_hex(), "n": args.n, "colors": entries}), args.out)


def cmd_study(args: argparse.Namespace) -> None:
    labels, counts = _read(_read_study, args.csv_path, "study matrix")
    try:
        res = thurstone_case_v(counts, labels)
    except MetricDomainError as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from None
    if args.csv:
        lines = ["method,z,ci_low,ci_high"]
        for lab, s, iv in zip(res.labels, res.scores, res.intervals()):
            lo, hi = ("", "") if iv is None else (repr(iv[0]), repr(iv[1]))
            lines.append(f"{lab},{s!r},{lo},{hi}")
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit(dumps(res.to_dict()), args.out)


def _read_study(path: str):
    try:
        return read_study_csv(path)
    except MetricDomainError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from None


def cmd_batch(args: argparse.Namespace) -> None:
    manifest_path = Path(args.manifest)
    cfg = _load_config(str(manifest_path))
    base = manifest_path.parent
    raw_cases = cfg.get("cases")
    if not isinstance(raw_cases, list) or not raw_cases:
        raise _parse_error("manifest needs a non-empty 'cases' list")
    cases = []
    for i, c in enumerate(raw_cases):
        try:
            cases.append(BatchCase(str(c.get("id", i)), str(base / c["image"]), str(base / c["mask"]), _color(c["target"])))
        except (KeyError, AttributeError, TypeError):
            raise _parse_error(f"case {i} needs image, mask and target") from None
    selections = [_typed(s, float, "selection") for s in (args.select or cfg.get("selections", DEFAULT_SELECTIONS))]
    threshold = _typed(args.threshold if args.threshold is not None else cfg.get("threshold", DEFAULT_HUE_THRESHOLD), float, "threshold")
    try:
        report = batch_report(cases, None, selections, threshold, workers=args.workers)
    except MetricDomainError as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from None
    # paths are reported relative to the manifest so output does not depend on the cwd
    for entry, c in zip(report["cases"], raw_cases):
        entry["image"], entry["mask"] = c["image"], c["mask"]
    if args.out:
        stem = Path(args.out)
        if stem.suffix in (".json", ".csv"):
            stem = stem.with_suffix("")
        _emit(dumps(report), str(stem.with_suffix(".json")))
        _emit(report_csv(report), str(stem.with_suffix(".csv")))
    elif args.csv:
        _emit(report_csv(report), None)
    else:
        _emit(dumps(report), None)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _output_flags(p: argparse.ArgumentParser, csv: bool = True) -> None:
    p.add_argument("--out", help="write output here instead of stdout")
    if csv:
        p.add_argument("--csv", action="store_true", help="emit CSV instead of JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="huebind", description="Color binding mechanics and color evaluation tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("name", help="name an RGB color with a basic color term")
    p.add_argument("color", nargs="?", help="#RRGGBB or r,g,b bytes")
    p.add_argument("--table", help=f"naming table file (default: ${TABLE_ENV_VAR}, else built-in prototypes)")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--config")
    _output_flags(p, csv=False)
    p.set_defaults(func=cmd_name)

    for name, func, helptext in (
        ("metrics", cmd_metrics, "masked color accuracy metrics"),
        ("leakage", cmd_leakage, "color leakage outside the object mask"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--image")
        p.add_argument("--mask", help="8-bit grayscale mask; values >= 128 are in-mask")
        p.add_argument("--target", help="#RRGGBB or r,g,b bytes")
        p.add_argument("--saturation-floor", dest="saturation_floor", type=float)
        p.add_argument("--config")
        if name == "metrics":
            p.add_argument("--select", nargs="+", type=float, help="pixel selections in percent (default 10 50 100)")
            p.add_argument("--ranking", choices=("per_metric", "delta_e"))
        else:
            p.add_argument("--threshold", type=float, help="hue threshold in degrees (default 10)")
        _output_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("simmatrix", help="key-projection similarity between color words and color patches")
    p.add_argument("--words", nargs="+")
    p.add_argument("--colors", nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--normalize", choices=("none", "softmax", "max", "cosine"))
    p.add_argument("--aligned", action="store_true", default=None, help="align adapter keys with the word keys")
    p.add_argument("--config")
    _output_flags(p)
    p.set_defaults(func=cmd_simmatrix)

    p = sub.add_parser("generate", help="run the stub denoising loop and export mask evolution")
    p.add_argument("--config")
    p.add_argument("--prompt", nargs="+")
    p.add_argument("--object")
    p.add_argument("--colors", nargs="+")
    p.add_argument("--steps", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--every", type=int, help="export every n-th mask (default 10)")
    p.add_argument("--mask-dir", dest="mask_dir", help="also write exported masks as PGM files here")
    _output_flags(p, csv=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("interpolate", help="interpolated reference patches with their color names")
    p.add_argument("start")
    p.add_argument("end")
    p.add_argument("n", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--format", choices=("ppm", "png"), default="ppm")
    p.add_argument("--table")
    _output_flags(p, csv=False)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("study", help="Thurstone Case V z-scores from 2AFC counts")
    p.add_argument("csv_path", metavar="CSV")
    _output_flags(p)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("batch", help="metrics and leakage for many cases")
    p.add_argument("manifest", help="JSON manifest with a 'cases' list")
    p.add_argument("--select", nargs="+", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--workers", type=int, default=1)
    _output_flags(p)
    p.set_defaults(func=cmd_batch)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        print(f"huebind {args.command}: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
