"""Rebuild the CLI fixtures and golden outputs.

    python -m tests.make_golden

Only rerun after an intentional output change; the diff of tests/golden is
the review artifact.
"""

import contextlib
import io
import json
import shutil
import tempfile
from pathlib import Path

import numpy as np

from huebind.cli import main
from huebind.imageio import save_image, save_mask
from huebind.naming import TERMS, NamingTable, save_naming_table

from .golden_cases import CASES, FIXTURES, GOLDEN, expand


def build_fixtures(fx: Path) -> None:
    fx.mkdir(parents=True, exist_ok=True)

    # 8x8 scene: left half is the object in the exact target color; the
    # background is a checkerboard of a target-hue red and pure blue.
    target = np.array([200, 50, 40]) / 255.0
    scene = np.zeros((8, 8, 3))
    mask = np.zeros((8, 8))
    mask[:, :4] = 1
    scene[:, :4] = target
    checker = (np.indices((8, 8)).sum(axis=0) % 2) == 0
    bg = np.where(checker[..., None], np.array([1.0, 0.2, 0.16]), np.array([0.0, 0.0, 1.0]))
    scene[:, 4:] = bg[:, 4:]
    save_image(scene, fx / "scene.ppm")
    save_mask(mask, fx / "scene_mask.pgm")

    # 12x12 smooth gradient with an anti-aliased disk mask (gray edge values).
    y, x = np.mgrid[0:12, 0:12] / 11.0
    grad = np.stack([x, 0.5 * y, 0.2 + 0.3 * x * y], axis=-1)
    r = np.hypot(np.arange(12)[:, None] - 5.5, np.arange(12)[None, :] - 5.5)
    soft = np.clip(5.0 - r, 0.0, 1.0)
    save_image(grad, fx / "gradient.png")
    save_mask(soft, fx / "gradient_mask.png")

    cells = np.zeros((2, 2, 2, len(TERMS)))
    cells[..., TERMS.index("gray")] = 0.6
    cells[..., TERMS.index("brown")] = 0.4
    cells[1, 0, 0] = 0
    cells[1, 0, 0, TERMS.index("red")] = 0.7
    cells[1, 0, 0, TERMS.index("orange")] = 0.3
    save_naming_table(NamingTable(2, cells), fx / "table_r2.txt")

    (fx / "metrics_gradient.json").write_text(
        json.dumps({"image": "gradient.png", "mask": "gradient_mask.png", "target": "#B04020", "selections": [25]}, indent=2)
        + "\n"
    )
    (fx / "simmatrix.json").write_text(
        json.dumps({"words": ["red", "green", "blue"], "colors": ["#FF0000", "#00FF00", "#0000FF"], "seed": 7, "normalize": "softmax", "aligned": True}, indent=2)
        + "\n"
    )
    (fx / "generate.json").write_text(
        json.dumps({"prompt": ["a", "red", "bowl", "on", "a", "table"], "object": "bowl", "colors": ["#FF0000"], "steps": 21, "lambda": 80, "seed": 1, "every": 10}, indent=2)
        + "\n"
    )
    (fx / "study.csv").write_text("method,ours,base_a,base_b\nours,0,34,38\nbase_a,6,0,25\nbase_b,2,15,0\n")
    (fx / "manifest.json").write_text(
        json.dumps(
            {
                "selections": [10, 50, 100],
                "cases": [
                    {"id": "scene", "image": "scene.ppm", "mask": "scene_mask.pgm", "target": "#C83228"},
                    {"id": "gradient", "image": "gradient.png", "mask": "gradient_mask.png", "target": "#B04020"},
                    {"id": "missing", "image": "absent.png", "mask": "scene_mask.pgm", "target": "#C83228"},
                ],
            },
            indent=2,
        )
        + "\n"
    )


def run_case(argv, fx, tmp):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(expand(argv, fx, tmp))
    return code, out.getvalue()


def build_golden() -> None:
    if GOLDEN.exists():
        shutil.rmtree(GOLDEN)
    for name, argv, files in CASES:
        with tempfile.TemporaryDirectory() as tmp:
            code, stdout = run_case(argv, FIXTURES, tmp)
            assert code == 0, (name, code)
            d = GOLDEN / name
            d.mkdir(parents=True)
            if stdout:
                (d / "stdout").write_text(stdout)
            for f in files:
                dest = d / f
                dest.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(Path(tmp) / f, dest)


if __name__ == "__main__":
    build_fixtures(FIXTURES)
    build_golden()
