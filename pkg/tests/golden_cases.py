"""CLI golden cases shared by the test suite and the regeneration script.

Each case: (name, argv, files). ``argv`` may contain ``{fx}`` (fixture
directory) and ``{tmp}`` (scratch directory). ``files`` lists outputs that
land in ``{tmp}``; their bytes are compared with ``golden/<name>/<file>``.
Stdout is compared with ``golden/<name>/stdout`` when non-empty.
"""

from pathlib import Path

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
GOLDEN = HERE / "golden"

CASES = [
    ("name_red", ["name", "#FF0000"], []),
    ("name_black_text", ["name", "0,0,0", "--format", "text"], []),
    ("name_table", ["name", "200,40,30", "--table", "{fx}/table_r2.txt"], []),
    ("metrics_uniform", ["metrics", "--image", "{fx}/scene.ppm", "--mask", "{fx}/scene_mask.pgm", "--target", "#C83228"], []),
    (
        "metrics_gradient",
        ["metrics", "--config", "{fx}/metrics_gradient.json", "--select", "10", "50", "100", "--out", "{tmp}/m.json"],
        ["m.json"],
    ),
    (
        "metrics_gradient_csv",
        ["metrics", "--image", "{fx}/gradient.png", "--mask", "{fx}/gradient_mask.png", "--target", "#B04020", "--ranking", "delta_e", "--csv"],
        [],
    ),
    ("leakage_checker", ["leakage", "--image", "{fx}/scene.ppm", "--mask", "{fx}/scene_mask.pgm", "--target", "#C83228"], []),
    (
        "leakage_csv",
        ["leakage", "--image", "{fx}/scene.ppm", "--mask", "{fx}/scene_mask.pgm", "--target", "0,0,255", "--threshold", "30", "--csv"],
        [],
    ),
    ("simmatrix_aligned", ["simmatrix", "--config", "{fx}/simmatrix.json"], []),
    (
        "simmatrix_csv",
        ["simmatrix", "--words", "red", "green", "--colors", "#FF0000", "#00FF00", "#0000FF", "--seed", "3", "--normalize", "none", "--csv"],
        [],
    ),
    (
        "generate",
        ["generate", "--config", "{fx}/generate.json", "--mask-dir", "{tmp}/masks", "--out", "{tmp}/run.json"],
        ["run.json", "masks/mask_t0021.pgm", "masks/mask_t0011.pgm"],
    ),
    (
        "interpolate",
        ["interpolate", "#FF0000", "#0000FF", "4", "--size", "4", "--out-dir", "{tmp}/patches"],
        ["patches/patch_000.ppm", "patches/patch_001.ppm", "patches/patch_002.ppm", "patches/patch_003.ppm"],
    ),
    ("study", ["study", "{fx}/study.csv"], []),
    ("study_csv", ["study", "{fx}/study.csv", "--csv"], []),
    ("batch", ["batch", "{fx}/manifest.json", "--out", "{tmp}/report"], ["report.json", "report.csv"]),
]


def expand(argv, fx, tmp):
    return [a.replace("{fx}", str(fx)).replace("{tmp}", str(tmp)) for a in argv]
