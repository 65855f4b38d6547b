import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from huebind.colorspace import RgbColor
from huebind.evaluation import (
    FAMILIES,
    BatchCase,
    ColorMetricsReport,
    MaskedImage,
    MetricDomainError,
    batch_report,
    color_leakage,
    masked_color_metrics,
    montag_sigma,
    read_study_csv,
    selection_count,
    thurstone_case_v,
)

from . import oracles

RED = RgbColor(1, 0, 0)


def random_fixture(seed, h=6, w=7):
    r = np.random.default_rng(seed)
    img = r.random((h, w, 3))
    mask = r.random((h, w)) < 0.6
    mask[0, 0] = True
    mask[-1, -1] = False
    target = RgbColor(*(r.random(3) * 0.9 + 0.05))
    return MaskedImage(img, mask), target


def oracle_metrics(mi, target, selections, ranking):
    """Per-pixel loop oracle: errors per pixel, then rank and average in plain Python."""
    px = [tuple(float(v) for v in p) for p in mi.inside()]
    errs = [oracles.pixel_errors(p, (target.r, target.g, target.b)) for p in px]
    out = {f: {} for f in FAMILIES}
    for p in selections:
        if ranking == "per_metric":
            for k, f in enumerate(FAMILIES):
                vals = [e[k] for e in errs if e[k] is not None]
                out[f][p] = oracles.closest_mean(vals, p)
        else:
            order = sorted(range(len(px)), key=lambda i: (errs[i][0], i))
            kept = order[: math.ceil(p * len(px) / 100 - 1e-9)]
            for k, f in enumerate(FAMILIES):
                vals = [errs[i][k] for i in kept if errs[i][k] is not None]
                out[f][p] = sum(vals) / len(vals)
    return out


class TestMaskedMetrics:
    def test_uniform_target_all_zero(self):
        img = np.zeros((4, 4, 3))
        img[1:3, 1:3] = [0.2, 0.5, 0.8]
        mask = np.zeros((4, 4), dtype=bool)
        mask[1:3, 1:3] = True
        rep = masked_color_metrics(MaskedImage(img, mask), RgbColor(0.2, 0.5, 0.8))
        for f in FAMILIES:
            for p in (10, 50, 100):
                assert rep.values[f][p] == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("ranking", ["per_metric", "delta_e"])
    def test_half_exact_half_far(self, ranking):
        img = np.zeros((1, 10, 3))
        img[0, :5] = [1, 0, 0]
        img[0, 5:] = [0, 1, 1]
        rep = masked_color_metrics(MaskedImage(img, np.ones((1, 10), bool)), RED, ranking=ranking)
        for f in FAMILIES:
            assert rep.values[f][50] == 0.0
            assert rep.values[f][100] > 0

    @pytest.mark.parametrize("ranking", ["per_metric", "delta_e"])
    @pytest.mark.parametrize("seed", range(8))
    def test_loop_oracle(self, seed, ranking):
        mi, target = random_fixture(seed)
        rep = masked_color_metrics(mi, target, (10, 25, 50, 100), ranking=ranking)
        want = oracle_metrics(mi, target, (10, 25, 50, 100), ranking)
        for f in FAMILIES:
            for p in (10, 25, 50, 100):
                assert abs(rep.values[f][p] - want[f][p]) < 1e-9, (f, p)

    def test_gradient_oracle(self):
        x = np.linspace(0, 1, 20)
        img = np.stack([*np.meshgrid(x, x[::-1], indexing="xy"), np.full((20, 20), 0.3)], axis=-1)
        mi = MaskedImage(img, np.ones((20, 20), bool))
        rep = masked_color_metrics(mi, RgbColor(0.6, 0.2, 0.3))
        want = oracle_metrics(mi, RgbColor(0.6, 0.2, 0.3), (10, 50, 100), "per_metric")
        for f in FAMILIES:
            for p in (10, 50, 100):
                assert abs(rep.values[f][p] - want[f][p]) < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31))
    def test_monotone_per_metric(self, seed):
        mi, target = random_fixture(seed, 5, 5)
        rep = masked_color_metrics(mi, target)
        for f in FAMILIES:
            assert rep.values[f][10] <= rep.values[f][50] <= rep.values[f][100]

    def test_selection_counts(self):
        assert selection_count(10, 10) == 1
        assert selection_count(7, 50) == 4
        assert selection_count(3, 100) == 3
        assert selection_count(100, 10) == 10
        for bad in (0, -5, 100.5):
            with pytest.raises(MetricDomainError):
                selection_count(10, bad)

    def test_zero_rgb_pixels_skip_angular(self):
        img = np.array([[[0, 0, 0], [1, 0, 0]]], dtype=float)
        rep = masked_color_metrics(MaskedImage(img, np.ones((1, 2), bool)), RED)
        assert rep.pixels["mae_srgb"][100] == 1
        assert rep.pixels["delta_e"][100] == 2

    def test_errors(self):
        img = np.ones((2, 2, 3)) * 0.5
        with pytest.raises(MetricDomainError):
            masked_color_metrics(MaskedImage(img, np.zeros((2, 2), bool)), RED)
        with pytest.raises(MetricDomainError):
            masked_color_metrics(MaskedImage(img, np.ones((2, 2), bool)), RED, selections=(0,))
        with pytest.raises(MetricDomainError):
            masked_color_metrics(MaskedImage(img, np.ones((2, 2), bool)), RgbColor(0, 0, 0))
        with pytest.raises(ValueError):
            MaskedImage(img, np.full((2, 2), 2))
        with pytest.raises(ValueError):
            MaskedImage(img, np.ones((3, 2), bool))

    def test_report_round_trip(self):
        mi, target = random_fixture(3)
        rep = masked_color_metrics(mi, target, (10, 12.5, 100))
        back = ColorMetricsReport.from_dict(json.loads(json.dumps(rep.to_dict())))
        for f in FAMILIES:
            for p in rep.selections:
                assert abs(back.values[f][p] - rep.values[f][p]) <= 1e-12
        assert back.pixels == rep.pixels


def leakage_fixture(background):
    h, w = background.shape[:2]
    img = np.array(background, dtype=float)
    mask = np.zeros((h, w), bool)
    mask[0, 0] = True
    img[0, 0] = [1, 0, 0]
    return MaskedImage(img, mask)


class TestLeakage:
    def test_all_match(self):
        bg = np.tile([0.8, 0.1, 0.1], (4, 4, 1))
        assert color_leakage(leakage_fixture(bg), RED).percentage == 100.0

    def test_opposite_hue(self):
        bg = np.tile([0.0, 1.0, 1.0], (4, 4, 1))
        assert color_leakage(leakage_fixture(bg), RED).percentage == 0.0

    def test_checkerboard_half(self):
        img = np.zeros((4, 4, 3))
        img[(np.indices((4, 4)).sum(axis=0) % 2) == 0] = [1.0, 0.02, 0.0]
        img[(np.indices((4, 4)).sum(axis=0) % 2) == 1] = [0.0, 0.0, 1.0]
        mask = np.zeros((4, 4), bool)
        mask[:, :2] = True
        rep = color_leakage(MaskedImage(img, mask), RED)
        assert (rep.percentage, rep.counted, rep.total) == (50.0, 4, 8)

    def test_threshold_boundary_inclusive(self):
        bg = np.tile([1.0, 1 / 6, 0.0], (2, 2, 1))  # hue 10 degrees
        mi = leakage_fixture(bg)
        assert color_leakage(mi, RED).percentage == 100.0
        assert color_leakage(mi, RED, hue_threshold=9.9).percentage == 0.0

    def test_default_threshold(self):
        assert color_leakage(leakage_fixture(np.full((2, 2, 3), 0.5)), RED).threshold == 10.0

    @given(st.floats(0.05, 1.0))
    def test_brightness_invariance(self, s):
        r = np.random.default_rng(0)
        img = r.random((6, 6, 3))
        mask = r.random((6, 6)) < 0.3
        mask[0, 0] = False
        base = color_leakage(MaskedImage(img, mask), RED, hue_threshold=40)
        scaled = img.copy()
        scaled[~mask] *= s
        assert color_leakage(MaskedImage(scaled, mask), RED, hue_threshold=40).counted == base.counted

    def test_saturation_floor(self):
        bg = np.full((2, 2, 3), 0.5)  # achromatic, hue 0 matches red
        mi = leakage_fixture(bg)
        assert color_leakage(mi, RED).percentage == 100.0
        rep = color_leakage(mi, RED, saturation_floor=0.1)
        assert (rep.counted, rep.total) == (0, 3)

    def test_errors(self):
        img = np.ones((2, 2, 3))
        with pytest.raises(MetricDomainError):
            color_leakage(MaskedImage(img, np.ones((2, 2), bool)), RED)
        with pytest.raises(MetricDomainError):
            color_leakage(MaskedImage(img, np.zeros((2, 2), bool)), RED, hue_threshold=0)


class TestThurstone:
    def test_symmetric_all_zero(self):
        c = np.full((4, 4), 10.0)
        np.fill_diagonal(c, 0)
        assert thurstone_case_v(c).scores == [0.0] * 4

    @given(st.integers(0, 2**31))
    def test_centered(self, seed):
        r = np.random.default_rng(seed)
        c = r.integers(0, 20, (5, 5)).astype(float)
        np.fill_diagonal(c, 0)
        c = c + (c + c.T == 0) * (1 - np.eye(5))
        assert abs(math.fsum(thurstone_case_v(c).scores)) < 1e-12

    def test_dominance_order(self):
        c = np.array([[0, 15, 18], [5, 0, 14], [2, 6, 0]], dtype=float)
        s = thurstone_case_v(c, ["A", "B", "C"]).scores
        assert s[0] > s[1] > s[2]

    def test_permutation_equivariant(self):
        r = np.random.default_rng(2)
        c = r.integers(1, 30, (4, 4)).astype(float)
        np.fill_diagonal(c, 0)
        perm = [2, 0, 3, 1]
        a = thurstone_case_v(c).scores
        b = thurstone_case_v(c[np.ix_(perm, perm)]).scores
        np.testing.assert_allclose(b, [a[i] for i in perm], atol=1e-12)

    def test_two_method_closed_form(self):
        from statistics import NormalDist

        res = thurstone_case_v([[0, 30], [10, 0]])
        z = NormalDist().inv_cdf(0.75)
        np.testing.assert_allclose(res.scores, [z / 2, -z / 2], atol=1e-15)

    def test_unanimous_clamped(self):
        res = thurstone_case_v([[0, 10], [0, 0]])
        assert res.proportions[0][1] == 1 - 1 / 20
        assert all(math.isfinite(s) for s in res.scores)

    def test_ci(self):
        res = thurstone_case_v([[0, 30, 20], [10, 0, 25], [20, 15, 0]])
        assert res.trials_per_pair == 40
        assert res.ci_half_width == pytest.approx(1.959964 * 1.76 * (3 + 3.08) ** -0.613 * (40 - 2.55) ** -0.491, rel=1e-6)
        lo, hi = res.intervals()[0]
        assert hi - lo == pytest.approx(2 * res.ci_half_width)
        assert montag_sigma(3, 2) is None

    def test_empty_pair_named(self):
        with pytest.raises(MetricDomainError, match=r"\(A, C\)"):
            thurstone_case_v([[0, 1, 0], [1, 0, 1], [0, 1, 0]], ["A", "B", "C"])

    def test_bad_matrix(self):
        with pytest.raises(MetricDomainError):
            thurstone_case_v([[1, 1], [1, 0]])
        with pytest.raises(MetricDomainError):
            thurstone_case_v([[0, 1, 2]])

    def test_csv(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("method,A,B\nA,0,7\nB,3,0\n")
        labels, mat = read_study_csv(p)
        assert labels == ["A", "B"]
        np.testing.assert_array_equal(mat, [[0, 7], [3, 0]])
        p.write_text("0,7\n3,0\n")
        assert read_study_csv(p)[0] == ["0", "1"]
        p.write_text("method,A,B\nB,0,7\nA,3,0\n")
        with pytest.raises(MetricDomainError):
            read_study_csv(p)


class TestBatch:
    def cases(self, n, seed=0):
        out = []
        for i in range(n):
            mi, t = random_fixture(seed + i)
            out.append(BatchCase(f"c{i}", mi.image, mi.mask, t))
        return out

    def test_single_and_duplicate(self):
        (case,) = self.cases(1)
        one = batch_report([case])
        two = batch_report([case, case])
        assert one["aggregate"]["metrics"] == one["cases"][0]["metrics"]
        assert two["aggregate"]["metrics"] == one["aggregate"]["metrics"]

    def test_mean_oracle(self):
        rep = batch_report(self.cases(5, seed=10))
        for f in FAMILIES:
            for s in rep["selections"]:
                vals = [c["metrics"][f][s] for c in rep["cases"]]
                assert rep["aggregate"]["metrics"][f][s] == pytest.approx(sum(vals) / len(vals), abs=1e-12)

    def test_failures_reported_not_fatal(self, tmp_path):
        good = self.cases(1)[0]
        bad = BatchCase("missing", str(tmp_path / "nope.png"), str(tmp_path / "nope.pgm"), RED)
        rep = batch_report([good, bad])
        assert rep["cases"][1]["ok"] is False and "nope" in rep["cases"][1]["error"]
        assert rep["aggregate"]["cases"] == 1

    def test_workers_identical_and_files(self, tmp_path):
        cases = self.cases(6, seed=20)
        batch_report(cases, tmp_path / "a", workers=1)
        batch_report(cases, tmp_path / "b", workers=4)
        for ext in (".json", ".csv"):
            assert (tmp_path / f"a{ext}").read_bytes() == (tmp_path / f"b{ext}").read_bytes()
        assert (tmp_path / "a.csv").read_text().splitlines()[-1].startswith("mean,")
