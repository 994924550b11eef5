import numpy as np
import pytest

from helpers import rater_recovery_ok
from symnet.exceptions import GenerationError, ParameterError
from symnet.labels import ClusterConfig, cluster_labels
from symnet.synthdata import MARGIN, SYNTH_SUPPORT, SynthSpec, gen_image, gen_rater_labels


@pytest.mark.parametrize("seed", range(5))
def test_vertical_axis_mirror_is_exact(seed):
    img, (g,) = gen_image(SynthSpec(angle=90.0, seed=seed))
    (x0, y0), (x1, y1) = g.points
    assert x0 == x1 and g.support == SYNTH_SUPPORT
    c = int(x0)
    k = min(c, 63 - c)
    np.testing.assert_array_equal(img[:, c - k:c][:, ::-1], img[:, c + 1:c + k + 1])
    assert y0 == MARGIN and y1 == 63 - MARGIN


@pytest.mark.parametrize("seed", range(5))
def test_horizontal_and_diagonal_mirrors_are_exact(seed):
    img, (g,) = gen_image(SynthSpec(angle=0.0, seed=seed))
    r = int(g.points[0][1])
    k = min(r, 63 - r)
    np.testing.assert_array_equal(img[r - k:r][::-1], img[r + 1:r + k + 1])
    img, (g,) = gen_image(SynthSpec(angle=45.0, seed=seed))
    px, py = (round(v) for v in g.points[0])
    # the 45-degree line through (px, py) maps pixel (x, y) to (y - py + px, x - px + py)
    for y in range(64):
        for x in range(64):
            mx, my = y - py + px, x - px + py
            if 0 <= mx < 64 and 0 <= my < 64:
                assert np.array_equal(img[y, x], img[my, mx])


@pytest.mark.parametrize("seed", range(5))
def test_rotation_patch_is_exact(seed):
    img, gts = gen_image(SynthSpec(kind="rotation", count=2, seed=seed))
    assert len(gts) == 2
    for g in gts:
        cx, cy = map(int, g.points[0])
        r = 10   # smallest generated radius
        block = img[cy - r:cy + r + 1, cx - r:cx + r + 1]
        yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
        disc = xx * xx + yy * yy <= r * r
        for k in (1, 2, 3):
            np.testing.assert_array_equal(np.rot90(block, k)[disc], block[disc])
        assert MARGIN <= cx - r and cx + r <= 63 - MARGIN


@pytest.mark.parametrize("spec", [SynthSpec(seed=3), SynthSpec(kind="rotation", seed=3),
                                  SynthSpec(count=2, texture="blob-collage", seed=3,
                                            noise_level=5)])
def test_generation_is_deterministic(spec):
    a, ga = gen_image(spec)
    b, gb = gen_image(spec)
    np.testing.assert_array_equal(a, b)
    assert ga == gb and a.dtype == np.uint8 and a.shape == (64, 64, 3)


def test_axes_inside_margin():
    for seed in range(50):
        for count in (1, 2):
            _, gts = gen_image(SynthSpec(seed=seed, count=count, size=(80, 64)))
            for g in gts:
                for x, y in g.points:
                    assert MARGIN - 1e-9 <= x <= 79 - MARGIN + 1e-9
                    assert MARGIN - 1e-9 <= y <= 63 - MARGIN + 1e-9


def test_angles_drawn_near_the_four_directions():
    for seed in range(40):
        _, (g,) = gen_image(SynthSpec(seed=seed))
        (x0, y0), (x1, y1) = g.points
        deg = np.degrees(np.arctan2(y1 - y0, x1 - x0)) % 45
        assert min(deg, 45 - deg) <= 10 + 1e-9


def test_noise_changes_image():
    clean, _ = gen_image(SynthSpec(seed=1))
    noisy, _ = gen_image(SynthSpec(seed=1, noise_level=20))
    assert np.abs(clean.astype(int) - noisy.astype(int)).mean() > 5


def test_unsatisfiable_placement():
    with pytest.raises(GenerationError):
        gen_image(SynthSpec(kind="rotation", count=4, seed=0))


@pytest.mark.parametrize("kwargs", [dict(size=(31, 64)), dict(kind="glide"), dict(count=0),
                                    dict(texture="plaid"), dict(noise_level=-1)])
def test_spec_errors(kwargs):
    with pytest.raises(ParameterError):
        SynthSpec(**kwargs)


# -- raters ----------------------------------------------------------------------------

def test_zero_jitter_reproduces_gt():
    _, gts = gen_image(SynthSpec(count=2, seed=4))
    labels = gen_rater_labels(gts, 3, 0.0, 0.0, seed=1)
    assert len(labels) == 6
    for k, rec in enumerate(labels):
        assert rec.points == gts[k % 2].points and rec.kind == gts[k % 2].kind


def test_rater_labels_are_seeded_and_bounded():
    _, gts = gen_image(SynthSpec(kind="rotation", seed=2))
    a = gen_rater_labels(gts, 10, 3.0, 0.3, seed=5, size=(64, 64))
    assert a == gen_rater_labels(gts, 10, 3.0, 0.3, seed=5, size=(64, 64))
    assert a != gen_rater_labels(gts, 10, 3.0, 0.3, seed=6, size=(64, 64))
    assert all(0 <= x <= 63 and 0 <= y <= 63 for r in a for x, y in r.points)
    assert len({r.rater_id for r in a}) == 10


def test_rater_errors():
    with pytest.raises(ParameterError):
        gen_rater_labels([], 0, 1.0, 0.0)
    with pytest.raises(ParameterError):
        gen_rater_labels([], 3, -1.0, 0.0)


def test_jittered_raters_recover_gt():
    ok = sum(rater_recovery_ok(seed) for seed in range(50))
    print(f"rater recovery (jitter 1, 20 raters): {ok}/50")
    assert ok >= 48


def test_recovery_at_invariant_limits():
    # jitter tau/4, 10% outliers, n_raters = 4 * min_labelers
    ok = sum(rater_recovery_ok(seed, jitter=1.25, n_raters=20, outlier_rate=0.1)
             for seed in range(50))
    print(f"rater recovery (jitter 1.25, 10% outliers): {ok}/50")
    assert ok >= 48


def test_all_outliers_give_no_consensus():
    empty = 0
    for seed in range(50):
        _, gts = gen_image(SynthSpec(seed=seed))
        labels = gen_rater_labels(gts, 4, 1.0, 1.0, seed=seed, size=(64, 64))
        empty += cluster_labels(labels, ClusterConfig(5, 5)) == []
    print(f"all-outlier raters: {empty}/50 images with no consensus")
    # four raters can never reach five distinct supporters
    assert empty == 50
