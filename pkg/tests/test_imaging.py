import numpy as np
import pytest

from homoscale import algebra as A, imaging as I, synthesis as S
from homoscale.errors import Singular, TooSmall

from conftest import random_h


def test_identity_warp(rng):
    img = rng.uniform(size=(12, 10, 3))
    out, mask = I.warp(img, A.identity())
    assert mask.all()
    assert np.allclose(out, img)


def test_translation_warp(rng):
    img = rng.uniform(size=(20, 30))
    out, mask = I.warp(img, A.translation(10, 0))
    assert not mask[:, :10].any() and mask[:, 10:].all()
    assert np.allclose(out[:, 10:], img[:, :-10])
    assert np.all(out[:, :10] == 0)


def test_double_warp_smooth_image(rng):
    ys, xs = np.mgrid[0:120, 0:160]
    img = 0.5 + 0.4 * np.sin(xs / 15.0) * np.cos(ys / 20.0)
    h = S.homography_from_offsets(rng.uniform(-6, 6, (4, 2)), 160, 120)
    once, m1 = I.warp(img, h)
    twice, m2 = I.warp(once, A.invert(h), src_mask=m1)
    assert m2[10:-10, 10:-10].mean() > 0.5
    assert np.abs(twice - img)[m2].mean() < 0.02


def test_mask_matches_brute_force(rng):
    h = random_h(rng, 20, 40, 30)
    _, mask = I.warp(np.ones((30, 40)), h)
    hinv = A.invert(h)
    for y in range(30):
        for x in range(40):
            sx, sy = A.apply(hinv, [x, y])
            inside = -1e-9 <= sx <= 39 + 1e-9 and -1e-9 <= sy <= 29 + 1e-9
            assert mask[y, x] == inside


def test_warp_linear_in_intensity(rng):
    img = rng.uniform(size=(25, 25))
    h = random_h(rng, 4, 25, 25)
    a, m = I.warp(img, h)
    b, _ = I.warp(0.3 * img, h)
    assert np.allclose(b[m], 0.3 * a[m])


def test_non_overlap_rate(rng):
    assert I.non_overlap_rate(A.identity(), 320, 480) == 0
    assert abs(I.non_overlap_rate(A.translation(160, 0), 320, 480) - 0.5) <= 1 / 320
    h = random_h(rng, 40)
    mc = I.non_overlap_rate_mc(h, 320, 480, 20000, rng)
    assert abs(mc - I.non_overlap_rate(h, 320, 480)) < 0.02
    with pytest.raises(Singular):
        I.non_overlap_rate(np.diag([1.0, 0, 1]), 10, 10)


def test_pyramid():
    sizes = [p.shape for p in I.pyramid(np.full((256, 256), 0.3), 4)]
    assert sizes == [(256, 256), (128, 128), (64, 64), (32, 32)]
    for p in I.pyramid(np.full((64, 64), 0.3), 3):
        assert np.allclose(p, 0.3)
    checker = (np.indices((32, 32)).sum(axis=0) % 2).astype(float)
    assert np.allclose(I.pyramid(checker, 2)[1], 0.5)
    assert I.pyramid(np.zeros((33, 17)), 2)[1].shape == (17, 9)
    with pytest.raises(TooSmall):
        I.pyramid(np.zeros((20, 20)), 3)


def test_png_round_trip(tmp_path, rng):
    img = np.round(rng.uniform(size=(9, 11, 3)) * 255) / 255
    I.save_image(tmp_path / "a.png", img)
    assert np.allclose(I.load_image(tmp_path / "a.png"), img)
