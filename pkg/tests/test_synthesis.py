import numpy as np
import pytest

from homoscale import algebra as A, imaging as I, synthesis as S
from homoscale.errors import SamplingExhausted, TooSmall


@pytest.fixture(scope="module")
def source():
    return S.textured_image(400, 560, S.rng_for(5, 0))


def test_sample_deterministic():
    cfg = S.ChainConfig()
    a = S.sample_homography(cfg, S.rng_for(3, 7))
    b = S.sample_homography(cfg, S.rng_for(3, 7))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, S.sample_homography(cfg, S.rng_for(3, 8)))


def test_sample_constraints():
    cfg = S.ChainConfig()
    rng = S.rng_for(0)
    dist = []
    for _ in range(300):
        h = S.sample_homography(cfg, rng)
        assert I.non_overlap_rate(h, cfg.crop_w, cfg.crop_h) <= cfg.max_rate
        dist.append(A.frobenius_distance(h, A.identity()))
    assert min(dist) >= 1e-3


def test_sample_exhausted():
    with pytest.raises(SamplingExhausted):
        S.sample_homography(S.ChainConfig(crop_w=32, crop_h=32), S.rng_for(0), rate_range=(0.9, 0.95), max_pert=8)


def test_config_validation():
    with pytest.raises(ValueError):
        S.ChainConfig(n=-1)
    with pytest.raises(ValueError):
        S.ChainConfig(min_pert=0)
    with pytest.raises(ValueError):
        S.ChainConfig(max_rate=1.0)


def test_real_target_without_inserts(source):
    cfg = S.ChainConfig(n=0)
    tgt = np.clip(source * 0.9, 0, 1)
    ch = S.build_chain(source, tgt, cfg, S.rng_for(1))
    assert ch.n == 0 and ch.gts == [] and ch.h_st is None
    assert len(ch.pairs()) == 1
    assert ch.source.shape == (480, 320, 3)


def test_synthetic_chain(source):
    cfg = S.ChainConfig(n=2)
    ch = S.build_chain(source, None, cfg, S.rng_for(2))
    assert len(ch.images) + 1 == 4 and len(ch.gts) == 2
    assert A.frobenius_distance(A.compose(ch.gts[1], ch.gts[0]), ch.h_st) > 1e-3
    rate_st = I.non_overlap_rate(ch.h_st, 320, 480)
    assert 0.2 <= rate_st <= 0.5
    for g in ch.gts:
        assert I.non_overlap_rate(g, 320, 480) < rate_st
    warped, mask = I.warp(ch.images[0], ch.gts[0], src_mask=ch.masks[0])
    assert np.array_equal(warped[mask], ch.images[1][mask])
    assert np.array_equal(mask, ch.masks[1])
    # the target really is the source seen through h_st, away from the crop border
    pts = S.ground_truth_points(ch.h_st, 320, 480, 25)
    assert S.ground_truth_points(ch.h_st, 320, 480).shape == (9, 4)
    assert np.allclose(A.apply(ch.h_st, pts[:, :2]), pts[:, 2:])


def test_build_chain_deterministic(source):
    cfg = S.ChainConfig(n=1)
    a = S.build_chain(source, None, cfg, S.rng_for(9))
    b = S.build_chain(source, None, cfg, S.rng_for(9))
    assert np.array_equal(a.target, b.target) and np.array_equal(a.gts[0], b.gts[0])


def test_too_small():
    with pytest.raises(TooSmall):
        S.build_chain(np.zeros((100, 100, 3)), None, S.ChainConfig(), S.rng_for(0))


def test_save_load(tmp_path, source):
    ch = S.build_chain(source, None, S.ChainConfig(n=2), S.rng_for(4))
    path = S.save_chain(ch, tmp_path, "c0")
    back = S.load_chain(path)
    assert back.n == 2
    for g, b in zip(ch.gts, back.gts):
        assert A.max_element_error(g, b) < 1e-12
    assert A.max_element_error(ch.h_st, back.h_st) < 1e-12
    assert np.abs(back.images[1] - ch.images[1]).max() <= 0.5 / 255 + 1e-12
