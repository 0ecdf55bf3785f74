import numpy as np
import pytest

from homoscale import algebra as A, estimator as E, objective as O, synthesis as S
from homoscale.errors import NoMatches

W, H = 320, 480


@pytest.fixture(scope="module")
def big():
    return S.textured_image(420, 580, S.rng_for(77, 0))


@pytest.fixture(scope="module")
def chain(big):
    return S.build_chain(big, None, S.ChainConfig(n=2), S.rng_for(77, 1))


def pme(h, truth, count=25):
    p = S.ground_truth_points(truth, W, H, count)
    return np.linalg.norm(A.apply(h, p[:, :2]) - p[:, 2:], axis=1).mean()


def test_self_pair(big):
    img = big[:H, :W]
    h, diag = E.estimate(img, img)
    assert pme(h, A.identity()) < 0.1
    assert len(diag["levels"]) == 4 and diag["levels"][0]["matches"] >= 4


def test_integer_translation(big):
    tx, ty = 24, -16
    src = big[50:50 + H, 50:50 + W]
    tgt = big[50 - ty:50 - ty + H, 50 - tx:50 - tx + W]
    h, _ = E.estimate(src, tgt)
    c = S.frame_corners(W, H)
    assert np.abs(A.apply(h, c) - (c + [tx, ty])).max() < 0.5


def test_deterministic(chain):
    a, _ = E.estimate(chain.source, chain.target)
    b, _ = E.estimate(chain.source, chain.target)
    assert np.array_equal(a, b)
    assert pme(a, chain.h_st) < 0.1 * pme(A.identity(), chain.h_st)


def test_flat_images_have_no_matches():
    flat = np.full((64, 64), 0.5)
    with pytest.raises(NoMatches):
        E.estimate(flat, flat)


def test_progressive_without_inserts(chain):
    short = S.ProgressiveChain([chain.source], chain.target, [], chain.h_st, [chain.masks[0]], chain.target_mask)
    hp, hops = E.progressive_estimate(short)
    hd, _ = E.estimate(chain.source, chain.target, None, chain.masks[0], chain.target_mask)
    assert len(hops) == 1 and A.max_element_error(hp, hd) < 1e-15


def test_progressive_injected_bridge(chain):
    bridge = A.compose(chain.h_st, A.invert(A.compose(chain.gts[1], chain.gts[0])))
    hp, hops = E.progressive_estimate(chain, use_gt_hops=True, bridge=bridge)
    assert A.max_element_error(hp, A.compose_chain(chain.gts + [bridge])) < 1e-15
    assert A.max_element_error(hp, chain.h_st) < 1e-12


def test_robust_dlt_rejects_outliers():
    rng = np.random.default_rng(0)
    h = S.homography_from_offsets(rng.uniform(-3, 3, (4, 2)), 64, 64)
    src = rng.uniform(0, 63, (60, 2))
    dst = A.apply(h, src)
    dst[:12] += rng.choice([-1, 1], (12, 2)) * rng.uniform(10, 30, (12, 2))
    est, r = E.robust_dlt(src, dst)
    assert A.max_element_error(est, h) < 1e-6
    assert np.all(r[12:] < 1e-6)


def gt_family(chain):
    bridges, prod = [], A.identity()
    for g in chain.gts:
        prod = A.compose(g, prod)
        bridges.append(A.compose(chain.h_st, A.invert(prod)))
    return E.initial_offsets(chain.gts, bridges, chain.h_st, W, H)


def test_direct_optimize_stationary_at_truth(chain):
    init = gt_family(chain)
    res = E.direct_optimize(chain, init, E.OptimizerConfig(mu=0.0, iterations=50))
    assert np.abs(res.theta - init).max() < 1e-8
    assert res.residual < 1e-10


def test_direct_optimize_restores_consistency(chain):
    rng = np.random.default_rng(3)
    init = gt_family(chain) + rng.uniform(-3, 3, (5, 8))
    ocfg = E.OptimizerConfig(mu=0.0)
    res = E.direct_optimize(chain, init, ocfg)
    assert res.residual < 1e-6 and res.iterations <= 2000
    assert res.trace[-1].total <= res.trace[0].total


def test_anchors_cover_bridges_and_direct(chain):
    anchors, found = E.estimate_anchors(chain, count=16)
    assert set(anchors) <= {2, 3, 4} and 4 in anchors
    src, dst = anchors[4]
    assert src.shape == (16, 2) and np.allclose(A.apply(found[4], src), dst)


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        E.OptimizerConfig(iterations=0)
    with pytest.raises(ValueError):
        E.OptimizerConfig(mu=-1)
    with pytest.raises(ValueError):
        E.EstimatorConfig(radius=0)
