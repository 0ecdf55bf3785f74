import json

import numpy as np
import pytest

from homoscale import algebra as A, flow as F, objective as O
from homoscale.errors import EmptyMask, ShapeMismatch

from conftest import random_h

W, H = 320, 480


def consistent_family(rng, n=2):
    gts = [random_h(rng, 24) for _ in range(n)]
    h_st = random_h(rng, 40)
    bridges, prod = [], A.identity()
    for g in gts:
        prod = A.compose(g, prod)
        bridges.append(A.compose(h_st, A.invert(prod)))
    return gts, bridges, h_st


def test_penalty():
    x = np.array([-2.0, 0.0, 3.0])
    assert np.array_equal(O.penalty(x, 0), [2, 0, 3])
    assert np.allclose(O.penalty(x, 1e-3), np.sqrt(x * x + 1e-6) - 1e-3)
    assert O.penalty(0.0, 0.5) == 0


def test_sup_loss_flow():
    g = np.zeros((4, 5, 2))
    gh = np.zeros((3, 3, 2))
    assert O.sup_loss_flow([(g, gh)], [(g, gh)]) == 0
    est = [(g + [3, 4], gh + [3, 4])]
    assert O.sup_loss_flow(est, [(g, gh)]) == pytest.approx(14.0, abs=1e-12)
    with pytest.raises(ShapeMismatch):
        O.sup_loss_flow([(g, g)], [(g, gh)])


def test_unsup_loss_flow_weights():
    z = np.zeros((4, 4, 2))
    zh = np.zeros((2, 2, 2))
    r0, r1 = np.array([1.0, -2.0]), np.array([0.5, 4.0])
    gts = [(z + [1, 1], zh + [1, 1]), (z + [2, 0], zh + [2, 0])]
    f_st, f_sth = z + [7, 5], zh + [7, 5]
    # bridge i leaves exactly r_i after subtracting the accumulated ground truth
    b0 = (f_st - [1, 1] - r0, f_sth - [1, 1] - r0)
    b1 = (f_st - [3, 1] - r1, f_sth - [3, 1] - r1)
    val = O.unsup_loss_flow(f_st, f_sth, [b0, b1], gts)
    assert val == pytest.approx(2 * (3.0 + 0.1 * 4.5), abs=1e-12)
    exact = [(f_st - [1, 1], f_sth - [1, 1]), (f_st - [3, 1], f_sth - [3, 1])]
    assert O.unsup_loss_flow(f_st, f_sth, exact, gts) == 0


def test_unsup_flow_degenerate_point(rng):
    gts, _, _ = consistent_family(rng)
    w, h = 40, 60
    gf = [F.flow_from_homography(g, w, h) for g in gts]
    gfh = [F.rescale_flow(f, 16, 16) for f in gf]
    zero, zeroh = np.zeros((h, w, 2)), np.zeros((16, 16, 2))
    val = O.unsup_loss_flow(zero, zeroh, [(zero, zeroh)] * 2, list(zip(gf, gfh)))
    closed = sum(
        lam * (np.abs(sum(gf[: i + 1])).sum(-1).mean() + np.abs(sum(gfh[: i + 1])).sum(-1).mean())
        for i, lam in enumerate([1.0, 0.1])
    )
    assert val == pytest.approx(closed, rel=1e-12) and val > 0


def test_chain_flows_telescope(rng):
    gts, bridges, h_st = consistent_family(rng)
    f_st, br, gf = O.chain_flows(h_st, bridges, gts, W, H, step=16)
    for i in range(2):
        assert np.abs(f_st - br[i] - sum(gf[: i + 1])).max() < 1e-9


def test_unsup_loss_matrix(rng):
    gts, bridges, h_st = consistent_family(rng)
    assert O.unsup_loss_matrix(h_st, bridges, gts) < 1e-12
    assert O.unsup_loss_matrix(A.identity(), [A.identity()] * 2, gts) > 0
    # any common left factor leaves the loss at zero
    a = random_h(rng, 50)
    moved = O.unsup_loss_matrix(A.compose(a, h_st), [A.compose(a, b) for b in bridges], gts)
    assert moved < 1e-12
    assert O.identity_residual(h_st, bridges[-1], gts) < 1e-12


def test_hil():
    r = O.hil(4.0, 2.0)
    assert (r.lambda_w, r.L_HIL) == (0.5, 4.0)
    r = O.hil(0.0, 2.0)
    assert r.lambda_w == pytest.approx(2e8) and r.L_HIL == 2.0
    r = O.hil(3.0, 2.0, O.LossConfig(lambda_w=1.0))
    assert r.L_HIL == 5.0
    d = json.loads(r.to_json())
    assert d["L_HIL"] == 5.0 and d["total"] == 5.0
    with pytest.raises(ValueError):
        O.hil(-1.0, 1.0)


def test_photometric(rng):
    img = rng.uniform(0, 0.8, size=(30, 40, 3))
    assert O.photometric_loss(img, img, A.identity()) == 0
    assert O.photometric_loss(img, img + 0.1, A.identity()) == pytest.approx(0.1)
    h = A.translation(6, 0)
    tgt = rng.uniform(size=(30, 40, 3))
    plain = O.photometric_loss(img, tgt, h)
    masked = O.photometric_loss(img, tgt, h, "ablation_masked")
    band = tgt[:, :6].mean(axis=2).sum()
    assert plain * 30 * 40 == pytest.approx(masked * 30 * 34 + band, rel=1e-12)
    with pytest.raises(EmptyMask):
        O.photometric_loss(img, tgt, A.translation(100, 0), "ablation_masked")


def test_corner_jacobian(rng):
    off = rng.uniform(-20, 20, 8)
    Hm, J = O.corners_to_h(off, W, H)
    assert np.allclose(O.h_to_corners(Hm, W, H), off)
    for k in range(8):
        e = np.zeros(8)
        e[k] = 1e-4
        fd = (O.corners_to_h(off + e, W, H)[0] - O.corners_to_h(off - e, W, H)[0]) / 2e-4
        assert np.allclose(fd, J[..., k], rtol=1e-5, atol=1e-12)


def problem(rng, mu=0.0, lambdas=None):
    gts, bridges, h_st = consistent_family(rng)
    prob = O.ChainProblem(gts, W, H, step=32, mu=mu)
    theta = np.array([O.h_to_corners(h, W, H) for h in gts + bridges + [h_st]])
    return prob, theta


def fd_grad(prob, theta, cfg, lam_w, step=1e-3):
    g = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        e = np.zeros_like(theta)
        e[idx] = step
        g[idx] = (O.loss_value(theta + e, prob, cfg, lam_w) - O.loss_value(theta - e, prob, cfg, lam_w)) / (2 * step)
    return g


def test_gradient_zero_at_minimum(rng):
    prob, theta = problem(rng)
    rep, g = prob.evaluate(theta, O.LossConfig())
    assert rep.L_HIL < 1e-8
    assert np.linalg.norm(g) < 1e-8


def test_gradient_matches_differences(rng):
    prob, theta = problem(rng)
    cfg = O.LossConfig()
    for _ in range(2):
        th = theta + rng.uniform(-3, 3, theta.shape)
        rep, g = prob.evaluate(th, cfg)
        fd = fd_grad(prob, th, cfg, rep.lambda_w)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-4


def test_dead_parameter(rng):
    prob, theta = problem(rng)
    cfg = O.LossConfig(lambdas=[1.0, 0.0])
    g = O.loss_gradient(theta + rng.uniform(-3, 3, theta.shape), prob, cfg)
    assert np.all(g[prob.index("bridge", 2)] == 0)
    assert np.any(g[prob.index("bridge", 1)] != 0)


def test_identity_residual_grad(rng):
    gts, bridges, h_st = consistent_family(rng)
    a = h_st + rng.normal(scale=1e-3, size=(3, 3))
    b = bridges[-1] + rng.normal(scale=1e-3, size=(3, 3))
    ga, gb = O.identity_residual_grad(a, b, gts)
    for M, G, first in ((a, ga, True), (b, gb, False)):
        for idx in np.ndindex(3, 3):
            e = np.zeros((3, 3))
            e[idx] = 1e-7
            args = ((M + e, b), (M - e, b)) if first else ((a, M + e), (a, M - e))
            fd = (O.identity_residual(*args[0], gts) - O.identity_residual(*args[1], gts)) / 2e-7
            assert fd == pytest.approx(G[idx], rel=1e-5, abs=1e-6)
