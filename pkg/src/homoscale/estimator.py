"""Coarse-to-fine correlation homography estimation and chain-level solvers."""

from dataclasses import dataclass, field

import numpy as np

from . import algebra, correlation, flow, imaging, objective
from .errors import DegenerateConfiguration, Diverged, NoMatches, Singular


@dataclass
class EstimatorConfig:
    """Knobs of the correlation pipeline.

    ``levels`` lists ``(space, pyramid_level, cell, stride[, iters])`` from
    coarse to fine, ``iters`` overriding ``refine_iters`` for that level; ``space`` is ``"resized"`` (the ``resize_w x resize_h``
    raster) or ``"full"`` (input resolution).  The first level uses
    global correlation, the rest local correlation with ``radius``.
    """

    levels: tuple = (
        ("resized", 2, 8, 4),
        ("resized", 1, 8, 4, 1),
        ("full", 1, 8, 4, 1),
        ("full", 0, 8, 2),
    )
    radius: int = 4
    ratio: float = 0.8
    local_ratio: float = 0.95
    irls_iters: int = 10
    huber: float = 2.0
    refine_iters: int = 2
    subpixel: bool = True
    resize_w: int = 256
    resize_h: int = 256

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ValueError("need at least two pyramid levels")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        self.levels = tuple(tuple(lv) for lv in self.levels)


def dominant_shift(src, dst, radius):
    """Displacement supported by the most matches within ``radius`` (a
    deterministic vote; ties go to the earliest match)."""
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    # voting over an even subsample keeps this quadratic step cheap
    sub = d[:: max(1, len(d) // 384)]
    dist = np.abs(sub[:, None, :] - sub[None, :, :]).max(axis=2)
    winner = sub[np.argmax((dist <= radius).sum(axis=1))]
    support = np.abs(d - winner).max(axis=1) <= radius
    return np.median(d[support], axis=0)


def robust_dlt(src, dst, iters=10, width=2.0, vote_radius=None, reject=4.0):
    """IRLS with Huber weights on the transfer error; returns ``(H, residuals)``.

    The first weights are taken relative to the dominant displacement
    (``dominant_shift`` with ``vote_radius``, default ``2 * width``), so a
    minority of consistent matches can outvote scattered outliers.
    Residuals beyond ``reject * width`` get zero weight.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    vote_radius = 2.0 * width if vote_radius is None else vote_radius
    h = algebra.translation(*dominant_shift(src, dst, vote_radius))
    for _ in range(iters):
        r = np.linalg.norm(algebra.apply(h, src) - dst, axis=1)
        w = np.where(r <= width, 1.0, width / np.maximum(r, 1e-12))
        w[r > reject * width] = 0.0
        if np.count_nonzero(w) < 4:
            raise NoMatches("fewer than 4 matches left after rejection")
        h = algebra.dlt_solve(src, dst, weights=w)
    r = np.linalg.norm(algebra.apply(h, src) - dst, axis=1)
    return h, r


def _level_matrix(k):
    """Frame coordinates -> pyramid level ``k`` coordinates."""
    s = 0.5 ** k
    return algebra.scaling(s, s, 0.5, 0.5)


def _to_level(h, k):
    S = _level_matrix(k)
    return algebra.normalize(S @ h @ np.linalg.inv(S))


def _from_level(h, k):
    S = _level_matrix(k)
    return algebra.normalize(np.linalg.inv(S) @ h @ S)


def _mask_pyramid(mask, levels):
    out = [np.asarray(mask, dtype=bool)]
    for _ in range(levels - 1):
        m = out[-1]
        pad = [(0, m.shape[0] % 2), (0, m.shape[1] % 2)]
        m = np.pad(m, pad, mode="edge")
        out.append(m[0::2, 0::2] & m[1::2, 0::2] & m[0::2, 1::2] & m[1::2, 1::2])
    return out


def _resize_mask(mask, width, height):
    if mask is None:
        return None
    m = imaging.resize(np.asarray(mask, dtype=float), width, height)
    return m > 1.0 - 1e-6


class _Space:
    """Image pyramid plus masks for one raster (resized or full)."""

    def __init__(self, src, tgt, src_mask, tgt_mask, depth):
        self.width = src.shape[1]
        self.height = src.shape[0]
        self.src = imaging.pyramid(src, depth)
        self.tgt = imaging.pyramid(tgt, depth)
        ones = np.ones(src.shape[:2], dtype=bool)
        self.src_mask = _mask_pyramid(ones if src_mask is None else src_mask, depth)
        self.tgt_mask = _mask_pyramid(ones if tgt_mask is None else tgt_mask, depth)


def estimate(src, tgt, cfg=None, src_mask=None, tgt_mask=None, init=None):
    """Homography mapping ``src`` pixel coordinates onto ``tgt``.

    Returns ``(H, diagnostics)``; diagnostics hold per-level match counts,
    IRLS inlier ratios and the intermediate estimates (in input
    coordinates) for per-level error reporting.
    """
    cfg = cfg or EstimatorConfig()
    src = np.asarray(src, dtype=float)
    tgt = np.asarray(tgt, dtype=float)
    if src.shape[:2] != tgt.shape[:2]:
        raise ValueError("source and target must share dimensions")
    height, width = src.shape[:2]
    if width < 32 or height < 32:
        raise ValueError("images must be at least 32x32")

    depth = {sp: 1 + max(lv[1] for lv in cfg.levels if lv[0] == sp) for sp, *_ in cfg.levels}
    spaces = {}
    if "resized" in depth:
        rw, rh = cfg.resize_w, cfg.resize_h
        spaces["resized"] = _Space(
            imaging.resize(src, rw, rh),
            imaging.resize(tgt, rw, rh),
            _resize_mask(src_mask, rw, rh),
            _resize_mask(tgt_mask, rw, rh),
            depth["resized"],
        )
    if "full" in depth:
        spaces["full"] = _Space(src, tgt, src_mask, tgt_mask, depth["full"])

    def to_space(h, sp):
        if sp == "full":
            return h
        return flow.conjugate(h, width, height, spaces[sp].width, spaces[sp].height)

    def from_space(h, sp):
        if sp == "full":
            return algebra.normalize(h)
        s = spaces[sp]
        return flow.conjugate(h, s.width, s.height, width, height)

    diag = {"levels": []}
    h_full = None if init is None else algebra.normalize(init)
    levels = cfg.levels if init is None else cfg.levels[1:]
    for sp, k, cell, stride, *iters in levels:
        space = spaces[sp]
        record = {"space": sp, "pyramid_level": k, "cell": cell, "matches": 0, "inlier_ratio": 0.0}
        if h_full is None:
            fs = correlation.extract_features(space.src[k], cell, stride, space.src_mask[k])
            ft = correlation.extract_features(space.tgt[k], cell, stride, space.tgt_mask[k])
            corr = correlation.global_correlation(fs, ft)
            m = correlation.matches_from_correlation(corr, cfg.ratio, mutual=True)
            try:
                h_lv, r = robust_dlt(m[:, :2], m[:, 2:], cfg.irls_iters, cfg.huber)
            except DegenerateConfiguration as exc:
                raise NoMatches(f"coarse matches do not support a homography: {exc}") from exc
            h_full = from_space(_from_level(h_lv, k), sp)
            record["matches"] = int(len(m))
            record["inlier_ratio"] = float(np.mean(r <= cfg.huber))
        else:
            ft = correlation.extract_features(space.tgt[k], cell, stride, space.tgt_mask[k])
            for _ in range(iters[0] if iters else cfg.refine_iters):
                h_lv = _to_level(to_space(h_full, sp), k)
                try:
                    step, nm, inl = _refine_step(space, k, h_lv, ft, cfg)
                except (NoMatches, DegenerateConfiguration):
                    break
                h_full = from_space(_from_level(algebra.compose(step, h_lv), k), sp)
                record["matches"] = nm
                record["inlier_ratio"] = inl
        record["h"] = h_full
        diag["levels"].append(record)
    return h_full, diag


def _refine_step(space, k, h_lv, ft, cfg):
    warped, wmask = imaging.warp(space.src[k], h_lv, src_mask=space.src_mask[k])
    fs = correlation.extract_features(warped, ft.cell, ft.stride, wmask)
    corr = correlation.local_correlation(fs, ft, cfg.radius)
    m = correlation.matches_from_correlation(corr, cfg.local_ratio, subpixel=cfg.subpixel)
    step, r = robust_dlt(m[:, :2], m[:, 2:], cfg.irls_iters, cfg.huber)
    return step, int(len(m)), float(np.mean(r <= cfg.huber))


def progressive_estimate(chain, cfg=None, use_gt_hops=False, bridge=None):
    """Reconstruct ``H_st`` as ``H_snt * H_sn-1sn * ... * H_s0s1``.

    Each hop and the bridge ``(I_sn, I_t)`` are estimated independently.
    ``use_gt_hops`` substitutes the chain's ground-truth hop matrices and
    ``bridge`` injects a known bridge homography, isolating one error source.
    Returns ``(H_st, hops)`` where ``hops`` lists every factor in order.
    """
    cfg = cfg or EstimatorConfig()
    masks = list(chain.masks) if chain.masks else [None] * (chain.n + 1)
    tmask = chain.target_mask
    hops = []
    for i in range(chain.n):
        if use_gt_hops:
            hops.append(algebra.normalize(chain.gts[i]))
        else:
            h, _ = estimate(chain.images[i], chain.images[i + 1], cfg, masks[i], masks[i + 1])
            hops.append(h)
    if bridge is None:
        bridge, _ = estimate(chain.images[-1], chain.target, cfg, masks[-1], tmask)
    hops.append(algebra.normalize(bridge))
    return algebra.compose_chain(hops), hops


@dataclass
class OptimizerConfig:
    iterations: int = 2000
    step: float = 1.0
    mu: float = 0.1
    tol: float = 1e-12
    grid_step: int = 16
    memory: int = 10
    ftol: float = 1e-3
    window: int = 100
    verbose: bool = False
    max_halvings: int = 40
    res_tol: float = 1e-7  # mu == 0: stop once the consistency residual is this small

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step <= 0:
            raise ValueError("step must be > 0")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")


@dataclass
class OptimizeResult:
    hops: list
    bridges: list
    h_st: np.ndarray
    theta: np.ndarray
    trace: list
    residual: float
    iterations: int
    converged: bool

    @property
    def composed(self):
        """``H_snt * H_sn-1sn * ... * H_s0s1`` from the optimised factors."""
        return algebra.compose_chain(self.hops + [self.bridges[-1]])


def _lbfgs_direction(grad, history):
    """Two-loop recursion; plain steepest descent when ``history`` is empty."""
    q = grad.ravel().copy()
    alphas = []
    for s, y in reversed(history):
        a = np.dot(s, q) / np.dot(y, s)
        alphas.append(a)
        q -= a * y
    if history:
        s, y = history[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y), a in zip(history, reversed(alphas)):
        b = np.dot(y, q) / np.dot(y, s)
        q += (a - b) * s
    return -q.reshape(grad.shape)


def _consistent_directions(direction, grad, r, jac):
    """Candidate steps that shrink every residual entry at first order.

    Each is a Gauss-Newton step scaling ``r`` down by ``alpha`` plus a loss
    descent direction (the quasi-Newton one, then steepest descent)
    restricted to the null space of ``jac``.
    """
    pinv = np.linalg.pinv(jac, rcond=1e-10)
    shrink = -(pinv @ r)
    for d in (direction.ravel(), -grad.ravel()):
        free = d - pinv @ (jac @ d)
        for alpha in (1.0, 0.25):
            yield (alpha * shrink + free).reshape(grad.shape)


def _backtrack(theta, direction, grad, current, res, ocfg, check):
    """Halve the step until the loss drops by a sufficient (Armijo) amount
    and the residual does not increase."""
    value0, lam_w = current
    slope = float(np.vdot(grad, direction))
    step = ocfg.step
    floor = 1e-12 * max(1.0, float(np.max(np.abs(theta))))
    for _ in range(ocfg.max_halvings):
        if step * float(np.max(np.abs(direction))) < floor:
            break
        cand = theta + step * direction
        try:
            value, cand_res = check(cand, lam_w)
        except Singular:
            step *= 0.5
            continue
        if value <= value0 + 1e-4 * step * slope and value < value0 and cand_res <= res:
            return cand, cand_res
        step *= 0.5
    return None, res


def initial_offsets(hops, bridges, h_st, width, height):
    """Stack corner offsets in ``ChainProblem`` order."""
    hs = list(hops) + list(bridges) + [h_st]
    return np.array([objective.h_to_corners(h, width, height) for h in hs])


def direct_optimize(chain, init, ocfg=None, lcfg=None, anchors=None):
    """Minimise the identity loss over per-pair corner offsets.

    ``init`` is a ``(2n + 1, 8)`` array ordered ``hops, bridges, direct``;
    ``anchors`` maps a row index to ``(src, dst)`` correspondences weighted
    by ``ocfg.mu``.  A step is accepted only if it does not increase the
    loss (at the current balancing weight) nor, when ``mu == 0``, the
    consistency residual; otherwise the step is halved.
    """
    ocfg = ocfg or OptimizerConfig()
    lcfg = lcfg or objective.LossConfig()
    if not chain.gts:
        raise ValueError("direct optimisation needs ground-truth intermediate homographies")
    height, width = chain.source.shape[:2]
    problem = objective.ChainProblem(
        chain.gts, width, height, step=ocfg.grid_step, anchors=anchors, mu=ocfg.mu
    )
    theta = np.asarray(init, dtype=float).reshape(problem.n_pairs, 8).copy()
    if not np.all(np.isfinite(theta)):
        raise ValueError("init must be finite")

    def residual(th):
        hs = [h for h, _ in problem.homographies(th)]
        return objective.identity_residual(hs[-1], hs[problem.index("bridge", problem.n)], chain.gts)

    bn = problem.index("bridge", problem.n)

    def residual_jac(th):
        """Signed residual entries and their Jacobian w.r.t. ``th``."""
        hs = problem.homographies(th)
        r = objective.identity_residual_matrix(hs[-1][0], hs[bn][0], chain.gts).ravel()
        jac = np.zeros((9,) + th.shape)
        for e in range(9):
            w = np.zeros(9)
            w[e] = 1.0
            g_st, g_b = objective.identity_residual_grad(hs[-1][0], hs[bn][0], chain.gts, w.reshape(3, 3))
            jac[e, -1] = np.einsum("ij,ijk->k", g_st, hs[-1][1])
            jac[e, bn] = np.einsum("ij,ijk->k", g_b, hs[bn][1])
        return r, jac.reshape(9, -1)

    def check(cand, lam_w):
        value = objective.loss_value(cand, problem, lcfg, lam_w)
        return value, residual(cand) if ocfg.mu == 0 else 0.0

    report, grad = problem.evaluate(theta, lcfg)
    first = report.total
    res = residual(theta)
    trace = [report]
    history = []
    converged = False
    it = 0
    for it in range(1, ocfg.iterations + 1):
        current = (report.total, report.lambda_w)
        direction = _lbfgs_direction(grad, history)
        if np.vdot(direction, grad) >= 0:
            history.clear()
            direction = -grad
        if ocfg.mu == 0:
            candidates = _consistent_directions(direction, grad, *residual_jac(theta))
        else:
            candidates = (direction, -grad)
        cand = None
        for alt in candidates:
            cand, cand_res = _backtrack(theta, alt, grad, current, res, ocfg, check)
            if cand is not None:
                break
        if cand is None:
            if history:
                history.clear()
                continue
            converged = True
            break
        delta = np.max(np.abs(cand - theta))
        old_grad = grad
        report, grad = problem.evaluate(cand, lcfg)
        if report.total > 10.0 * first:
            raise Diverged(f"loss {report.total:.3g} exceeds 10x the initial {first:.3g}")
        s_k, y_k = (cand - theta).ravel(), (grad - old_grad).ravel()
        if np.dot(s_k, y_k) > 1e-12 * np.dot(y_k, y_k):
            history.append((s_k, y_k))
            del history[:-ocfg.memory]
        theta = cand
        res = cand_res
        trace.append(report)
        if ocfg.verbose:
            print(it, report.total, res, delta)
        if delta < ocfg.tol or (ocfg.mu == 0 and res <= ocfg.res_tol):
            converged = True
            break
        # plateau: less than ftol relative progress over the last `window` steps
        if len(trace) > ocfg.window:
            past = trace[-1 - ocfg.window].total
            if past - report.total <= ocfg.ftol * past:
                converged = True
                break

    hs = [h for h, _ in problem.homographies(theta)]
    n = problem.n
    return OptimizeResult(
        hops=[algebra.normalize(h) for h in hs[:n]],
        bridges=[algebra.normalize(h) for h in hs[n:2 * n]],
        h_st=algebra.normalize(hs[-1]),
        theta=theta,
        trace=trace,
        residual=residual(theta),
        iterations=it,
        converged=converged,
    )


def estimate_anchors(chain, cfg=None, count=25):
    """Anchor correspondences for the bridge and direct factors.

    Each pair ``(I_si, I_t)`` is run through ``estimate`` and ``count``
    grid points are mapped by the result.  Pairs the estimator cannot
    handle are left out.  Returns ``(anchors, estimates)`` keyed by
    ``ChainProblem`` row.
    """
    from .errors import HomoscaleError

    height, width = chain.source.shape[:2]
    n = chain.n
    rows = [(n + i - 1, i) for i in range(1, n + 1)] + [(2 * n, 0)]
    masks = chain.masks if chain.masks else [None] * (n + 1)
    anchors, found = {}, {}
    for row, i in rows:
        try:
            h, _ = estimate(chain.images[i], chain.target, cfg, masks[i], chain.target_mask)
        except HomoscaleError:
            continue
        g = int(np.ceil(np.sqrt(count)))
        xs = np.linspace(0.1 * (width - 1), 0.9 * (width - 1), g)
        ys = np.linspace(0.1 * (height - 1), 0.9 * (height - 1), g)
        src = np.array([(x, y) for y in ys for x in xs])[:count]
        anchors[row] = (src, algebra.apply(h, src))
        found[row] = h
    return anchors, found
