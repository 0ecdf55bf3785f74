"""Semi-supervised homography identity loss, photometric baselines and the
analytic gradient used by the direct optimiser.

Penalty convention: per pixel the two flow components are penalised
separately and summed, pixels are averaged within a term, and terms are
summed as written.  The penalty is Charbonnier ``sqrt(x^2 + eps^2) - eps``
for ``eps > 0`` and exact L1 for ``eps == 0``.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import algebra, flow, imaging
from .errors import EmptyMask, ShapeMismatch

LAMBDA_W_GUARD = 1e-8


def default_lambdas(n):
    return [10.0 ** (-i) for i in range(n)]


@dataclass
class LossConfig:
    lambdas: list = None  # None selects 10**-i
    lambda_w: object = "auto"  # "auto" or a fixed float
    eps: float = 1e-3
    guard: float = LAMBDA_W_GUARD

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.lambdas is not None and any(l < 0 for l in self.lambdas):
            raise ValueError("lambda_i must be non-negative")
        if self.lambda_w != "auto":
            self.lambda_w = float(self.lambda_w)

    def weights(self, n):
        lam = default_lambdas(n) if self.lambdas is None else list(self.lambdas)
        if len(lam) < n:
            raise ValueError(f"need {n} lambda_i values, got {len(lam)}")
        return lam[:n]


@dataclass
class LossReport:
    L_sup: float
    L_unsup: float
    lambda_w: float
    L_HIL: float
    anchor: float = 0.0
    terms: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.L_HIL + self.anchor

    def to_json(self):
        d = asdict(self)
        d["total"] = self.total
        return json.dumps(d, sort_keys=True)


def penalty(x, eps):
    x = np.asarray(x, dtype=float)
    if eps == 0:
        return np.abs(x)
    return np.sqrt(x * x + eps * eps) - eps


def penalty_grad(x, eps):
    x = np.asarray(x, dtype=float)
    if eps == 0:
        return np.sign(x)
    return x / np.sqrt(x * x + eps * eps)


def flow_term(residual, eps=0.0):
    """Mean over pixels of the summed per-component penalty."""
    residual = np.asarray(residual, dtype=float)
    return float(penalty(residual, eps).sum(axis=-1).mean())


def _check(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"shapes {np.shape(a)} and {np.shape(b)} differ")


def sup_loss_flow(est, gt, eps=0.0):
    """Supervised flow objective over ``n`` hops.

    ``est`` and ``gt`` are equal-length lists of ``(full, resized)`` flow
    pairs; each hop contributes its full-resolution and resized terms.
    """
    if len(est) != len(gt):
        raise ShapeMismatch(f"{len(est)} estimated hops vs {len(gt)} ground truths")
    total = 0.0
    for (f, fh), (g, gh) in zip(est, gt):
        _check(f, g)
        _check(fh, gh)
        total += flow_term(np.asarray(f) - g, eps) + flow_term(np.asarray(fh) - gh, eps)
    return total


def unsup_loss_flow(f_st, f_st_hat, bridges, gt_flows, lambdas=None, eps=0.0):
    """Unsupervised identity objective in flow form.

    Term ``i`` compares ``F_st`` with ``F_{s_{i+1}t} + sum_{j<=i} F_gt^{j+1}``
    at both resolutions, weighted by ``lambdas[i]`` (default ``10**-i``).
    The flows are summed point-wise exactly as given; for the sum to be an
    identity for general homographies pass trajectory-aligned flows (see
    ``chain_flows``).
    """
    n = len(bridges)
    if n < 1 or len(gt_flows) != n:
        raise ShapeMismatch("need n >= 1 bridges and as many ground-truth flows")
    lam = default_lambdas(n) if lambdas is None else list(lambdas)
    f_st = np.asarray(f_st, dtype=float)
    f_st_hat = np.asarray(f_st_hat, dtype=float)
    acc = np.zeros_like(f_st)
    acc_hat = np.zeros_like(f_st_hat)
    total = 0.0
    for i in range(n):
        g, gh = gt_flows[i]
        b, bh = bridges[i]
        for a, c in ((g, f_st), (gh, f_st_hat), (b, f_st), (bh, f_st_hat)):
            _check(a, c)
        acc = acc + g
        acc_hat = acc_hat + gh
        total += lam[i] * (flow_term(f_st - b - acc, eps) + flow_term(f_st_hat - bh - acc_hat, eps))
    return total


def chain_flows(h_st, bridges, gts, width, height, step=1):
    """Trajectory-aligned flows for the unsupervised objective.

    With ``z_0 = x`` and ``z_{j+1} = G_{j+1}(z_j)`` on the source grid,
    returns ``F_st(x)``, bridge flows ``F_{s_{i+1}t}(z_{i+1})`` and hop
    flows ``F_gt^{j+1}(z_j)``, so that their point-wise sum telescopes to
    the true displacement of ``x``.
    """
    grid = flow.meshgrid(width, height, step)
    f_st = flow.flow_at(h_st, grid)
    z = grid
    gt_f, br_f = [], []
    for g, b in zip(gts, bridges):
        gf = flow.flow_at(g, z)
        gt_f.append(gf)
        z = z + gf
        br_f.append(flow.flow_at(b, z))
    return f_st, br_f, gt_f


def unsup_loss_matrix(h_st, bridges, gts, lambdas=None):
    """Matrix form: ``sum_i lambda_i |B_{i+1}^-1 H_st - G_{i+1}...G_1|_1``
    with every matrix canonically normalised before subtraction."""
    n = len(bridges)
    if len(gts) != n or n < 1:
        raise ShapeMismatch("need n >= 1 bridges and as many ground truths")
    lam = default_lambdas(n) if lambdas is None else list(lambdas)
    prod = algebra.identity()
    total = 0.0
    for i in range(n):
        prod = algebra.compose(gts[i], prod)
        lhs = algebra.compose(algebra.invert(bridges[i]), h_st)
        total += lam[i] * float(np.abs(lhs - prod).sum())
    return total


def identity_residual(h_st, h_snt, hops):
    """``|H_snt^-1 H_st - prod(hops)|_1`` on canonical matrices."""
    lhs = algebra.compose(algebra.invert(h_snt), h_st)
    return float(np.abs(lhs - algebra.compose_chain(hops)).sum())


def hil(l_sup, l_unsup, cfg=None):
    cfg = cfg or LossConfig()
    if l_sup < 0 or l_unsup < 0:
        raise ValueError("losses must be non-negative")
    if cfg.lambda_w == "auto":
        lam_w = l_unsup / max(l_sup, cfg.guard)
    else:
        lam_w = cfg.lambda_w
    return LossReport(float(l_sup), float(l_unsup), float(lam_w), float(l_unsup + lam_w * l_sup))


def photometric_loss(src, tgt, h, mode="plain"):
    """Mean absolute intensity difference between ``warp(src, h)`` and ``tgt``.

    ``plain`` averages over every target pixel, so out-of-boundary pixels
    (zero-filled by the warp) count as errors.  ``ablation_masked`` keeps
    only pixels valid under the forward warp and under the backward warp
    of ``tgt`` by ``h^-1`` carried into the target frame.
    """
    src = np.asarray(src, dtype=float)
    tgt = np.asarray(tgt, dtype=float)
    if src.shape != tgt.shape:
        raise ShapeMismatch("images differ in shape")
    warped, fwd = imaging.warp(src, h)
    diff = np.abs(warped - tgt)
    if diff.ndim == 3:
        diff = diff.mean(axis=2)
    if mode == "plain":
        return float(diff.mean())
    if mode != "ablation_masked":
        raise ValueError(f"unknown photometric mode {mode!r}")
    height, width = tgt.shape[:2]
    bwd = imaging.valid_mask(algebra.invert(h), width, height)
    _, back_in_tgt = imaging.warp(bwd.astype(float), h, src_mask=bwd)
    mask = fwd & back_in_tgt
    if not mask.any():
        raise EmptyMask("no pixel is valid in both directions")
    return float(diff[mask].mean())


# ---------------------------------------------------------------------------
# corner-offset parameterisation and analytic gradients


def corners_to_h(offsets, width, height):
    """h33=1 homography moving the frame corners by ``offsets`` and its
    Jacobian ``dH/d offsets`` of shape ``(3, 3, 8)``."""
    c = flow_corners(width, height)
    d = c + np.asarray(offsets, dtype=float).reshape(4, 2)
    M = np.zeros((8, 8))
    rhs = np.zeros(8)
    for k in range(4):
        x, y = c[k]
        u, v = d[k]
        M[2 * k] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        M[2 * k + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * k], rhs[2 * k + 1] = u, v
    Minv = np.linalg.inv(M)
    h8 = Minv @ rhs
    den = c[:, 0] * h8[6] + c[:, 1] * h8[7] + 1.0
    dh8 = Minv * np.repeat(den, 2)[None, :]
    H = np.append(h8, 1.0).reshape(3, 3)
    J = np.zeros((9, 8))
    J[:8] = dh8
    return H, J.reshape(3, 3, 8)


def flow_corners(width, height):
    return np.array(
        [[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]]
    )


def h_to_corners(h, width, height):
    c = flow_corners(width, height)
    return (algebra.apply(h, c) - c).ravel()


def _transfer(H, pts):
    """Mapped points plus the per-point Jacobian factors w.r.t. ``H``."""
    xb = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)
    num = xb @ H.T
    den = num[..., 2:3]
    q = num[..., :2] / den
    return q, xb, den


def _grad_h(H, pts, gq):
    """Back-propagate ``dL/dq`` (per point) through ``q = apply(H, pts)``."""
    q, xb, den = _transfer(H, pts)
    g = gq / den
    G = np.zeros((3, 3))
    G[0] = (g[..., 0:1] * xb).reshape(-1, 3).sum(0)
    G[1] = (g[..., 1:2] * xb).reshape(-1, 3).sum(0)
    G[2] = (-(g * q).sum(-1, keepdims=True) * xb).reshape(-1, 3).sum(0)
    return G


class ChainProblem:
    """Fixed context for the identity loss over one progressive chain.

    Parameters are corner offsets of ``2n + 1`` homographies in the order
    ``hops[0..n-1], bridges[1..n], direct``; bridge ``i`` maps ``I_si`` to
    ``I_t``.  ``anchors`` maps a parameter index to ``(src, dst)``
    correspondences that the pair should reproduce.
    """

    def __init__(self, gts, width, height, resize_w=256, resize_h=256, step=1, anchors=None, mu=0.0):
        self.gts = [algebra.to_h33(g) for g in gts]
        self.n = len(gts)
        self.width, self.height = width, height
        self.S = flow.resize_matrix(width, height, resize_w, resize_h)
        self.Sinv = np.linalg.inv(self.S)
        self.grids = [
            flow.meshgrid(width, height, step).reshape(-1, 2),
            flow.meshgrid(resize_w, resize_h, max(1, round(step * resize_w / width))).reshape(-1, 2),
        ]
        self.anchors = anchors or {}
        self.mu = mu
        # ground-truth trajectories z_j and hop targets, per resolution
        self.traj = []
        self.hop_targets = []
        for r, grid in enumerate(self.grids):
            gs = [self._res(g, r) for g in self.gts]
            z = [grid]
            for g in gs:
                z.append(_transfer(g, z[-1])[0])
            self.traj.append(z)
            self.hop_targets.append([_transfer(g, grid)[0] for g in gs])

    @property
    def n_pairs(self):
        return 2 * self.n + 1

    def index(self, kind, i=0):
        """Parameter row of ``("hop", i)``, ``("bridge", i)`` (i >= 1) or ``("direct",)``."""
        if kind == "hop":
            return i
        if kind == "bridge":
            return self.n + i - 1
        return 2 * self.n

    def _res(self, H, r):
        return H if r == 0 else self.S @ H @ self.Sinv

    def homographies(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(self.n_pairs, 8)
        return [corners_to_h(t, self.width, self.height) for t in theta]

    def evaluate(self, theta, cfg, grad=True, lambda_w=None):
        """Loss report and (optionally) the gradient w.r.t. ``theta``.

        ``lambda_w`` overrides the balancing weight; in auto mode it is
        computed from the current losses and treated as a constant.
        """
        eps = cfg.eps
        lam = cfg.weights(self.n)
        Hs = self.homographies(theta)
        GH = [np.zeros((3, 3)) for _ in Hs]
        sup_g = [np.zeros((3, 3)) for _ in Hs]
        l_sup = l_unsup = l_anchor = 0.0
        terms = {}
        d_idx = self.index("direct")
        for r in range(2):
            npix = len(self.grids[r])
            Hd = self._res(Hs[d_idx][0], r)
            qd = _transfer(Hd, self.grids[r])[0]
            for i in range(self.n):
                # supervised hop term
                hi = self.index("hop", i)
                Hh = self._res(Hs[hi][0], r)
                res = _transfer(Hh, self.grids[r])[0] - self.hop_targets[r][i]
                val = penalty(res, eps).sum() / npix
                l_sup += val
                terms[f"sup[{i}][{r}]"] = float(val)
                if grad:
                    sup_g[hi] += self._back(r, _grad_h(Hh, self.grids[r], penalty_grad(res, eps) / npix))
                # unsupervised identity term with bridge i+1
                if lam[i] == 0:
                    continue
                bi = self.index("bridge", i + 1)
                Hb = self._res(Hs[bi][0], r)
                z = self.traj[r][i + 1]
                qb = _transfer(Hb, z)[0]
                res = qd - qb
                val = lam[i] * penalty(res, eps).sum() / npix
                l_unsup += val
                terms[f"unsup[{i}][{r}]"] = float(val)
                if grad:
                    gq = lam[i] * penalty_grad(res, eps) / npix
                    GH[d_idx] += self._back(r, _grad_h(Hd, self.grids[r], gq))
                    GH[bi] -= self._back(r, _grad_h(Hb, z, gq))
        for idx, (src, dst) in self.anchors.items():
            src = np.asarray(src, dtype=float)
            res = _transfer(Hs[idx][0], src)[0] - dst
            val = penalty(res, eps).sum() / len(src)
            l_anchor += val
            if grad and self.mu:
                GH[idx] += self.mu * _grad_h(Hs[idx][0], src, penalty_grad(res, eps) / len(src))
        report = hil(l_sup, l_unsup, cfg)
        if lambda_w is not None:
            report.lambda_w = float(lambda_w)
            report.L_HIL = l_unsup + lambda_w * l_sup
        report.anchor = self.mu * l_anchor
        report.terms = terms
        if not grad:
            return report, None
        g = np.zeros((self.n_pairs, 8))
        for k, (H, J) in enumerate(Hs):
            tot = GH[k] + report.lambda_w * sup_g[k]
            g[k] = np.einsum("ij,ijk->k", tot, J)
        return report, g

    def _back(self, r, G):
        """Gradient w.r.t. a resized matrix carried back to full resolution."""
        return G if r == 0 else self.S.T @ G @ self.Sinv.T


def loss_gradient(theta, problem, cfg):
    """Analytic gradient of the total loss w.r.t. all corner offsets."""
    return problem.evaluate(theta, cfg, grad=True)[1]


def loss_value(theta, problem, cfg, lambda_w=None):
    return problem.evaluate(theta, cfg, grad=False, lambda_w=lambda_w)[0].total


def identity_residual_grad(h_st, h_snt, hops, weights=None):
    """Gradient of ``identity_residual`` w.r.t. the raw (unnormalised)
    matrices ``h_st`` and ``h_snt``; valid wherever no entry difference is
    exactly zero.  ``weights`` (3x3) replaces the sign pattern, which gives
    the gradient of any fixed linear functional of the residual matrix."""
    Binv = np.linalg.inv(h_snt)
    M = Binv @ h_st
    N = algebra.normalize(M)
    sgn = 1.0 if np.vdot(N, M) > 0 else -1.0
    nrm = np.linalg.norm(M)
    S = np.sign(N - algebra.compose_chain(hops)) if weights is None else weights
    GM = sgn * (S / nrm - M * np.vdot(M, S) / nrm ** 3)
    return Binv.T @ GM, -Binv.T @ GM @ M.T


def identity_residual_matrix(h_st, h_snt, hops):
    """Signed residual ``canon(H_snt^-1 H_st) - canon(prod(hops))``."""
    lhs = algebra.compose(algebra.invert(h_snt), h_st)
    return lhs - algebra.compose_chain(hops)
