"""Projective algebra on 3x3 homographies.

Homographies are plain ``(3, 3)`` float arrays in pixel coordinates
(x right, y down, integer coordinates at pixel centres).  Every function
that produces a matrix returns it in canonical form: unit Frobenius norm,
with a positive bottom-right entry whenever that entry is not vanishing.
"""

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegeneratePoint,
    Singular,
    SingularResult,
)

DET_EPS = 1e-12
DENOM_EPS = 1e-12
H33_EPS = 1e-9


def _as_matrix(h):
    h = np.asarray(h, dtype=float)
    if h.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("homography has non-finite entries")
    return h


def normalize(h):
    """Return the canonical representative of the projective class of ``h``."""
    h = _as_matrix(h)
    norm = np.linalg.norm(h)
    if norm == 0.0:
        raise Singular("zero matrix is not a homography")
    h = h / norm
    if abs(h[2, 2]) > H33_EPS:
        pivot = h[2, 2]
    else:
        flat = h.ravel()
        pivot = flat[np.flatnonzero(np.abs(flat) > H33_EPS)[0]]
    return -h if pivot < 0 else h


def to_h33(h):
    """Scale ``h`` so that its bottom-right entry is exactly 1."""
    h = normalize(h)
    if abs(h[2, 2]) <= H33_EPS:
        raise DegenerateConfiguration("h33 vanishes; no h33=1 view exists")
    return h / h[2, 2]


def is_invertible(h):
    return abs(np.linalg.det(normalize(h))) > DET_EPS


def identity():
    return normalize(np.eye(3))


def translation(tx, ty):
    return normalize(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))


def scaling(sx, sy, cx=0.0, cy=0.0):
    """Affine map ``x -> sx * (x + cx) - cx`` per axis (``cx = 0.5`` gives
    pixel-centre aligned resampling)."""
    return np.array(
        [[sx, 0.0, (sx - 1.0) * cx], [0.0, sy, (sy - 1.0) * cy], [0.0, 0.0, 1.0]]
    )


def apply(h, pts):
    """Map ``(N, 2)`` points through ``h`` with projective division."""
    h = _as_matrix(h)
    pts = np.asarray(pts, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    den = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    if np.any(np.abs(den) <= DENOM_EPS):
        raise DegeneratePoint("point maps to infinity")
    out = np.empty_like(pts)
    out[:, 0] = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / den
    out[:, 1] = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / den
    return out[0] if single else out


def compose(outer, inner):
    """Homography applying ``inner`` first, then ``outer``."""
    prod = _as_matrix(outer) @ _as_matrix(inner)
    if np.linalg.norm(prod) == 0.0:
        raise SingularResult("product is the zero matrix")
    prod = normalize(prod)
    if abs(np.linalg.det(prod)) <= DET_EPS:
        raise SingularResult("product is numerically singular")
    return prod


def compose_chain(hs):
    """Compose a sequence applied left to right: ``hs[0]`` acts first."""
    out = identity()
    for h in hs:
        out = compose(h, out)
    return out


def invert(h):
    h = normalize(h)
    if abs(np.linalg.det(h)) <= DET_EPS:
        raise Singular("determinant below threshold")
    return normalize(np.linalg.inv(h))


def hartley_normalize(pts):
    """Similarity ``T`` moving the centroid to the origin with mean distance sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    c = pts.mean(axis=0)
    shifted = pts - c
    d = np.mean(np.sqrt(np.einsum("ij,ij->i", shifted, shifted)))
    if d < 1e-12:
        raise DegenerateConfiguration("points are coincident")
    s = np.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    shifted *= s
    return shifted, T


def design_matrix(src, dst):
    """Stacked ``2N x 9`` DLT constraint rows for ``dst ~ H src``."""
    n = len(src)
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    one, zero = np.ones(n), np.zeros(n)
    rows_u = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=1)
    rows_v = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=1)
    A = np.empty((2 * n, 9))
    A[0::2] = rows_u
    A[1::2] = rows_v
    return A


def monomials(pts):
    """Columns ``1, x, y, x^2, xy, y^2`` of ``(N, 2)`` points."""
    x, y = pts[:, 0], pts[:, 1]
    return np.column_stack([np.ones(len(pts)), x, y, x * x, x * y, y * y])


def normal_matrix(src, dst, weights=None, mono=None):
    """``A^T diag(w) A`` for the design matrix above, assembled from
    weighted monomial sums so dense-flow inputs never build ``A``.
    ``mono`` may carry precomputed ``monomials(src)``."""
    u, v = dst[:, 0], dst[:, 1]
    n = len(dst)
    w = np.ones(n) if weights is None else weights
    coef = np.empty((4, n))
    coef[0] = w
    np.multiply(w, u, out=coef[1])
    np.multiply(w, v, out=coef[2])
    coef[3] = w * (u * u + v * v)
    sums = coef @ (monomials(src) if mono is None else mono)
    return assemble_normal(sums)


def assemble_normal(sums):
    """Normal matrix from the ``(4, 6)`` monomial sums of the weights
    ``w, w*u, w*v, w*(u^2 + v^2)``."""
    # 3x3 moment sum(c * p p^T) with p = (x, y, 1)
    idx = np.array([[3, 4, 1], [4, 5, 2], [1, 2, 0]])
    pp, pu, pv, pr = (sums[k][idx] for k in range(4))
    M = np.zeros((9, 9))
    M[:3, :3] = pp
    M[3:6, 3:6] = pp
    M[:3, 6:] = -pu
    M[3:6, 6:] = -pv
    M[6:, :3] = -pu
    M[6:, 3:6] = -pv
    M[6:, 6:] = pr
    return M


def solve_normal(M, T1, T2):
    """Null direction of the normal matrix, mapped back through the
    Hartley transforms of source (``T1``) and target (``T2``)."""
    evals, evecs = np.linalg.eigh(M)
    top = max(evals[-1], 1e-300)
    # the second smallest eigenvalue must clear the (numerically zero) smallest one
    if evals[1] - max(evals[0], 0.0) <= 1e-12 * top:
        raise DegenerateConfiguration("design matrix rank deficient")
    hn = evecs[:, 0].reshape(3, 3)
    h = normalize(np.linalg.inv(T2) @ hn @ T1)
    if abs(np.linalg.det(h)) <= DET_EPS:
        raise DegenerateConfiguration("solution is singular")
    return h


def dlt_solve(src, dst, weights=None):
    """Least-squares homography mapping ``src`` onto ``dst``.

    ``weights`` (one per correspondence) scales both constraint rows of a
    pair, which is what the IRLS refinement in the estimator relies on.
    Raises DegenerateConfiguration when the null space is not one
    dimensional (collinear or repeated points).
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("src and dst differ in length")
    if len(src) < 4:
        raise DegenerateConfiguration(f"need at least 4 correspondences, got {len(src)}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("non-finite coordinates")

    src_n, T1 = hartley_normalize(src)
    dst_n, T2 = hartley_normalize(dst)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if np.count_nonzero(weights) < 4:
            raise DegenerateConfiguration("fewer than 4 correspondences carry weight")
    return solve_normal(normal_matrix(src_n, dst_n, weights), T1, T2)


def to_json(h):
    """JSON-ready dict; h33=1 view when available, Frobenius form otherwise."""
    h = normalize(h)
    if abs(h[2, 2]) > H33_EPS:
        return {"h": [float(v) for v in (h / h[2, 2]).ravel()]}
    return {"h": [float(v) for v in h.ravel()], "normalization": "frobenius"}


def from_json(obj):
    vals = obj["h"]
    if len(vals) != 9:
        raise ValueError("homography JSON needs 9 entries")
    return normalize(np.array(vals, dtype=float).reshape(3, 3))


def frobenius_distance(a, b):
    return float(np.linalg.norm(normalize(a) - normalize(b)))


def max_element_error(a, b):
    return float(np.max(np.abs(normalize(a) - normalize(b))))
