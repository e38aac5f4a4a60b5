"""Cones of rank k, the angle index and cone contraction diagnostics.

A cone is stored in splitting-norm form ``{v : n_F(pi_F v) <= l n_E(pi_E v)}``
for a splitting ``E + F`` and an opening ``l``. With Euclidean component
norms the cone is the quadric ``{v : v^T Q v <= 0}`` with
``Q = pi_F^T pi_F - l^2 pi_E^T pi_E``, and distances to it have a closed
form. Other component norms (used for orbit-adapted cones) fall back on
sampling the boundary lines.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from ._sphere import DEFAULT_GRID, sphere_grid
from .errors import (BoundViolation, FitFailure, InvalidArgument, NoAdmissiblePairs,
                     NotInCone, NotInterior, NotSeparated, NotStrictlyInvariant,
                     ZeroVector)
from .subspaces import (Splitting, Subspace, is_injective, make_splitting, make_subspace,
                        separation_index, span_image)

ZERO_TOL = 1e-12
INTERIOR_TOL = 1e-12
MIN_OPENING, MAX_OPENING = 1e-6, 1e6
BETA_GRID = 2048
BETA_RANGE = (1e-6, 1e6)
BISECT_RTOL = 1e-10

KINDS = ("splitting_norm", "zeta_weighted", "lyapunov_norm")


def _rows(X):
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def _unit_rows(X):
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def focusing_polynomial(x):
    """``p(x) = 4 (x^4 + 6 x^3 + 7 x^2 + 6 x + 2)``, the focusing bound."""
    return 4.0 * (x ** 4 + 6.0 * x ** 3 + 7.0 * x ** 2 + 6.0 * x + 2.0)


def tau_from_chi(chi):
    """Contraction coefficient ``(p(chi) - 1) / (p(chi) + 1)``."""
    p = focusing_polynomial(chi)
    return (p - 1.0) / (p + 1.0)


class _Quadric:
    """The closed set ``{u : u^T Q u <= 0}`` with exact Euclidean distances.

    Distance from ``v`` is the minimum of ``|u - v|`` under one quadratic
    constraint. The minimizer is ``u = (I + mu Q)^{-1} v`` with ``mu`` the
    root of a monotone secular function on ``[0, -1/q_min)``; the component
    along the most negative eigenspace is recovered from the constraint so
    that roots close to the pole stay accurate.
    """

    def __init__(self, Q):
        Q = 0.5 * (Q + Q.T)
        self.q, self.W = np.linalg.eigh(Q)
        self.scale = max(float(np.abs(self.q).max()), 1e-300)

    def value(self, X):
        Z = _rows(X) @ self.W
        return np.einsum("ij,j,ij->i", Z, self.q, Z)

    def distance(self, X):
        X = _rows(X)
        q = self.q
        Z = X @ self.W
        val = np.einsum("ij,j,ij->i", Z, q, Z)
        out = np.zeros(len(X))
        outside = val > 0.0
        if not outside.any():
            return out
        Zo = Z[outside]
        tol = 1e-13 * self.scale
        qmin = q[0]
        if qmin >= -tol:
            out[outside] = np.linalg.norm(Zo[:, q > tol], axis=1)
            return out
        S = q <= qmin + 1e-12 * self.scale
        mu_max = -1.0 / qmin
        lo = np.zeros(len(Zo))
        hi = np.full(len(Zo), mu_max)
        Z2 = Zo ** 2
        # safeguarded Newton on the decreasing secular function, kept inside
        # a bisection bracket
        mu = np.zeros(len(Zo))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for _ in range(200):
                den = 1.0 + mu[:, None] * q[None, :]
                t = q * Z2 / den ** 2
                g = t.sum(axis=1)
                dg = -2.0 * (t * q / den).sum(axis=1)
                pos = g > 0.0
                lo = np.where(pos, mu, lo)
                hi = np.where(pos, hi, mu)
                step = g / dg
                nxt = mu - step
                ok = np.isfinite(nxt) & (nxt > lo) & (nxt < hi)
                nxt = np.where(ok, nxt, 0.5 * (lo + hi))
                tiny = 1e-15 * mu_max
                done = (np.abs(step) <= tiny) | (hi - lo <= tiny) | (g == 0.0)
                mu = np.where(done, mu, nxt)
                if done.all():
                    break
        qo = q[~S]
        Uo = Zo[:, ~S] / (1.0 + mu[:, None] * qo[None, :])
        rhs = np.maximum(np.sum(qo * Uo ** 2, axis=1) / (-qmin), 0.0)
        ZS = Zo[:, S]
        nZS = np.linalg.norm(ZS, axis=1)
        dirs = np.zeros_like(ZS)
        ok = nZS > 0
        dirs[ok] = ZS[ok] / nZS[ok, None]
        dirs[~ok, 0] = 1.0
        US = dirs * np.sqrt(rhs)[:, None]
        d2 = np.sum((Zo[:, ~S] - Uo) ** 2, axis=1) + np.sum((ZS - US) ** 2, axis=1)
        out[outside] = np.sqrt(d2)
        return out


@dataclass(frozen=True, eq=False)
class ConeRankK:
    """Closed cone of rank ``k`` in splitting-norm form.

    Attributes
    ----------
    splitting : Splitting
        The pair ``(E, F)``; ``E`` has dimension ``k``.
    opening : float
        Opening ``l`` in ``[1e-6, 1e6]``.
    kind : str
        ``"splitting_norm"``, ``"zeta_weighted"`` (sublevel set of the zeta
        index, geometrically represented by its fitted splitting-norm cone)
        or ``"lyapunov_norm"`` (component norms given by ``norm_E``/``norm_F``).
    norm_E, norm_F : callable, optional
        Row-wise norms applied to ``pi_E v`` and ``pi_F v``; Euclidean when
        omitted.
    zeta : object, optional
        ``(ZetaConeData, step)`` for zeta-weighted cones.
    """

    splitting: Splitting
    opening: float
    kind: str = "splitting_norm"
    norm_E: Optional[Callable] = None
    norm_F: Optional[Callable] = None
    zeta: object = None

    def __post_init__(self):
        if not (MIN_OPENING <= self.opening <= MAX_OPENING):
            raise InvalidArgument(f"opening {self.opening!r} outside [1e-6, 1e6]")
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown cone kind {self.kind!r}")
        if not 0 < self.splitting.k < self.splitting.d:
            raise InvalidArgument("cone rank must satisfy 0 < k < d")

    @property
    def k(self):
        return self.splitting.k

    @property
    def d(self):
        return self.splitting.d

    @property
    def euclidean(self):
        return self.norm_E is None and self.norm_F is None

    def norms(self, X):
        """Component norms ``(n_E(pi_E x), n_F(pi_F x))`` of each row."""
        X = _rows(X)
        PE = X @ self.splitting.proj_E.T
        PF = X @ self.splitting.proj_F.T
        nE = np.linalg.norm(PE, axis=1) if self.norm_E is None else self.norm_E(PE)
        nF = np.linalg.norm(PF, axis=1) if self.norm_F is None else self.norm_F(PF)
        return nE, nF

    def margin(self, X):
        """Signed margin ``(l n_E - n_F) / |x|`` of each row (rows nonzero)."""
        X = _rows(X)
        nE, nF = self.norms(X)
        return (self.opening * nE - nF) / np.linalg.norm(X, axis=1)

    @cached_property
    def _quadric(self):
        s = self.splitting
        Q = s.proj_F.T @ s.proj_F - self.opening ** 2 * (s.proj_E.T @ s.proj_E)
        return _Quadric(Q), _Quadric(-Q)

    def quadric_matrix(self):
        s = self.splitting
        return s.proj_F.T @ s.proj_F - self.opening ** 2 * (s.proj_E.T @ s.proj_E)

    def distance(self, X):
        """Euclidean distance from each row of ``X`` to the cone."""
        X = _rows(X)
        if self.euclidean:
            return self._quadric[0].distance(X)
        out = np.zeros(len(X))
        outside = self.margin(X) < 0
        if outside.any():
            out[outside] = _boundary_distance(self, X[outside])
        return out

    def complement(self):
        """Closure of ``R^d`` minus the cone, as a distance target."""
        return ConeComplement(self)

    def with_opening(self, opening):
        return ConeRankK(self.splitting, float(opening), self.kind, self.norm_E,
                         self.norm_F, self.zeta)

    # parametrization of unit vectors of the cone: v ~ x + r t_max(x, y) y
    # with x in the unit sphere of E, y in the unit sphere of F, r in [0, 1]
    def points(self, a, c, r):
        a = _unit_rows(_rows(a))
        c = _unit_rows(_rows(c))
        x = a @ self.splitting.E.basis.T
        y = c @ self.splitting.F.basis.T
        tmax = self.opening * self._comp_norm_E(x) / self._comp_norm_F(y)
        v = x + (np.asarray(r, dtype=float) * tmax)[:, None] * y
        return _unit_rows(v)

    def _comp_norm_E(self, x):
        return np.linalg.norm(x, axis=1) if self.norm_E is None else self.norm_E(x)

    def _comp_norm_F(self, y):
        return np.linalg.norm(y, axis=1) if self.norm_F is None else self.norm_F(y)

    def boundary_lines(self, n=DEFAULT_GRID):
        """Unit directions of boundary lines sampled on a deterministic grid."""
        a, c, _ = _param_grid(self.k, self.d - self.k, n, radial=False)
        return self.points(a, c, np.ones(len(a)))

    def __repr__(self):
        return (f"ConeRankK(d={self.d}, k={self.k}, opening={self.opening:.6g}, "
                f"kind={self.kind!r})")


@dataclass(frozen=True, eq=False)
class ConeComplement:
    """Closure of the complement of a cone, used as a distance target."""

    cone: ConeRankK

    def margin(self, X):
        return -self.cone.margin(X)

    def distance(self, X):
        X = _rows(X)
        if self.cone.euclidean:
            return self.cone._quadric[1].distance(X)
        out = np.zeros(len(X))
        inside = self.cone.margin(X) > 0
        if inside.any():
            out[inside] = _boundary_distance(self.cone, X[inside])
        return out


@dataclass(frozen=True, eq=False)
class ImageCone:
    """The image ``A C`` of a cone under an injective matrix."""

    cone: ConeRankK
    A: np.ndarray

    @property
    def k(self):
        return self.cone.k

    @property
    def d(self):
        return self.cone.d

    @cached_property
    def _Ainv(self):
        return np.linalg.inv(self.A)

    def margin(self, X):
        X = _rows(X)
        return self.cone.margin(X @ self._Ainv.T)

    def points(self, a, c, r):
        return _unit_rows(self.cone.points(a, c, r) @ self.A.T)


def make_cone(E, F, opening, **kw):
    """Splitting-norm cone from two complementary subspaces (or raw bases)."""
    if not isinstance(E, Subspace):
        E = make_subspace(E)
    if not isinstance(F, Subspace):
        F = make_subspace(F)
    return ConeRankK(make_splitting(E, F), float(opening), **kw)


def standard_cone(d, k, opening=1.0):
    """Cone around the first ``k`` coordinate axes."""
    I = np.eye(d)
    return make_cone(I[:, :k], I[:, k:], opening)


def cone_margin(C, v):
    """Signed membership margin, positive exactly on the interior.

    Raises
    ------
    ZeroVector
        If ``|v| <= 1e-12``.
    """
    v = np.asarray(v, dtype=float)
    if np.linalg.norm(v) <= ZERO_TOL:
        raise ZeroVector("cone margin of the zero vector")
    return float(C.margin(v)[0])


# ---------------------------------------------------------------------------
# grids over cones and distances for non-Euclidean component norms

def _param_grid(k, m, n, radial=True):
    """Grid of (a, c, r) parameters with about ``n`` points."""
    if radial:
        if k == 1 and m == 1:
            nr = max(n // 2, 3)
            r = np.linspace(0.0, 1.0, nr)
            a = np.ones((2 * nr, 1))
            c = np.vstack([np.ones((nr, 1)), -np.ones((nr, 1))])
            return a, c, np.concatenate([r, r])
        rs = np.array([1.0, 0.8, 0.6, 0.4, 0.2, 0.0])
        n = max(n // len(rs), 4)
    else:
        rs = np.array([1.0])
    if k == 1:
        A_ = np.ones((1, 1))
        C_ = sphere_grid(m, n)
    elif m == 1:
        A_ = sphere_grid(k, n)
        C_ = np.array([[1.0], [-1.0]])
    else:
        na = max(int(round(np.sqrt(n))), 4)
        A_ = sphere_grid(k, na)
        C_ = sphere_grid(m, max(n // na, 4))
    ia, ic, ir = np.meshgrid(np.arange(len(A_)), np.arange(len(C_)), np.arange(len(rs)),
                             indexing="ij")
    return A_[ia.ravel()], C_[ic.ravel()], rs[ir.ravel()]


def _line_distance(X, B):
    # distance from rows of X to the lines spanned by unit rows of B
    nx = np.linalg.norm(X, axis=1)
    dots = np.abs(X @ B.T)
    best = dots.max(axis=1)
    return np.sqrt(np.maximum(nx ** 2 - best ** 2, 0.0)), np.argmax(dots, axis=1)


def _boundary_distance(cone, X, n=DEFAULT_GRID):
    """Distance from rows of ``X`` to the boundary of a cone with general norms."""
    a, c, _ = _param_grid(cone.k, cone.d - cone.k, n, radial=False)
    B = cone.points(a, c, np.ones(len(a)))
    dist, idx = _line_distance(X, B)
    k = cone.k
    for i, x in enumerate(X):
        p0 = np.concatenate([a[idx[i]], c[idx[i]]])

        def f(p, x=x):
            b = cone.points(p[None, :k], p[None, k:], np.ones(1))
            return float(_line_distance(x[None, :], b)[0][0])

        if len(p0) > 2:
            res = minimize(f, p0, method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 2000})
            dist[i] = min(dist[i], res.fun)
    return dist


def cone_separation(source, target, n=DEFAULT_GRID, starts=4):
    """Infimum of ``target.distance`` over unit vectors of a cone-like source.

    Parameters
    ----------
    source : ConeRankK or ImageCone
    target : object with ``distance``
        Typically ``C.complement()`` for the separation of an image cone from
        the complement of a target cone.

    Returns
    -------
    value : float
    witness : ndarray
        A unit vector of the source attaining the value.
    """
    k, m = source.k, source.d - source.k
    if k == 1 and m == 1:
        n = min(n, 256)  # the grid only guards against wrap-around
    a, c, r = _param_grid(k, m, n)
    W = source.points(a, c, r)
    vals = target.distance(W)
    order = np.argsort(vals, kind="stable")
    best = float(vals[order[0]])
    witness = W[order[0]]
    if k == 1 and m == 1:
        # planar: the distance to the complement of a sector is concave along
        # the source arc, so the minimum sits on a boundary ray of the source
        B = source.points(np.ones((2, 1)), np.array([[1.0], [-1.0]]), np.ones(2))
        vb = target.distance(B)
        i = int(np.argmin(vb))
        if vb[i] < best:
            best, witness = float(vb[i]), B[i]
        return best, witness

    def f(p):
        rr = min(max(p[-1], 0.0), 1.0)
        w = source.points(p[None, :k], p[None, k:k + m], [rr])
        return float(target.distance(w)[0])

    for idx in order[:starts]:
        p0 = np.concatenate([a[idx], c[idx], [r[idx]]])
        res = minimize(f, p0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 3000})
        if res.fun < best:
            p = res.x
            best = float(res.fun)
            witness = source.points(p[None, :k], p[None, k:k + m], [min(max(p[-1], 0.0), 1.0)])[0]
    return best, witness


def sample_cone(C, rng, n, interior=False):
    """Random unit vectors of a cone.

    Roughly a quarter of the samples lie on the boundary unless
    ``interior`` is set, in which case radial fractions stay below 0.95.
    Planar cones always include their boundary rays first.
    """
    k, m = C.k, C.d - C.k
    a = rng.standard_normal((n, k))
    c = rng.standard_normal((n, m))
    if interior:
        r = 0.95 * rng.random(n)
    else:
        r = rng.random(n)
        r[: n // 4] = 1.0
        if k == 1 and m == 1 and n >= 2:
            a[:2] = 1.0
            c[:2] = np.array([[1.0], [-1.0]])
            r[:2] = 1.0
    return C.points(a, c, r)


def random_interior_subspace(C, rng, shrink=0.9):
    """Random ``k``-dimensional subspace inside the interior of ``C``.

    Built as the graph ``{x + Phi x}`` of a map ``Phi : E -> F`` whose norm is
    a random fraction (at most ``shrink``) of the opening; for non-Euclidean
    component norms the draw is retried until it passes the sampled check.
    """
    s = C.splitting
    for _ in range(100):
        G = rng.standard_normal((C.d - C.k, C.k))
        G *= shrink * rng.random() * C.opening / np.linalg.norm(G, 2)
        E = make_subspace(s.E.basis + s.F.basis @ G)
        if in_cone_interior(C, E):
            return E
    raise FitFailure("could not draw a subspace inside the cone")


# ---------------------------------------------------------------------------
# angle index

def _margins_nonzero(C, W, ref):
    # margins, with numerically zero vectors counted as interior
    nrm = np.linalg.norm(W, axis=1)
    out = np.full(len(W), np.inf)
    ok = nrm > ZERO_TOL * ref
    if ok.any():
        out[ok] = C.margin(W[ok])
    return out


def alpha_zero(C, u, v, grid=BETA_GRID, beta_range=BETA_RANGE, rtol=BISECT_RTOL):
    """Smallest ``alpha >= 0`` with ``beta v - u`` interior for all ``beta >= alpha``.

    The failure set ``{beta >= 0 : beta v - u not in int C}`` is scanned on a
    log-spaced grid; narrow dips between grid points are caught by a bounded
    scalar search at every positive local minimum of the margin. The last
    sign change is refined by bisection. The zero vector (``beta v = u``) is
    not counted as a failure, so collinear pairs give 0.

    Raises
    ------
    NotInterior
        If ``u`` or ``v`` has margin below ``1e-12``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    for w in (u, v):
        if np.linalg.norm(w) <= ZERO_TOL or C.margin(w)[0] <= INTERIOR_TOL:
            raise NotInterior("alpha_zero needs interior vectors")
    ref = np.linalg.norm(u) + np.linalg.norm(v)

    def m_at(b):
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return _margins_nonzero(C, b[:, None] * v[None, :] - u[None, :], ref * max(1.0, b.max()))

    lo, hi = beta_range
    while m_at(hi)[0] <= 0.0:
        hi *= 10.0
    while lo > 1e-300 and m_at(lo)[0] <= 0.0:
        lo /= 10.0
    betas = np.concatenate([[0.0], np.geomspace(lo, hi, grid)])
    m = m_at(betas)
    fail = m <= 0.0
    cand = []  # (failing beta, passing beta above it)
    if fail.any():
        i = int(np.nonzero(fail)[0][-1])
        cand.append((betas[i], betas[i + 1]))
    # narrow dips between grid points
    tol = 1e-13
    mid, left, right = m[1:-1], m[:-2], m[2:]
    dip = ((mid < left - tol) & (mid <= right)) | ((mid < right - tol) & (mid <= left))
    dip &= np.isfinite(mid) & ~fail[1:-1]
    for i in np.nonzero(dip)[0] + 1:
        if cand and betas[i + 1] <= cand[0][0]:
            continue
        res = minimize_scalar(lambda b: m_at(b)[0], bounds=(betas[i - 1], betas[i + 1]),
                              method="bounded", options={"xatol": 1e-14 * betas[i + 1]})
        if res.fun <= 0.0:
            cand.append((float(res.x), betas[i + 1]))
    if not cand:
        return 0.0
    b_fail, b_pass = max(cand, key=lambda t: t[0])
    while b_pass - b_fail > rtol * b_pass:
        b_mid = 0.5 * (b_fail + b_pass)
        if m_at(b_mid)[0] <= 0.0:
            b_fail = b_mid
        else:
            b_pass = b_mid
    return float(b_pass)


def angle_index_vectors(C, u, v, **kw):
    """Angle index ``alpha_C(u, v) = alpha_0(u, v) alpha_0(v, u)``."""
    a = alpha_zero(C, u, v, **kw)
    b = alpha_zero(C, v, u, **kw)
    return a * b


def in_cone_interior(C, E, tol=INTERIOR_TOL):
    """True when every unit vector of ``E`` lies in the interior of ``C``."""
    if E.dim == 0:
        return False
    if C.euclidean:
        M = E.basis.T @ C.quadric_matrix() @ E.basis
        # margin > tol everywhere is implied by a negative definite restriction
        return bool(np.linalg.eigvalsh(0.5 * (M + M.T))[-1] < -tol)
    a = sphere_grid(E.dim, 1024)
    return bool(np.min(C.margin(a @ E.basis.T)) > tol)


def meets_cone_trivially(C, F, tol=INTERIOR_TOL):
    """True when ``F`` meets the cone only at the origin."""
    if F.dim == 0:
        return True
    if C.euclidean:
        M = F.basis.T @ C.quadric_matrix() @ F.basis
        return bool(np.linalg.eigvalsh(0.5 * (M + M.T))[0] > tol)
    a = sphere_grid(F.dim, 1024)
    return bool(np.max(C.margin(a @ F.basis.T)) < -tol)


def _subspace_pairs(E1, E2, n):
    # unit vector pairs covering the product of the two spheres
    if E1.dim == 1 and E2.dim == 1:
        u = E1.basis[:, 0]
        v = E2.basis[:, 0]
        return [(u, v), (u, -v)]
    m = max(int(np.sqrt(n)), 8)
    A1 = sphere_grid(E1.dim, m) @ E1.basis.T
    A2 = sphere_grid(E2.dim, m) @ E2.basis.T
    return [(x, y) for x in A1 for y in A2]


def angle_index_subspaces(C, E1, E2, n=256, refine=4):
    """Supremum of the angle index over the unit spheres of ``E1`` and ``E2``.

    Exact for lines (two sign patterns); for higher dimensions a grid over
    the product of spheres is followed by Nelder-Mead refinement of the best
    pairs.

    Raises
    ------
    NotInCone
        If either subspace leaves the interior of ``C``.
    """
    if not (in_cone_interior(C, E1) and in_cone_interior(C, E2)):
        raise NotInCone("subspaces must lie in the interior of the cone")
    pairs = _subspace_pairs(E1, E2, n)
    vals = np.array([angle_index_vectors(C, u, v) for u, v in pairs])
    best = float(vals.max())
    if E1.dim == 1 and E2.dim == 1:
        return best
    k1, k2 = E1.dim, E2.dim

    def neg(p):
        x = E1.basis @ p[:k1]
        y = E2.basis @ p[k1:]
        if np.linalg.norm(x) < 1e-9 or np.linalg.norm(y) < 1e-9:
            return 0.0
        return -angle_index_vectors(C, x, y)

    for idx in np.argsort(-vals, kind="stable")[:refine]:
        u, v = pairs[idx]
        p0 = np.concatenate([E1.basis.T @ u, E2.basis.T @ v])
        res = minimize(neg, p0, method="Nelder-Mead", options={"maxiter": 200 * (k1 + k2)})
        best = max(best, -float(res.fun))
    return best


# ---------------------------------------------------------------------------
# focusing and contraction

@dataclass(frozen=True, eq=False)
class ConePair:
    """A matrix together with a source and a target cone."""

    source: ConeRankK
    target: ConeRankK
    map: np.ndarray

    def __post_init__(self):
        if self.source.k != self.target.k:
            raise InvalidArgument("source and target cones must have the same rank")


def _check_strict(pair, U):
    if not is_injective(pair.map):
        raise InvalidArgument("map must be injective")
    m = pair.target.margin(U @ np.asarray(pair.map).T)
    if np.min(m) <= INTERIOR_TOL:
        raise NotStrictlyInvariant("a sampled image vector leaves the interior of the target")


def strong_focusing_number(pair, n=DEFAULT_GRID):
    """``1 / separation(A C1, complement of C2)`` and a witness vector."""
    sep, w = cone_separation(ImageCone(pair.source, np.asarray(pair.map, dtype=float)),
                             pair.target.complement(), n=n)
    if sep <= INTERIOR_TOL:
        raise NotStrictlyInvariant("image cone touches the complement of the target")
    return 1.0 / sep, w


class FocusingNumbers(NamedTuple):
    chi_empirical: float
    chi_strong: float


def focusing_numbers(pair, samples=64, rng=None):
    """Empirical and strong focusing numbers of a cone pair.

    Parameters
    ----------
    pair : ConePair
    samples : int
        Number of sampled unit vectors of the source cone; the empirical
        number is the maximum over all pairs of them.
    rng : numpy.random.Generator, optional

    Returns
    -------
    FocusingNumbers
        ``chi_empirical <= p(chi_strong)`` is checked before returning.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    A = np.asarray(pair.map, dtype=float)
    U = sample_cone(pair.source, rng, samples)
    _check_strict(pair, U)
    chi_s, _ = strong_focusing_number(pair)
    AU = U @ A.T
    chi_e = 0.0
    for i in range(len(AU)):
        for j in range(i + 1, len(AU)):
            chi_e = max(chi_e, angle_index_vectors(pair.target, AU[i], AU[j]))
    if chi_e > focusing_polynomial(chi_s) * (1 + 1e-9):
        raise BoundViolation("empirical focusing number exceeds the polynomial bound")
    return FocusingNumbers(chi_e, chi_s)


class ContractionSamples(NamedTuple):
    """Sampled angle indices behind the contraction coefficients.

    ``vector_pairs`` rows hold ``(alpha_C1(u, v), alpha_C2(Au, Av))`` for
    admissible vector pairs; ``subspace_pairs`` the same for subspaces.
    """

    tau_emp: float
    tauV_emp: float
    tau_S: float
    chi_empirical: float
    chi_strong: float
    vector_pairs: np.ndarray
    subspace_pairs: np.ndarray


class ContractionCoefficients(NamedTuple):
    tau_emp: float
    tauV_emp: float
    tau_S: float


def _ratios(P):
    if len(P) == 0:
        return -np.inf
    return float(np.max((P[:, 1] - 1.0) / (P[:, 0] - 1.0)))


def contraction_samples(pair, samples=64, subspaces=16, rng=None):
    """Sample the ratios that define the contraction coefficients.

    Vector pairs come from interior samples of the source cone. Subspace
    pairs come from random interior subspaces; for each subspace pair the
    vector pair realizing the image angle index joins the vector pool, which
    keeps the sampled subspace coefficient below the sampled vector one.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    C1, C2 = pair.source, pair.target
    A = np.asarray(pair.map, dtype=float)
    chi_e, chi_s = focusing_numbers(pair, samples=max(samples // 4, 8), rng=rng)
    U = sample_cone(C1, rng, samples, interior=True)
    vec = []
    for i in range(0, len(U) - 1, 2):
        u, v = U[i], U[i + 1]
        if C1.margin(u)[0] <= INTERIOR_TOL or C1.margin(v)[0] <= INTERIOR_TOL:
            continue
        a1 = angle_index_vectors(C1, u, v)
        if a1 > 1.0:
            vec.append((a1, angle_index_vectors(C2, A @ u, A @ v)))
    sub = []
    for _ in range(subspaces):
        E1 = random_interior_subspace(C1, rng)
        E2 = random_interior_subspace(C1, rng)
        pairs = _subspace_pairs(E1, E2, 64)
        a1 = np.array([angle_index_vectors(C1, u, v) for u, v in pairs])
        a2 = np.array([angle_index_vectors(C2, A @ u, A @ v) for u, v in pairs])
        s1, s2 = float(a1.max()), float(a2.max())
        if s1 > 1.0:
            sub.append((s1, s2))
            j = int(np.argmax(a2))
            if a1[j] > 1.0:
                vec.append((a1[j], a2[j]))
    vec = np.array(vec).reshape(-1, 2)
    sub = np.array(sub).reshape(-1, 2)
    if len(vec) == 0:
        raise NoAdmissiblePairs("no sampled pair has angle index above 1")
    tau = _ratios(sub)
    tauV = _ratios(vec)
    tau_S = tau_from_chi(chi_s)
    if not (tau <= tauV <= tau_S + 1e-9):
        raise BoundViolation(f"contraction chain broken: {tau} <= {tauV} <= {tau_S}")
    return ContractionSamples(tau, tauV, tau_S, chi_e, chi_s, vec, sub)


def contraction_coefficients(pair, samples=64, rng=None):
    """Empirical subspace and vector contraction coefficients and the strong bound.

    Returns
    -------
    ContractionCoefficients
        ``(tau_emp, tauV_emp, tau_S)`` with ``tau_emp <= tauV_emp <= tau_S``.
    """
    s = contraction_samples(pair, samples=samples, rng=rng)
    return ContractionCoefficients(s.tau_emp, s.tauV_emp, s.tau_S)


# ---------------------------------------------------------------------------
# normality and thickening

def strong_normality_bound(C, L):
    """Normality constant ``b = 4 / separation(L, C)``.

    Raises
    ------
    NotSeparated
        If ``L`` meets the cone outside the origin.
    """
    sep = separation_index(L, C)
    if sep <= 1e-9:
        raise NotSeparated("subspace meets the cone")
    return 4.0 / sep


def normality_slack(C, E, b, rng, samples=64):
    """Smallest sampled slack of ``dist(u, E) <= b log alpha_C(u, E)``.

    Only interior unit vectors ``u`` with ``alpha_C(u, E) > 1`` enter; for
    lines ``E`` the supremum over ``E`` is exact. Nonnegative return values
    mean the normality inequality held on every sample.
    """
    U = sample_cone(C, rng, samples, interior=True)
    P = E.projector()
    slack = np.inf
    for u in U:
        if C.margin(u)[0] <= INTERIOR_TOL:
            continue
        if E.dim == 1:
            e = E.basis[:, 0]
            a = max(angle_index_vectors(C, u, e), angle_index_vectors(C, u, -e))
        else:
            a = max(angle_index_vectors(C, u, x) for x in sphere_grid(E.dim, 64) @ E.basis.T)
        if a <= 1.0:
            continue
        slack = min(slack, b * np.log(a) - np.linalg.norm(u - P @ u))
    return float(slack)


def _sphere_section_angle(cone, X):
    # angular distance from unit rows of X to the unit-sphere section of a
    # Euclidean cone-like set with quadric distance
    d = np.minimum(cone.distance(X), 1.0)
    return np.arcsin(d)


class ThickenResult(NamedTuple):
    cone: ConeRankK
    deviation: float
    radius: float
    opening_bounds: tuple


def thicken_cone(C_prev, A, chi, C_next=None, n=DEFAULT_GRID, return_info=False):
    """Thicken the image cone ``A C_prev`` by chordal radius ``1 / (4 chi)``.

    The result is a splitting-norm cone over ``(A E_prev, F_prev)``. Its
    opening is chosen, among openings giving ``A C_prev <= C' <= C_next``,
    to minimize the sampled Hausdorff deviation from the thickened set.

    Parameters
    ----------
    C_prev : ConeRankK
        Euclidean splitting-norm cone.
    A : array_like
        Injective matrix.
    chi : float
        Focusing parameter, at least 1.
    C_next : ConeRankK, optional
        Outer cone of the sandwich; defaults to ``C_prev``.
    return_info : bool
        Also return the deviation and the feasible opening interval.

    Raises
    ------
    FitFailure
        If no opening satisfies both containments on the samples.
    """
    if chi < 1.0:
        raise InvalidArgument("chi must be at least 1")
    A = np.asarray(A, dtype=float)
    if not is_injective(A):
        raise InvalidArgument("map must be injective")
    if not C_prev.euclidean:
        raise InvalidArgument("thickening needs a Euclidean splitting-norm cone")
    C_next = C_prev if C_next is None else C_next
    radius = 1.0 / (4.0 * chi)
    rho = 2.0 * np.arcsin(radius / 2.0)  # chordal radius as an angle
    try:
        S = make_splitting(span_image(A, C_prev.splitting.E), C_prev.splitting.F)
    except Exception as exc:
        raise FitFailure("image of E is not complementary to F") from exc
    image = ImageCone(C_prev, A)
    a, c, r = _param_grid(C_prev.k, C_prev.d - C_prev.k, n)
    W = image.points(a, c, r)
    PE = W @ S.proj_E.T
    PF = W @ S.proj_F.T
    l_min = float(np.max(np.linalg.norm(PF, axis=1) / np.linalg.norm(PE, axis=1)))
    l_min = max(l_min, MIN_OPENING)

    def cone_l(l):
        return ConeRankK(S, float(l))

    def inside_next(l):
        B = cone_l(l).boundary_lines(n)
        return np.min(C_next.margin(B)) >= -1e-9

    if not inside_next(l_min):
        raise FitFailure("image cone is not contained in the outer cone")
    lo, hi = l_min, min(MAX_OPENING, max(2.0 * l_min, 1.0))
    while inside_next(hi) and hi < MAX_OPENING:
        lo, hi = hi, min(2.0 * hi, MAX_OPENING)
    if inside_next(hi):
        lo = hi
    else:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if inside_next(mid):
                lo = mid
            else:
                hi = mid
    l_max = lo

    X = sphere_grid(C_prev.d, n)
    img_Q = _Quadric(np.linalg.inv(A).T @ C_prev.quadric_matrix() @ np.linalg.inv(A))
    ang_img = np.arcsin(np.minimum(img_Q.distance(X), 1.0))
    in_T = ang_img <= rho

    def deviation(l):
        Cl = cone_l(l)
        in_U = Cl.margin(X) >= 0.0
        d1 = np.max(np.maximum(ang_img[in_U] - rho, 0.0)) if in_U.any() else 0.0
        d2 = np.max(np.arcsin(np.minimum(Cl.distance(X[in_T]), 1.0))) if in_T.any() else 0.0
        return 2.0 * np.sin(max(d1, d2) / 2.0)

    if l_max - l_min <= 1e-12 * max(1.0, l_max):
        l_best = l_min
    else:
        res = minimize_scalar(deviation, bounds=(l_min, l_max), method="bounded",
                              options={"xatol": 1e-10 * l_max})
        cands = [(deviation(l_min), l_min), (deviation(l_max), l_max), (res.fun, res.x)]
        l_best = min(cands)[1]
    out = cone_l(l_best)
    # sandwich on samples
    if np.min(out.margin(W)) < -1e-9 or np.min(C_next.margin(out.boundary_lines(n))) < -1e-9:
        raise FitFailure("sandwich containment failed on samples")
    if return_info:
        return ThickenResult(out, float(deviation(l_best)), radius, (l_min, l_max))
    return out


# ---------------------------------------------------------------------------
# cone families along orbits

@dataclass(eq=False)
class ConeFamily:
    """Cones ``C(theta^j omega)`` with optional focusing parameters ``chi``.

    Parameters
    ----------
    cone_at : callable
        Maps a step ``j`` to a cone.
    chi_at : callable, optional
        Maps a step ``j`` to ``chi(theta^j omega) >= 1``.
    constant : bool
        True when ``cone_at`` ignores the step; checkers use it to cache
        geometric computations per distinct matrix.
    lo, hi : int, optional
        Inclusive range of steps where cones exist; unbounded when omitted.
    """

    cone_at: Callable
    chi_at: Optional[Callable] = None
    constant: bool = False
    lo: Optional[int] = None
    hi: Optional[int] = None

    def cone(self, j):
        if (self.lo is not None and j < self.lo) or (self.hi is not None and j > self.hi):
            from .errors import WindowExceeded
            raise WindowExceeded(f"no cone at step {j}")
        return self.cone_at(j)

    def chi(self, j):
        if self.chi_at is None:
            return None
        return float(self.chi_at(j))

    @property
    def has_chi(self):
        return self.chi_at is not None


def constant_family(C, chi=None):
    """Family repeating one cone, with a constant ``chi`` if given."""
    chi_at = None if chi is None else (lambda j, c=float(chi): c)
    return ConeFamily(lambda j: C, chi_at, constant=True)


def family_from_steps(cones, chi=None, start=0):
    """Family from per-step sequences indexed from ``start``."""
    cones = list(cones)
    chi = None if chi is None else np.asarray(chi, dtype=float)

    def cone_at(j):
        return cones[j - start]

    chi_at = None if chi is None else (lambda j: chi[j - start])
    return ConeFamily(cone_at, chi_at, lo=start, hi=start + len(cones) - 1)
