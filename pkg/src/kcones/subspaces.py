"""Subspaces, splittings, the gap metric and the separation index.

All norms are Euclidean. A subspace is stored through an orthonormal basis,
a splitting through its two oblique projections.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from ._sphere import DEFAULT_GRID, minimize_on_sphere
from .errors import EmptySubspace, NotComplementary, RankDeficient

RANK_TOL = 1e-10


def numerical_rank(M, tol=RANK_TOL):
    """Rank with threshold ``tol`` times the largest singular value."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def is_injective(A, tol=RANK_TOL):
    """True when the square matrix ``A`` has full numerical rank."""
    A = np.asarray(A, dtype=float)
    return numerical_rank(A, tol) == A.shape[1]


def operator_norm(A):
    """Largest singular value of ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


@dataclass(frozen=True, eq=False)
class Subspace:
    """Linear subspace of ``R^d`` with an orthonormal basis.

    Attributes
    ----------
    basis : ndarray of shape (d, k)
        Orthonormal columns spanning the subspace.
    """

    basis: np.ndarray

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def d(self):
        return self.basis.shape[0]

    def projector(self):
        """Orthogonal projector onto the subspace."""
        return self.basis @ self.basis.T

    def __repr__(self):
        return f"Subspace(d={self.d}, dim={self.dim})"


def zero_subspace(d):
    """The trivial subspace of ``R^d``."""
    return Subspace(np.zeros((d, 0)))


def make_subspace(raw_basis):
    """Orthonormalize a spanning set.

    Parameters
    ----------
    raw_basis : array_like of shape (d, k)
        Columns spanning the subspace. A 1-d array is read as one column.

    Returns
    -------
    Subspace

    Raises
    ------
    RankDeficient
        If the numerical rank is below ``k``.
    """
    B = np.asarray(raw_basis, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if not np.all(np.isfinite(B)):
        raise ValueError("basis has non-finite entries")
    d, k = B.shape
    if k == 0:
        return zero_subspace(d)
    if numerical_rank(B) < k:
        raise RankDeficient(f"basis of {k} columns has lower numerical rank")
    Q, R = np.linalg.qr(B)
    # sign convention: positive diagonal of R
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Subspace(Q * s)


def orthogonal_complement(E):
    """Orthogonal complement of ``E``."""
    if E.dim == 0:
        return Subspace(np.eye(E.d))
    return Subspace(null_space(E.basis.T))


def intersection(E, F):
    """Intersection of two subspaces."""
    if E.dim == 0 or F.dim == 0:
        return zero_subspace(E.d)
    N = null_space(np.hstack([E.basis, -F.basis]), rcond=1e-9)
    if N.shape[1] == 0:
        return zero_subspace(E.d)
    return make_subspace(E.basis @ N[: E.dim])


def span_image(A, E):
    """The subspace ``A E`` for injective ``A``."""
    if E.dim == 0:
        return E
    return make_subspace(np.asarray(A, dtype=float) @ E.basis)


def _max_sine(E, F):
    # sine of the largest principal angle seen from E; 1 if E has a vector
    # orthogonal to F. Residual form keeps accuracy for nearby subspaces.
    if E.dim > F.dim:
        return 1.0
    R = E.basis - F.basis @ (F.basis.T @ E.basis)
    return float(min(np.linalg.norm(R, 2), 1.0))


def chord_from_sine(s):
    """Distance ``2 sin(t/2)`` between unit vectors at angle ``t`` with ``sin t = s``."""
    s = np.minimum(np.asarray(s, dtype=float), 1.0)
    return s * np.sqrt(2.0 / (1.0 + np.sqrt(np.maximum(0.0, 1.0 - s * s))))


def gap_distance(E, F):
    """Gap distance between two subspaces.

    The larger of the two sup-inf distances between unit spheres. For a unit
    ``v`` the nearest unit vector of a subspace ``F`` is the normalized
    orthogonal projection, at distance ``sqrt(2 - 2 |P_F v|)``.

    Returns
    -------
    float
        0 for two trivial subspaces, 2 when exactly one is trivial,
        otherwise a value in ``[0, sqrt(2)]``.
    """
    if E.dim == 0 and F.dim == 0:
        return 0.0
    if E.dim == 0 or F.dim == 0:
        return 2.0
    s = max(_max_sine(E, F), _max_sine(F, E))
    return float(chord_from_sine(s))


def subspace_distance(L, V):
    """Separation index of ``L`` from the subspace ``V`` (closed form).

    Equals the sine of the smallest principal angle, computed as the
    smallest singular value of the component of ``L`` orthogonal to ``V``.
    """
    if L.dim == 0:
        raise EmptySubspace("separation index needs dim(L) >= 1")
    if V.dim == 0:
        return 1.0
    if L.dim + V.dim > L.d:
        return 0.0
    R = L.basis - V.basis @ (V.basis.T @ L.basis)
    s = np.linalg.svd(R, compute_uv=False)
    return float(min(s[-1], 1.0))


def separation_index(L, target, grid=DEFAULT_GRID):
    """Infimum over unit ``v`` in ``L`` of the distance from ``v`` to ``target``.

    Parameters
    ----------
    L : Subspace
    target : Subspace or cone-like
        A subspace (closed form through principal angles) or any object with a
        vectorized ``distance(points)`` method, such as a cone or the closure
        of a cone complement.
    grid : int
        Sphere grid size for non-subspace targets.

    Returns
    -------
    float in [0, 1]
    """
    if L.dim == 0:
        raise EmptySubspace("separation index needs dim(L) >= 1")
    if isinstance(target, Subspace):
        return subspace_distance(L, target)
    B = L.basis
    val, _ = minimize_on_sphere(lambda a: target.distance(a @ B.T), L.dim, n=grid)
    return float(min(max(val, 0.0), 1.0))


@dataclass(frozen=True, eq=False)
class Splitting:
    """Direct sum ``R^d = E + F`` with its oblique projections."""

    E: Subspace
    F: Subspace
    proj_E: np.ndarray
    proj_F: np.ndarray

    @property
    def d(self):
        return self.E.d

    @property
    def k(self):
        return self.E.dim

    def coords(self, v):
        """Coordinates of ``v`` (or rows of ``v``) in the bases of E and F."""
        v = np.asarray(v, dtype=float)
        a = v @ self.proj_E.T @ self.E.basis
        b = v @ self.proj_F.T @ self.F.basis
        return a, b

    def swapped(self):
        return Splitting(self.F, self.E, self.proj_F, self.proj_E)

    def __repr__(self):
        return f"Splitting(d={self.d}, k={self.k})"


def make_splitting(E, F, check=True):
    """Build the oblique projections of ``R^d = E + F``.

    Raises
    ------
    NotComplementary
        If dimensions do not add up or the joint basis is rank deficient.
    """
    d = E.d
    if F.d != d or E.dim + F.dim != d:
        raise NotComplementary("dimensions of E and F must add up to d")
    M = np.hstack([E.basis, F.basis])
    if numerical_rank(M) < d:
        raise NotComplementary("E and F intersect nontrivially")
    Minv = np.linalg.inv(M)
    k = E.dim
    PE = E.basis @ Minv[:k]
    PF = F.basis @ Minv[k:]
    if check and 0 < k < d:
        # the norm of the projection onto F along E is the reciprocal of the
        # separation index of F from E
        lhs = operator_norm(PF) * subspace_distance(F, E)
        if abs(lhs - 1.0) > 1e-8 * max(1.0, operator_norm(PF)):
            raise NotComplementary("splitting too close to degenerate for stable projections")
    return Splitting(E, F, PE, PF)
