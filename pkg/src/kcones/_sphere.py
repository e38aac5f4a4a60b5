"""Deterministic point sets on unit spheres and minimization over them."""

import numpy as np
from scipy.optimize import minimize

DEFAULT_GRID = 4096
_GRID_SEED = 20240917


def sphere_grid(k, n=DEFAULT_GRID, seed=_GRID_SEED):
    """Return unit vectors covering the sphere of ``R^k``.

    Equally spaced angles for ``k == 2``, a Fibonacci lattice for ``k == 3``
    and seeded Gaussian samples otherwise. For ``k == 1`` the sphere is the
    two points ``+1`` and ``-1``.

    Parameters
    ----------
    k : int
        Ambient dimension of the sphere.
    n : int
        Number of points requested (ignored for ``k == 1``).
    seed : int
        Seed for the random construction used when ``k > 3``.

    Returns
    -------
    ndarray of shape (m, k)
    """
    if k < 1:
        raise ValueError("sphere dimension must be at least 1")
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        t = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(t), np.sin(t)])
    if k == 3:
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = np.pi * (3.0 - np.sqrt(5.0)) * i
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, k))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def minimize_on_sphere(f, k, n=DEFAULT_GRID, starts=6, tol=1e-13, grid=None):
    """Minimize a function on the unit sphere of ``R^k``.

    The function is first evaluated on a deterministic grid; the best grid
    points then seed Nelder-Mead runs in unnormalized coordinates.

    Parameters
    ----------
    f : callable
        Maps an ``(m, k)`` array of unit vectors to ``m`` values.
    k : int
        Sphere dimension.
    n : int
        Grid size.
    starts : int
        Number of grid points refined locally.
    tol : float
        Tolerance passed to the local optimizer.
    grid : ndarray, optional
        Explicit grid replacing the default one.

    Returns
    -------
    value : float
    argmin : ndarray of shape (k,)
    """
    pts = sphere_grid(k, n) if grid is None else np.asarray(grid, dtype=float)
    vals = np.asarray(f(pts), dtype=float)
    order = np.argsort(vals, kind="stable")
    best_val = float(vals[order[0]])
    best_pt = pts[order[0]].copy()
    if k == 1:
        return best_val, best_pt

    def scalar(x):
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return np.inf
        return float(f((x / nx)[None, :])[0])

    for idx in order[:starts]:
        res = minimize(scalar, pts[idx], method="Nelder-Mead",
                       options={"xatol": tol, "fatol": tol, "maxiter": 4000 * k})
        if res.fun < best_val:
            best_val = float(res.fun)
            best_pt = res.x / np.linalg.norm(res.x)
    return best_val, best_pt
