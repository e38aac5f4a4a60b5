"""Base dynamics, matrix cocycles and Lyapunov exponents.

An orbit trace holds the matrices ``A(theta^j omega)`` on a two-sided window
``-past <= j < length`` and the forward partial products
``T^n(omega) = A(theta^{n-1} omega) ... A(omega)`` in the factored form
``exp(logscale[n]) Q[n] P[n]`` with ``Q`` orthogonal and ``P`` upper
triangular of unit max-entry, so no stored matrix grows with ``n``.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg.lapack import dgeqrf, dorgqr

from ._sphere import sphere_grid
from .errors import (GapTooSmall, InvalidArgument, NonPositiveValue, NotInvariant,
                     WindowExceeded)
from .subspaces import Subspace, gap_distance, is_injective, make_subspace, span_image

KAPPA = -np.inf  # every operator is compact in finite dimension
N_BATCHES = 10


@dataclass(frozen=True)
class BaseSystem:
    """Ergodic base system driving the choice of matrices.

    Attributes
    ----------
    kind : str
        ``"bernoulli_shift"``, ``"markov_chain"`` or ``"circle_rotation"``.
    probabilities : tuple of float
        Symbol weights of a Bernoulli shift.
    transition : tuple of tuple of float
        Row-stochastic matrix of a Markov chain.
    stationary : tuple of float
        Stationary vector of the Markov chain (computed when omitted).
    rotation : float
        Rotation number in ``[0, 1)``; the circle is cut into ``bins`` equal
        arcs, one symbol per arc.
    bins : int
        Number of arcs of the circle rotation.
    seed : int
        Default seed for orbit sampling.
    """

    kind: str
    probabilities: tuple = ()
    transition: tuple = ()
    stationary: tuple = ()
    rotation: float = 0.0
    bins: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind == "bernoulli_shift":
            p = np.asarray(self.probabilities, dtype=float)
            if p.ndim != 1 or len(p) == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise InvalidArgument("probabilities must be nonnegative and sum to 1")
        elif self.kind == "markov_chain":
            P = np.asarray(self.transition, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0):
                raise InvalidArgument("transition must be a square nonnegative matrix")
            if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
                raise InvalidArgument("transition rows must sum to 1")
            if len(self.stationary) == 0:
                object.__setattr__(self, "stationary", tuple(_stationary(P)))
            pi = np.asarray(self.stationary, dtype=float)
            if len(pi) != len(P) or abs(pi.sum() - 1.0) > 1e-12 or np.any(pi < 0):
                raise InvalidArgument("stationary vector must be a probability vector")
            if np.max(np.abs(pi @ P - pi)) > 1e-10:
                raise InvalidArgument("stationary vector is not invariant")
        elif self.kind == "circle_rotation":
            if not (0.0 <= self.rotation < 1.0):
                raise InvalidArgument("rotation number must lie in [0, 1)")
            if self.bins < 1:
                raise InvalidArgument("bins must be positive")
        else:
            raise InvalidArgument(f"unknown base kind {self.kind!r}")

    @property
    def n_symbols(self):
        if self.kind == "bernoulli_shift":
            return len(self.probabilities)
        if self.kind == "markov_chain":
            return len(self.transition)
        return self.bins


def _stationary(P):
    w, V = np.linalg.eig(P.T)
    i = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(V[:, i])
    pi = np.abs(pi) / np.abs(pi).sum()
    return pi


def bernoulli(probabilities, seed=0):
    return BaseSystem("bernoulli_shift", probabilities=tuple(map(float, probabilities)), seed=seed)


def markov(transition, stationary=None, seed=0):
    P = tuple(tuple(map(float, row)) for row in transition)
    pi = () if stationary is None else tuple(map(float, stationary))
    return BaseSystem("markov_chain", transition=P, stationary=pi, seed=seed)


def rotation(alpha, bins, seed=0):
    return BaseSystem("circle_rotation", rotation=float(alpha), bins=int(bins), seed=seed)


@dataclass(frozen=True, eq=False)
class CocycleSpec:
    """Base system together with one matrix per symbol."""

    base: BaseSystem
    generators: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.generators, dtype=float)
        if G.ndim != 3 or G.shape[1] != G.shape[2]:
            raise InvalidArgument("generators must be an array of square matrices")
        if len(G) != self.base.n_symbols:
            raise InvalidArgument("need one generator per base symbol")
        if not np.all(np.isfinite(G)):
            raise InvalidArgument("generators must be finite")
        for A in G:
            if not is_injective(A):
                raise InvalidArgument("every generator must be injective")
        object.__setattr__(self, "generators", G)

    @property
    def dim(self):
        return self.generators.shape[1]


def constant_cocycle(A):
    """Cocycle with a single matrix."""
    return CocycleSpec(bernoulli([1.0]), np.asarray(A, dtype=float)[None])


def _sample_symbols(base, past, length, rng):
    n = past + length
    if base.kind == "bernoulli_shift":
        return rng.choice(len(base.probabilities), size=n, p=np.asarray(base.probabilities))
    if base.kind == "markov_chain":
        P = np.asarray(base.transition)
        pi = np.asarray(base.stationary)
        m = len(P)
        # time reversal of the stationary chain generates the past
        with np.errstate(divide="ignore", invalid="ignore"):
            R = np.where(pi[:, None] > 0, (P.T * pi[None, :]) / pi[:, None], 0.0)
        cP, cR = np.cumsum(P, axis=1), np.cumsum(R, axis=1)
        out = np.empty(n, dtype=int)
        x0 = int(rng.choice(m, p=pi))
        out[past] = x0
        u = rng.random(n)
        for j in range(past + 1, n):
            out[j] = min(int(np.searchsorted(cP[out[j - 1]], u[j], side="right")), m - 1)
        for j in range(past - 1, -1, -1):
            out[j] = min(int(np.searchsorted(cR[out[j + 1]], u[j], side="right")), m - 1)
        return out
    x0 = rng.random()
    steps = np.arange(-past, length)
    x = np.mod(x0 + steps * base.rotation, 1.0)
    return np.minimum((x * base.bins).astype(int), base.bins - 1)


@dataclass(eq=False)
class OrbitTrace:
    """Matrices along a two-sided orbit window and cached forward products.

    Attributes
    ----------
    matrices : ndarray of shape (past + length, d, d)
        ``matrices[j + past]`` is ``A(theta^j omega)``.
    symbols : ndarray of int
        Base symbols on the same window.
    Q, P, logscale : ndarrays
        ``T^n(omega) = exp(logscale[n]) Q[n] P[n]`` for ``0 <= n <= length``.
    qr_logs : ndarray of shape (length, d)
        Logarithms of the diagonal of the successive QR factors.
    """

    matrices: np.ndarray
    past: int
    symbols: Optional[np.ndarray] = None
    seed: Optional[int] = None
    Q: np.ndarray = field(init=False, repr=False)
    P: np.ndarray = field(init=False, repr=False)
    logscale: np.ndarray = field(init=False, repr=False)
    qr_logs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.length < 1:
            raise InvalidArgument("orbit length must be at least 1")
        self._factor()

    @property
    def length(self):
        return len(self.matrices) - self.past

    @property
    def d(self):
        return self.matrices.shape[1]

    @property
    def window(self):
        """Half-open range of available steps ``[-past, length)``."""
        return -self.past, self.length

    def A(self, j):
        """The matrix ``A(theta^j omega)``."""
        lo, hi = self.window
        if not lo <= j < hi:
            raise WindowExceeded(f"step {j} outside [{lo}, {hi})")
        return self.matrices[j + self.past]

    def _factor(self):
        n, d = self.length, self.d
        Q = np.empty((n + 1, d, d))
        P = np.empty((n + 1, d, d))
        ls = np.zeros(n + 1)
        logs = np.empty((n, d))
        Q[0] = np.eye(d)
        P[0] = np.eye(d)
        q, p, s = Q[0], P[0], 0.0
        mats = self.matrices[self.past:]
        iu = np.triu_indices(d)
        r = np.zeros((d, d))
        # LAPACK calls directly: numpy's qr wrapper dominates the cost for small d
        for j in range(n):
            qr, tau, _, _ = dgeqrf(mats[j] @ q)
            q, _, _ = dorgqr(qr, tau)
            r[iu] = qr[iu]
            sg = np.sign(r.diagonal())
            q = q * sg
            r = sg[:, None] * r
            with np.errstate(divide="ignore"):
                logs[j] = np.log(r.diagonal())  # -inf marks a singular step
            p = r @ p
            m = np.abs(p).max()
            p = p / m
            s += np.log(m)
            Q[j + 1], P[j + 1], ls[j + 1] = q, p, s
        self.Q, self.P, self.logscale, self.qr_logs = Q, P, ls, logs

    def log_norms(self):
        """``log ||T^n(omega)||`` for ``n = 0..length``."""
        return self.logscale + np.log(np.linalg.norm(self.P, ord=2, axis=(1, 2)))


def trace_from_matrices(future, past=None, symbols=None, seed=None):
    """Build a trace from explicit matrices ``A(theta^j omega)``.

    Parameters
    ----------
    future : array_like of shape (n, d, d)
        Matrices for ``j = 0..n-1``.
    past : array_like of shape (m, d, d), optional
        Matrices for ``j = -m..-1`` in increasing order of ``j``.
    """
    future = np.asarray(future, dtype=float)
    if past is None or len(past) == 0:
        mats, m = future, 0
    else:
        past = np.asarray(past, dtype=float)
        mats, m = np.concatenate([past, future]), len(past)
    return OrbitTrace(mats, m, symbols=symbols, seed=seed)


def sample_orbit(spec, length, seed=None, past=None):
    """Realize an orbit window of the base system and its matrices.

    Parameters
    ----------
    spec : CocycleSpec
    length : int
        Number of forward steps ``n >= 1``.
    seed : int, optional
        Defaults to the base system seed.
    past : int, optional
        Number of backward steps; defaults to ``length``.

    Returns
    -------
    OrbitTrace
    """
    if length < 1:
        raise InvalidArgument("orbit length must be at least 1")
    seed = spec.base.seed if seed is None else seed
    past = length if past is None else int(past)
    rng = np.random.default_rng(seed)
    sym = _sample_symbols(spec.base, past, length, rng)
    return OrbitTrace(spec.generators[sym], past, symbols=sym, seed=seed)


def scaled_product(trace, j, n):
    """``(s, M)`` with ``T^n(theta^j omega) = exp(s) M`` and ``max|M| = 1``."""
    lo, hi = trace.window
    if n < 0 or j < lo or j + n > hi:
        raise WindowExceeded(f"product over [{j}, {j + n}) outside [{lo}, {hi})")
    M = np.eye(trace.d)
    s = 0.0
    for t in range(j, j + n):
        M = trace.matrices[t + trace.past] @ M
        m = np.abs(M).max()
        M /= m
        s += np.log(m)
    return s, M


def cocycle_product(trace, j, n):
    """The ordered product ``A(theta^{j+n-1} omega) ... A(theta^j omega)``.

    Raises
    ------
    WindowExceeded
        If ``[j, j + n)`` is not covered by the trace.
    """
    lo, hi = trace.window
    if n < 0 or j < lo or j + n > hi:
        raise WindowExceeded(f"product over [{j}, {j + n}) outside [{lo}, {hi})")
    if j == 0:
        return np.exp(trace.logscale[n]) * (trace.Q[n] @ trace.P[n])
    s, M = scaled_product(trace, j, n)
    return np.exp(s) * M


# ---------------------------------------------------------------------------
# exponents

@dataclass
class ExponentReport:
    """Lyapunov exponents with batch-means standard errors."""

    lambda_top: float
    lambda_top_stderr: float
    spectrum: np.ndarray
    stderr: np.ndarray
    lambda_E: Optional[float] = None
    lambda_F: Optional[float] = None
    lambda_E_minus: Optional[float] = None
    bundle_stderr: Optional[np.ndarray] = None
    kappa: float = KAPPA


def _batch_stderr(increments):
    # increments: per-step contributions, shape (n, ...)
    n = len(increments)
    m = n // N_BATCHES
    if m == 0:
        return np.full(increments.shape[1:], np.nan)
    b = increments[: m * N_BATCHES].reshape(N_BATCHES, m, *increments.shape[1:]).mean(axis=1)
    return b.std(axis=0, ddof=1) / np.sqrt(N_BATCHES)


def top_lyapunov(trace):
    """Top exponent ``(1/n) log ||T^n||`` and its batch-means standard error.

    The error uses ten equal segments of the top QR growth rate.
    """
    if trace.length < 100:
        raise InvalidArgument("exponent estimation needs at least 100 steps")
    n = trace.length
    lam = float(trace.log_norms()[-1] / n)
    return lam, float(_batch_stderr(trace.qr_logs[:, 0]))


def lyapunov_spectrum(trace):
    """Full spectrum from the accumulated QR factors, sorted non-increasing."""
    lam, err = top_lyapunov(trace)
    spec = trace.qr_logs.mean(axis=0)
    se = _batch_stderr(trace.qr_logs)
    order = np.argsort(-spec, kind="stable")
    return ExponentReport(lam, err, spec[order], se[order])


def _restricted_matrix(A, B0, B1):
    # coordinates of A restricted to span(B0) -> span(B1), orthonormal bases
    return B1.T @ A @ B0


def invariance_defects(trace, subspaces, start=0):
    """Gap between ``A(theta^j omega) S_j`` and ``S_{j+1}`` for consecutive steps."""
    out = np.empty(len(subspaces) - 1)
    for t in range(len(subspaces) - 1):
        out[t] = gap_distance(span_image(trace.A(start + t), subspaces[t]), subspaces[t + 1])
    return out


def restricted_log_norms(trace, subspaces, start, n):
    """Log norms of the cocycle restricted to an invariant family.

    Parameters
    ----------
    subspaces : sequence of Subspace
        ``subspaces[t]`` is the fibre at step ``start + t``, for
        ``t = 0..n``.

    Returns
    -------
    fwd, inv : ndarray of shape (n + 1,)
        ``log ||T^t|_S||`` and ``log ||(T^t|_S)^{-1}||``.
    """
    fwd = np.zeros(n + 1)
    inv = np.zeros(n + 1)
    if n == 0:
        return fwd, inv
    trace.A(start)
    trace.A(start + n - 1)  # window checks
    A = trace.matrices[start + trace.past: start + trace.past + n]
    B = np.stack([S.basis for S in subspaces[: n + 1]])
    R = np.swapaxes(B[1:], 1, 2) @ A @ B[:-1]
    k = R.shape[1]
    if k == 1:
        c = np.cumsum(np.log(np.abs(R[:, 0, 0])))
        fwd[1:] = c
        inv[1:] = -c
        return fwd, inv
    Rinv = np.linalg.inv(R)
    Ms = np.empty_like(R)
    Ws = np.empty_like(R)
    sM = np.empty(n)
    sW = np.empty(n)
    M = np.eye(k)
    W = np.eye(k)
    a_log = b_log = 0.0
    for t in range(n):
        M = R[t] @ M
        W = W @ Rinv[t]
        a, b = np.abs(M).max(), np.abs(W).max()
        M, W = M / a, W / b
        a_log += np.log(a)
        b_log += np.log(b)
        Ms[t], Ws[t], sM[t], sW[t] = M, W, a_log, b_log
    fwd[1:] = sM + np.log(np.linalg.norm(Ms, 2, axis=(1, 2)))
    inv[1:] = sW + np.log(np.linalg.norm(Ws, 2, axis=(1, 2)))
    return fwd, inv


def _family_subspaces(family, which, start, n):
    if hasattr(family, "subspaces"):
        return family.subspaces(which, start, n)
    # a sequence of Splitting objects indexed from step 0
    return [getattr(family[t], which) for t in range(n + 1)]


def bundle_exponents(trace, splitting_family, n=None, tol=1e-6, start=None):
    """Growth rates of the cocycle restricted to the two bundles of a splitting.

    Parameters
    ----------
    splitting_family : SplittingFamily or sequence of Splitting
        Fibres from step ``start`` on; a plain sequence starts there.
    n : int, optional
        Number of steps; defaults to the longest available.
    start : int, optional
        First step; defaults to the family's ``start`` or 0.

    Returns
    -------
    ExponentReport
        With ``lambda_E``, ``lambda_F`` and ``lambda_E_minus`` filled.

    Raises
    ------
    NotInvariant
        If some ``A E_j`` or ``A F_j`` is farther than ``tol`` from the next fibre.
    """
    if n is None:
        n = (splitting_family.n_steps if hasattr(splitting_family, "n_steps")
             else len(splitting_family) - 1)
    if start is None:
        start = getattr(splitting_family, "start", 0)
    n = min(n, trace.window[1] - start)
    Es = _family_subspaces(splitting_family, "E", start, n)
    Fs = _family_subspaces(splitting_family, "F", start, n)
    for name, S in (("E", Es), ("F", Fs)):
        dfx = invariance_defects(trace, S, start)
        if np.max(dfx, initial=0.0) > tol:
            raise NotInvariant(f"{name} is not invariant: defect {np.max(dfx):.3g}")
    fE, iE = restricted_log_norms(trace, Es, start, n)
    fF, _ = restricted_log_norms(trace, Fs, start, n)
    se = _batch_stderr(np.column_stack([np.diff(fE), np.diff(fF), np.diff(iE)]))
    if trace.length >= 100:
        base = lyapunov_spectrum(trace)
    else:
        lam = float(trace.log_norms()[-1] / trace.length)
        base = ExponentReport(lam, np.nan, np.full(trace.d, np.nan), np.full(trace.d, np.nan))
    base.lambda_E = float(fE[-1] / n)
    base.lambda_F = float(fF[-1] / n)
    base.lambda_E_minus = float(iE[-1] / n)
    base.bundle_stderr = se
    return base


# ---------------------------------------------------------------------------
# temperedness

def temperedness_slope(values, tol=1e-2):
    """Least-squares slope of ``log f`` over the trailing half of the sequence.

    A tempered sequence has ``(1/n) log f(theta^n omega) -> 0``; the fitted
    slope estimates that exponential rate.

    Returns
    -------
    slope : float
    verdict : bool
        ``|slope| < tol``.
    """
    f = np.asarray(values, dtype=float)
    if np.any(~(f > 0)):
        raise NonPositiveValue("temperedness needs positive values")
    if len(f) < 100:
        raise InvalidArgument("temperedness needs at least 100 values")
    h = len(f) // 2
    x = np.arange(h, len(f), dtype=float)
    slope = float(np.polyfit(x, np.log(f[h:]), 1)[0])
    return slope, abs(slope) < tol


def tempered_envelope(values, gamma):
    """Tempered bound ``R_j = max_n g_{j+n} e^{-gamma |n|}`` with ``g = max(f, 1/f)``.

    Computed in log space by a forward and a backward pass over the whole
    window, so ``1/R <= f <= R`` and ``e^{-gamma} R_j <= R_{j+1} <= e^{gamma} R_j``.
    """
    f = np.asarray(values, dtype=float)
    if gamma <= 0:
        raise InvalidArgument("gamma must be positive")
    if np.any(~(f > 0)):
        raise NonPositiveValue("envelope needs positive values")
    g = np.abs(np.log(f))
    fw = g.copy()
    bw = g.copy()
    for j in range(1, len(g)):
        fw[j] = max(g[j], fw[j - 1] - gamma)
    for j in range(len(g) - 2, -1, -1):
        bw[j] = max(g[j], bw[j + 1] - gamma)
    return np.exp(np.maximum(fw, bw))


# ---------------------------------------------------------------------------
# Lyapunov norms

@dataclass(eq=False)
class METDecomposition:
    """Oseledets blocks along a window of steps.

    Attributes
    ----------
    exponents : ndarray
        One exponent per block, decreasing.
    stderr : ndarray
    dims : tuple of int
    blocks : dict
        ``blocks[j]`` is the list of block subspaces at step ``j``.
    eps : ndarray
        Per-block slack, a tenth of the smallest adjacent gap.
    """

    exponents: np.ndarray
    stderr: np.ndarray
    dims: tuple
    blocks: dict
    eps: np.ndarray

    @property
    def n_blocks(self):
        return len(self.dims)

    @property
    def steps(self):
        return min(self.blocks), max(self.blocks) + 1

    def upper(self, i, j):
        """Sum of the first ``i`` blocks at step ``j``."""
        return make_subspace(np.hstack([b.basis for b in self.blocks[j][:i]]))

    def lower(self, i, j):
        """Sum of the blocks after the ``i``-th at step ``j``."""
        return make_subspace(np.hstack([b.basis for b in self.blocks[j][i:]]))

    def block_projections(self, j):
        """Oblique projections onto each block along the others at step ``j``."""
        B = np.hstack([b.basis for b in self.blocks[j]])
        Binv = np.linalg.inv(B)
        out, c = [], 0
        for b in self.blocks[j]:
            out.append(b.basis @ Binv[c:c + b.dim])
            c += b.dim
        return out


def default_eps(exponents):
    """A tenth of the smallest gap adjacent to each exponent."""
    lam = np.asarray(exponents, dtype=float)
    m = len(lam)
    eps = np.empty(m)
    for j in range(m):
        gaps = []
        if j > 0:
            gaps.append(lam[j - 1] - lam[j])
        if j < m - 1:
            gaps.append(lam[j] - lam[j + 1])
        eps[j] = min(gaps) / 10.0 if gaps else np.nan
    return eps


class _SeriesNorm:
    """Norm ``c -> sum_n |G_n c|`` from a stack of coordinate matrices."""

    def __init__(self, basis, G, tail):
        self.basis = basis
        self.G = G
        self.tail = tail

    def __call__(self, X):
        C = np.asarray(X, dtype=float) @ self.basis
        return np.linalg.norm(np.einsum("nab,mb->mna", self.G, C), axis=2).sum(axis=1)


def _series_stack(trace, bases, step, N, rate, backward, rate_back):
    # G_n = scaled restricted T^n at `step`, n = 0..N (and n = -1..-N if backward)
    k = bases[step].dim
    G = [np.eye(k)]
    M = np.eye(k)
    for t in range(N):
        R = _restricted_matrix(trace.A(step + t), bases[step + t].basis, bases[step + t + 1].basis)
        M = np.exp(-rate) * (R @ M)
        G.append(M)
    if backward:
        M = np.eye(k)
        for t in range(1, N + 1):
            R = _restricted_matrix(trace.A(step - t), bases[step - t].basis,
                                   bases[step - t + 1].basis)
            M = np.exp(rate_back) * (M @ np.linalg.inv(R))
            G.append(M)
    return np.array(G)


@dataclass(eq=False)
class LyapunovNorm:
    """Orbit-adapted norm ``|.|_{omega,i}`` at one step.

    Calling the object on rows of vectors returns their norms. ``K`` is the
    sampled supremum of ``|v|_{omega,i} / |v|`` and ``tail`` bounds the
    truncation error relative to ``|v|``.
    """

    i: int
    step: int
    window: int
    projections: list
    parts: list
    K: float = np.nan
    tail: float = np.nan

    def component_norms(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return [part(X @ P.T) for P, part in zip(self.projections, self.parts)]

    def upper_norm(self, X):
        """Norm of vectors in the sum of the first ``i`` blocks."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return sum(part(X @ P.T) for P, part in zip(self.projections[:-1], self.parts[:-1]))

    def lower_norm(self, X):
        """Norm of vectors in the complement of the first ``i`` blocks."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.parts[-1](X @ self.projections[-1].T)

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return sum(self.component_norms(X))


def lyapunov_norm_at(trace, met, i, step=0, window=None, eps=None, tol=1e-8, k_grid=2048):
    """Build the orbit-adapted norm of level ``i`` at one step.

    For ``v`` in block ``j <= i`` the norm is
    ``sum_{n in Z} |T^n v| e^{-(n lambda_j + |n| eps_j)}``; on the sum of the
    remaining blocks it is ``sum_{n >= 0} |T^n v| e^{-n(lambda_{i+1} + eps_{i+1})}``;
    a general vector gets the sum over its components.

    Parameters
    ----------
    i : int
        Level, ``1 <= i < number of blocks``.
    window : int, optional
        Truncation; when omitted the smallest one whose geometric tail bound
        is below ``tol`` times the partial sums is used.
    eps : float or array_like, optional
        Per-block slack; defaults to a tenth of the adjacent gaps.

    Raises
    ------
    GapTooSmall
        If a gap used by the level is below ``1e-3``.
    WindowExceeded
        If the decomposition does not cover the required window.
    """
    lam = np.asarray(met.exponents, dtype=float)
    m = len(lam)
    if not 1 <= i < m:
        raise GapTooSmall(f"level {i} needs at least {i + 1} separated exponents")
    if np.min(-np.diff(lam)) < 1e-3:
        raise GapTooSmall("adjacent exponents closer than 1e-3")
    if eps is None:
        eps = default_eps(lam)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (m,)).copy()
    lo, hi = met.steps
    avail = min(step - lo, hi - 1 - step)
    if window is None:
        rate = 0.5 * np.min(eps[: i + 1])
        N = int(np.ceil(np.log(1.0 / (tol * (1.0 - np.exp(-rate)))) / rate))
    else:
        N = int(window)
    if N > avail:
        raise WindowExceeded(f"Lyapunov norm needs {N} steps each side, window has {avail}")
    blocks = {j: met.blocks[j] for j in range(step - N, step + N + 1)}
    parts, tails = [], []
    for b in range(i):
        bases = {j: blocks[j][b] for j in blocks}
        G = _series_stack(trace, bases, step, N, lam[b] + eps[b], True, lam[b] - eps[b])
        parts.append(_SeriesNorm(bases[step].basis, G, None))
        tails.append(_geometric_tail(G[N], G[-1], eps[b]))
    low = {j: make_subspace(np.hstack([x.basis for x in blocks[j][i:]])) for j in blocks}
    G = _series_stack(trace, low, step, N, lam[i] + eps[i], False, 0.0)
    parts.append(_SeriesNorm(low[step].basis, G, None))
    tails.append(_geometric_tail(G[N], None, eps[i]))
    proj = met.block_projections(step)
    projections = proj[:i] + [sum(proj[i:])]
    out = LyapunovNorm(i, step, N, projections, parts)
    out.tail = float(max(tails))
    S = sphere_grid(trace.d, k_grid)
    out.K = float(np.max(out(S)))
    return out


def _geometric_tail(last_fwd, last_bwd, eps):
    # tail after the last kept terms, assuming geometric decay at rate eps/2
    r = np.exp(-0.5 * eps)
    t = np.linalg.norm(last_fwd, 2)
    if last_bwd is not None:
        t += np.linalg.norm(last_bwd, 2)
    return t * r / (1.0 - r)


class LyapunovNormValue(NamedTuple):
    value: float
    tail_bound: float
    K: float


def lyapunov_norm(trace, met, i, v, window=None, step=0, eps=None):
    """Orbit-adapted norm of one vector with its truncation certificate.

    Returns
    -------
    LyapunovNormValue
        ``value`` satisfies ``|v| <= value <= K |v|``; ``tail_bound`` bounds
        the neglected part of the series.
    """
    L = lyapunov_norm_at(trace, met, i, step=step, window=window, eps=eps)
    v = np.asarray(v, dtype=float)
    return LyapunovNormValue(float(L(v)[0]), float(L.tail * np.linalg.norm(v) * len(L.parts)), L.K)
