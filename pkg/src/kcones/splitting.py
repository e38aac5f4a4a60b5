"""Dominated splittings from cones, and cones from splittings.

The top bundle ``E`` is the limit of ``T^n(theta^{-n} omega) E0``, the
complement ``F`` is the graph over a reference complement ``F0`` of the map
``Psi`` solving the invariance equation, and the converse cones are built
from the zeta index or from orbit-adapted Lyapunov norms.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from ._sphere import sphere_grid
from .cocycle import (METDecomposition, default_eps, lyapunov_norm_at, lyapunov_spectrum,
                      restricted_log_norms, scaled_product)
from .cones import ConeRankK, meets_cone_trivially, tau_from_chi
from .errors import (BoundViolation, GapTooSmall, InvalidArgument, NoConvergence,
                     SeriesDiverging, WindowExceeded)
from .subspaces import (Subspace, chord_from_sine, gap_distance, make_splitting,
                        make_subspace, operator_norm, orthogonal_complement, span_image)

PUSH_TOL = 1e-10
FIT_FLOOR = 1e-13
PUSH_CHUNKS = (64, 256, 1024, 4096)
SERIES_TOL = 1e-10
INVARIANCE_TOL = 1e-6
MERGE_GAP = 1e-3
DELTA_HAIRCUT = 0.05


def _as_step_fn(S):
    # constant subspace, callable of the step, or None
    if S is None or callable(S):
        return S
    return lambda j: S


# ---------------------------------------------------------------------------
# push-forward of subspaces

class PushForwardResult(NamedTuple):
    """Limit subspace, fitted gap-decay rate and gap increments."""

    E: Subspace
    rate: float
    history: np.ndarray
    steps: int


def default_initial_subspace(trace, k, step=0, length=32):
    """Top-``k`` left singular subspace of a short product ending at ``step``."""
    lo = trace.window[0]
    m = min(length, step - lo)
    if m <= 0:
        return make_subspace(np.eye(trace.d)[:, :k])
    _, M = scaled_product(trace, step - m, m)
    U = np.linalg.svd(M)[0]
    return make_subspace(U[:, :k])


def _push_batch(trace, E0_at, step, N):
    # X[n] spans T^n(theta^{step-n} omega) E0(step - n) for n = 0..N
    d = trace.d
    first = E0_at(step)
    k = first.dim
    X = np.empty((N, d, k))
    for i in range(N):
        t = step - N + i
        X[i] = E0_at(t).basis
        Y = trace.A(t) @ X[: i + 1]
        X[: i + 1] = np.linalg.qr(Y)[0]
    out = np.empty((N + 1, d, k))
    out[0] = first.basis
    out[1:] = X[::-1]
    return out


def _gap_sequence(B):
    # gap distance between consecutive orthonormal bases of equal dimension
    R = B[1:] - B[:-1] @ np.swapaxes(B[:-1], 1, 2) @ B[1:]
    s = np.linalg.norm(R, ord=2, axis=(1, 2))
    return chord_from_sine(s)


def _fit_rate(history):
    h = np.asarray(history)
    keep = h > FIT_FLOOR
    n = np.nonzero(keep)[0]
    if len(n) < 2:
        return -np.inf
    return float(np.polyfit(n.astype(float), np.log(h[keep]), 1)[0])


def _converged_push(trace, E0_at, step, avail, tol):
    # push over growing windows until a gap increment falls below tol
    sizes = sorted(set(min(c, avail) for c in PUSH_CHUNKS + (avail,)))
    for N in sizes:
        B = _push_batch(trace, E0_at, step, N)
        hist = _gap_sequence(B)
        below = np.nonzero(hist < tol)[0]
        if below.size:
            return B, hist, int(below[0])
    raise NoConvergence(f"gap increments stayed above {tol:g} over {avail} steps")


def push_forward_top_space(trace, E0=None, k=None, step=0, cone=None, tol=PUSH_TOL, seed=0,
                           earliest=None):
    """Limit of ``T^n(theta^{-n} omega) E0`` at a given step.

    Parameters
    ----------
    trace : OrbitTrace
    E0 : Subspace or callable, optional
        Initial subspace, or a function of the start step. Defaults to the
        cone's ``E`` when a cone is given, otherwise to the top singular
        subspace of a short product.
    k : int, optional
        Dimension, needed only when neither ``E0`` nor ``cone`` is given.
    step : int
        Step at which the limit is taken.
    cone : ConeRankK, optional
    tol : float
        Convergence threshold on the gap increment.
    seed : int
        Seed of the second, generic initial subspace used to detect limits
        that depend on the start.
    earliest : int, optional
        First step where ``E0`` may start; defaults to the window start.

    Returns
    -------
    PushForwardResult
        ``rate`` is the least-squares slope of the log gap increments, ``-inf``
        when the start is already invariant.

    Raises
    ------
    NoConvergence
        If the increments do not fall below ``tol`` inside the window, or
        if a generic start converges elsewhere (no gap below the top ``k``
        exponents).
    """
    if E0 is None and cone is not None:
        E0 = cone.splitting.E
    if E0 is None:
        if k is None:
            raise InvalidArgument("need E0, a cone or k")
        E0 = default_initial_subspace(trace, k, step)
    E0_at = _as_step_fn(E0)
    k = E0_at(step).dim
    first = trace.window[0] if earliest is None else max(trace.window[0], earliest)
    avail = step - first
    if avail < 1:
        raise WindowExceeded("push-forward needs steps before the target step")
    B, hist, n_conv = _converged_push(trace, E0_at, step, avail, tol)
    E = Subspace(B[n_conv + 1])
    # a generic start must reach the same limit
    rng = np.random.default_rng(seed)
    G = make_subspace(rng.standard_normal((trace.d, k)))
    B2, _, n2 = _converged_push(trace, lambda t: G, step, avail, tol)
    if gap_distance(E, Subspace(B2[n2 + 1])) > 1e-6:
        raise NoConvergence("limit depends on the initial subspace: top exponents not separated")
    hist = hist[: n_conv + 1]
    return PushForwardResult(make_subspace(E.basis), _fit_rate(hist), hist, n_conv + 1)


def push_forward_family(trace, start, stop, E0=None, k=None, cone_family=None, tol=PUSH_TOL):
    """Invariant top bundle on steps ``start..stop``.

    The fibre at ``start`` is a push-forward limit; later fibres are its
    images, which is stable because the bundle attracts forward.
    """
    earliest = None
    if E0 is None and cone_family is not None:
        E0 = lambda j: cone_family.cone(j).splitting.E
        earliest = cone_family.lo
    res = push_forward_top_space(trace, E0=E0, k=k, step=start, tol=tol, earliest=earliest)
    out = [res.E]
    hi = trace.window[1]
    if stop > hi:
        raise WindowExceeded(f"family end {stop} beyond window end {hi}")
    for j in range(start, stop):
        out.append(span_image(trace.A(j), out[-1]))
    return out, res


# ---------------------------------------------------------------------------
# graph transform

class ComplementResult(NamedTuple):
    """Invariant complements with the truncation used and its certificate."""

    F: list
    window: int
    term_norms: np.ndarray
    tail_bound: float


def _blocks(trace, e0, f0, e1, f1, t):
    # coordinates of A(theta^t omega) in the frames (E, F0) at t and t + 1
    W1 = np.linalg.inv(np.hstack([e1, f1]))
    M = W1 @ trace.A(t) @ np.hstack([e0, f0])
    k = e0.shape[1]
    return M[:k, :k], M[:k, k:], M[k:, k:]


def _term_norms(blocks, n_max):
    # norms of (T^{n+1}|_E)^{-1} H_n G_{n-1} ... G_0 with separate log scales
    ME, H, G = blocks[0]
    k, m = H.shape
    Linv = np.eye(k)
    Gacc = np.eye(m)
    sL = sG = 0.0
    out = []
    for n in range(min(n_max, len(blocks))):
        ME, H, G = blocks[n]
        Linv = Linv @ np.linalg.inv(ME)
        a = np.abs(Linv).max()
        Linv /= a
        sL += np.log(a)
        T = Linv @ H @ Gacc
        nt = np.linalg.norm(T, 2)
        out.append(0.0 if nt == 0.0 else np.exp(sL + sG + np.log(nt)))
        Gacc = G @ Gacc
        b = np.abs(Gacc).max()
        if b == 0.0:
            out.extend([0.0] * (min(n_max, len(blocks)) - n - 1))
            break
        Gacc /= b
        sG += np.log(b)
    return np.array(out)


def _series_window(norms, tol):
    # first index with a negligible term; divergence if ten terms fail to decay
    for n, t in enumerate(norms):
        if t < tol:
            return n
        if n >= 10 and t >= norms[n - 10]:
            raise SeriesDiverging(f"series terms stopped decaying at term {n} (norm {t:.3g})")
    raise WindowExceeded("series did not reach its tolerance inside the window")


def graph_transform_complement(trace, E, F0=None, start=0, stop=None, window=None,
                               cone_family=None, tol=SERIES_TOL):
    """Invariant complement of an invariant family ``E`` as a graph over ``F0``.

    The map ``Psi : F0 -> E`` solves ``Psi_{t+1} G_t = H_t + M_t Psi_t`` with
    ``M, H, G`` the blocks of ``A`` in the frames ``(E, F0)``; its series
    ``-sum_n (T^{n+1}|_E)^{-1} H T~^n`` is evaluated by the equivalent
    backward recursion with zero data ``window`` steps ahead.

    Parameters
    ----------
    E : sequence of Subspace
        Fibres at steps ``start, start + 1, ...``.
    F0 : Subspace or callable, optional
        Reference complement; defaults to the orthogonal complement of ``E``.
    stop : int, optional
        Last step returned; defaults to the last step the window allows.
    window : int, optional
        Truncation; by default the first index whose term norm is below
        ``tol`` (maximized over a few probe steps, with a margin).
    cone_family : ConeFamily, optional
        When given, ``F`` meeting a cone outside the origin is an error.

    Returns
    -------
    ComplementResult

    Raises
    ------
    SeriesDiverging
        If term norms do not decay over ten consecutive terms.
    BoundViolation
        If the result is not invariant within ``1e-6`` or meets a cone.
    """
    E = list(E)
    end = start + len(E) - 1  # last step with a fibre
    F0_at = _as_step_fn(F0)
    if F0_at is None:
        comp = {}

        def F0_at(j):
            if j not in comp:
                comp[j] = orthogonal_complement(E[j - start])
            return comp[j]

    def frame(j):
        return E[j - start].basis, F0_at(j).basis

    blk = {}

    def block(t):
        if t not in blk:
            e0, f0 = frame(t)
            e1, f1 = frame(t + 1)
            blk[t] = _blocks(trace, e0, f0, e1, f1, t)
        return blk[t]

    if E[0].dim in (0, E[0].d):
        raise InvalidArgument("E must be a proper nontrivial subspace")
    avail = end - start
    if window is None:
        probes = sorted({start, start + avail // 4, start + avail // 2})
        Ns, norms0 = [], None
        for p in probes:
            n_max = end - p
            norms = _term_norms([block(t) for t in range(p, p + min(n_max, 4096))], n_max)
            if norms0 is None:
                norms0 = norms
            Ns.append(_series_window(norms, tol))
            if stop is not None and p >= stop:
                break
        N = int(np.ceil(1.25 * max(Ns))) + 2
    else:
        N = int(window)
        norms0 = _term_norms([block(t) for t in range(start, min(start + N + 1, end))], N + 1)
    if stop is None:
        stop = end - N
    if stop < start or stop + N > end:
        raise WindowExceeded(f"complement on [{start}, {stop}] needs fibres up to {stop + N}")
    k = E[0].dim
    psi = np.zeros((k, trace.d - k))
    psis = {}
    for t in range(stop + N - 1, start - 1, -1):
        ME, H, G = block(t)
        psi = np.linalg.solve(ME, psi @ G - H)
        if t <= stop:
            psis[t] = psi
    F = []
    for t in range(start, stop + 1):
        e, f = frame(t)
        F.append(make_subspace(f + e @ psis[t]))
    for t in range(start, stop):
        g = gap_distance(span_image(trace.A(t), F[t - start]), F[t + 1 - start])
        if g > INVARIANCE_TOL:
            raise BoundViolation(f"complement not invariant at step {t}: gap {g:.3g}")
    if cone_family is not None:
        for t in range(start, stop + 1):
            if not meets_cone_trivially(cone_family.cone(t), F[t - start]):
                raise BoundViolation(f"complement meets the cone at step {t}")
    tail = _geometric_tail(norms0, N)
    return ComplementResult(F, N, norms0, tail)


def _geometric_tail(norms, N):
    # bound on the neglected terms from the observed decay ratio
    x = np.asarray(norms[:N + 1])
    x = x[x > 0]
    if len(x) < 2:
        return 0.0
    r = float(np.exp(np.polyfit(np.arange(len(x)), np.log(x), 1)[0]))
    if r >= 1.0:
        return np.inf
    last = x[-1] if len(norms) <= N else norms[N]
    return float(last / (1.0 - r))


# ---------------------------------------------------------------------------
# dominated splittings

@dataclass(eq=False)
class SplittingFamily:
    """Invariant splittings ``E(theta^j omega) + F(theta^j omega)`` on a range of steps.

    Attributes
    ----------
    start : int
        First step.
    splittings : list of Splitting
    delta : float
        Fitted domination rate (minus the slope of the log separation product).
    K_bound : float
        Smallest ``K >= 1`` with ``log_products[n] <= log K - delta n``.
    rate_fit : float
        Least-squares slope of ``log_products``.
    log_products : ndarray
        ``log ||(T^n|_E)^{-1}|| + log ||T^n|_F||`` from ``start``.
    mean_log_tau : float
        Orbit mean of ``log tau_S`` when cones were supplied.
    chi : ndarray
        Focusing parameters used (supplied or estimated).
    notes : list of str
    """

    start: int
    splittings: list
    delta: float = np.nan
    K_bound: float = np.nan
    rate_fit: float = np.nan
    log_products: np.ndarray = None
    mean_log_tau: float = np.nan
    chi: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    @property
    def stop(self):
        return self.start + len(self.splittings) - 1

    @property
    def n_steps(self):
        return len(self.splittings) - 1

    @property
    def k(self):
        return self.splittings[0].k

    def at(self, j):
        if not self.start <= j <= self.stop:
            raise WindowExceeded(f"step {j} outside family range [{self.start}, {self.stop}]")
        return self.splittings[j - self.start]

    def E(self, j):
        return self.at(j).E

    def F(self, j):
        return self.at(j).F

    def subspaces(self, which, start, n):
        return [getattr(self.at(start + t), which) for t in range(n + 1)]

    def swapped(self):
        """Family with the roles of ``E`` and ``F`` exchanged (no fit)."""
        return SplittingFamily(self.start, [s.swapped() for s in self.splittings])


def fit_domination(log_products):
    """Least-squares slope of a log separation product and its envelope constant.

    Returns
    -------
    slope, delta, K : float
        ``delta = -slope``; ``K = max(1, max_n exp(y_n + delta n))`` so that
        ``y_n <= log K - delta n`` holds for every ``n``.
    """
    y = np.asarray(log_products, dtype=float)
    n = np.arange(len(y), dtype=float)
    if len(y) < 2:
        raise InvalidArgument("need at least two values to fit a rate")
    slope = float(np.polyfit(n, y, 1)[0])
    delta = -slope
    K = float(max(1.0, np.exp(np.max(y + delta * n))))
    return slope, delta, K


def splitting_log_products(trace, Es, Fs, start=0):
    """``log ||(T^n|_E)^{-1}|| + log ||T^n|_F||`` along the family."""
    n = len(Es) - 1
    _, iE = restricted_log_norms(trace, Es, start, n)
    fF, _ = restricted_log_norms(trace, Fs, start, n)
    return iE + fF


def family_from_bundles(trace, Es, Fs, start=0, check=True):
    """Fit a SplittingFamily to explicit invariant bundles."""
    n = min(len(Es), len(Fs))
    Es, Fs = list(Es)[:n], list(Fs)[:n]
    splittings = [make_splitting(e, f, check=check) for e, f in zip(Es, Fs)]
    y = splitting_log_products(trace, Es, Fs, start)
    slope, delta, K = fit_domination(y)
    return SplittingFamily(start, splittings, delta, K, slope, y)


def extract_dominated_splitting(trace, cone_family, start=None, check=True, tol=PUSH_TOL,
                                slack=0.05):
    """Dominated splitting from a contracting cone family.

    ``E`` is the push-forward limit of the cones' own ``E`` and ``F`` the
    graph-transform complement over the cones' ``F``. The domination rate is
    fitted by least squares and compared with the orbit mean of
    ``log tau_S``; when the family carries no ``chi``, it is estimated per
    step as the reciprocal of the image separation.

    Parameters
    ----------
    trace : OrbitTrace
        Needs steps before ``start`` for the push-forward.
    cone_family : ConeFamily
    start : int, optional
        First step of the result; 0 for unbounded families, otherwise a
        quarter of the way into the family's range.
    check : bool
        Run the contraction checker first and raise on failure.
    slack : float
        Allowed excess of the fitted slope over the mean of ``log tau_S``.

    Raises
    ------
    NotStrictlyInvariant, NotInCone, NotSeparated
        If ``check`` is set and the cones fail the contraction checks.
    BoundViolation
        If the fitted slope exceeds the mean of ``log tau_S`` plus ``slack``.
    """
    from .checkers import check_contracting, image_separations, raise_for_verdicts

    lo, hi = trace.window
    fam_hi = hi if cone_family.hi is None else min(hi, cone_family.hi)
    if start is None:
        start = 0 if cone_family.lo is None else cone_family.lo + (fam_hi - cone_family.lo) // 4
    notes = []
    if check:
        raise_for_verdicts(check_contracting(trace, cone_family, steps=range(start, fam_hi)))
    Es, _ = push_forward_family(trace, start, hi, cone_family=cone_family, tol=tol)
    F0 = lambda j: cone_family.cone(min(j, fam_hi)).splitting.F
    res = graph_transform_complement(trace, Es, F0=F0, start=start)
    Fs = res.F
    n = len(Fs) - 1
    for t in range(start, min(start + n, fam_hi) + 1):
        if not meets_cone_trivially(cone_family.cone(t), Fs[t - start]):
            raise BoundViolation(f"complement meets the cone at step {t}")
    fam = family_from_bundles(trace, Es[: n + 1], Fs, start)
    steps = range(start, min(start + n, fam_hi))
    if cone_family.has_chi:
        chi = np.array([cone_family.chi(j) for j in steps])
    else:
        sep, _ = image_separations(trace, cone_family, steps)
        chi = 1.0 / np.maximum(sep, 1e-300)
        notes.append("chi estimated per step as the reciprocal image separation")
    chi = np.maximum(chi, 1.0)
    mlt = float(np.mean(np.log(tau_from_chi(chi))))
    if fam.rate_fit > mlt + slack:
        raise BoundViolation(f"fitted slope {fam.rate_fit:.4g} exceeds mean log tau_S "
                             f"{mlt:.4g} + {slack}")
    fam.mean_log_tau = mlt
    fam.chi = chi
    fam.notes = notes + [f"complement truncated at {res.window} terms"]
    return fam


# ---------------------------------------------------------------------------
# zeta index and zeta cones

@dataclass(eq=False)
class ZetaConeData:
    """Splitting family with the rate and truncation of its zeta index.

    ``K``, ``window`` and ``tail_bound`` are the family-level values. The
    series at a given step uses the local envelope constant of the domination
    bound from that step (see ``local``), since along a random orbit the
    constant varies with the step.
    """

    trace: object
    family: SplittingFamily
    delta: float
    K: float
    window: int
    tail_bound: float
    tol: float = 1e-8
    _local: dict = field(default_factory=dict, repr=False)

    def local(self, step):
        """Envelope constant, truncation and tail factor at one step.

        The constant is the smallest ``K >= 1`` with
        ``log ||(T^n|_E)^{-1}|| ||T^n|_F|| <= log K - n delta`` for ``n`` up to
        twice the family-level truncation; the tail factor
        ``K e^{-(N+1) delta / 2} / (1 - e^{-delta / 2})`` multiplies
        ``|v^F| / |v^E|`` to bound the neglected terms.
        """
        if step not in self._local:
            fam = self.family
            M = min(2 * self.window + 8, fam.stop - step, self.trace.window[1] - step)
            K = self.K
            if M >= 1:
                y = splitting_log_products(self.trace, fam.subspaces("E", step, M),
                                           fam.subspaces("F", step, M), step)
                K = float(max(1.0, np.exp(np.max(y + self.delta * np.arange(M + 1)))))
            N, tail = _zeta_truncation(K, self.delta, self.tol)
            self._local[step] = (K, N, tail)
        return self._local[step]


def _zeta_truncation(K, delta, tol):
    r = np.exp(-0.5 * delta)
    N = max(int(np.ceil(np.log(K / (tol * (1.0 - r))) / (0.5 * delta))) - 1, 0)
    return N, float(K * r ** (N + 1) / (1.0 - r))


def make_zeta_data(trace, family, delta=None, K=None, haircut=DELTA_HAIRCUT, tol=1e-8):
    """Choose the rate and truncation of the zeta series.

    Parameters
    ----------
    delta : float, optional
        Rate in the weights ``e^{n delta / 2}``; by default the fitted rate
        of the family reduced by ``haircut``.
    K : float, optional
        Constant of the domination bound; defaults to the family's.
    tol : float
        Target for the relative tail certificate.
    """
    if delta is None:
        delta = (1.0 - haircut) * family.delta
    if not delta > 0:
        raise InvalidArgument("zeta index needs a positive domination rate")
    K = family.K_bound if K is None else float(K)
    if not np.isfinite(K):
        K = 1.0
    N, tail = _zeta_truncation(K, delta, tol)
    return ZetaConeData(trace, family, float(delta), float(K), N, tail, tol)


class ZetaValue(NamedTuple):
    value: float
    error: float


def _zeta_terms(data, step, VE, VF):
    # sum_n e^{n delta / 2} |T^n v^F| / |T^n v^E| over rows, truncated at N
    N = data.local(step)[1]
    if step + N > data.trace.window[1]:
        raise WindowExceeded(f"zeta series at step {step} needs {N} forward steps")
    w = np.exp(0.5 * data.delta)
    total = np.linalg.norm(VF, axis=1) / np.linalg.norm(VE, axis=1)
    X, Y = VE.copy(), VF.copy()
    weight = 1.0
    fam = data.family
    for t in range(step, step + N):
        A = data.trace.A(t)
        X = X @ A.T
        Y = Y @ A.T
        if t + 1 <= fam.stop:
            # keep Y on the invariant F: rounding leaks an E component that
            # the weights would amplify by e^{n delta / 2}
            Y = Y @ fam.at(t + 1).proj_F.T
        s = np.linalg.norm(X, axis=1, keepdims=True)
        X /= s
        Y /= s
        weight *= w
        total += weight * np.linalg.norm(Y, axis=1)
    return total


def zeta_rows(data, step, V, zero_tol=1e-12):
    """Zeta index of each row of ``V`` with its truncation error bound."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    s = data.family.at(step)
    VE = V @ s.proj_E.T
    VF = V @ s.proj_F.T
    nv = np.linalg.norm(V, axis=1)
    nE = np.linalg.norm(VE, axis=1)
    nF = np.linalg.norm(VF, axis=1)
    val = np.full(len(V), np.inf)
    err = np.zeros(len(V))
    inE = nF <= zero_tol * nv
    val[inE] = 0.0
    gen = ~inE & (nE > zero_tol * nv)
    if gen.any():
        val[gen] = _zeta_terms(data, step, VE[gen], VF[gen])
        err[gen] = data.local(step)[2] * nF[gen] / nE[gen]
    return val, err


def zeta_index(data, step, v):
    """Three-case zeta index: 0 on ``E``, infinity on ``F``, a weighted series otherwise.

    Returns
    -------
    ZetaValue
        The truncated series and a certified bound on the neglected tail.
    """
    val, err = zeta_rows(data, step, v)
    return ZetaValue(float(val[0]), float(err[0]))


def _line_zeta_norm(data, step):
    # for dim E = 1: zeta(v) = N_F(v^F) / |v^E| with N_F a norm on F
    s = data.family.at(step)
    x = s.E.basis[:, 0]

    def norm_F(Y):
        Y = np.atleast_2d(Y)
        X = np.repeat(x[None, :], len(Y), axis=0)
        out = np.zeros(len(Y))
        nz = np.linalg.norm(Y, axis=1) > 0
        if nz.any():
            out[nz] = _zeta_terms(data, step, X[nz], Y[nz])
        return out

    return norm_F


def build_zeta_cone(data, step, check=True, samples=256, rng=None, grid=2048):
    """The cone ``{zeta <= 1}`` at one step.

    For ``dim E = 1`` the index factors as ``N_F(v^F) / |v^E|`` and the cone
    is represented exactly (Euclidean when ``F`` is a line). Otherwise the
    boundary ``t*(x, y) = 1 / zeta(x + y)`` is sampled and the Euclidean
    splitting-norm cone with opening ``sup t*`` is returned, which contains
    the sublevel set.

    When ``check`` is set, ``zeta(A v) <= e^{-delta/2} zeta(v)`` is tested on
    random vectors up to the truncation certificates.

    Raises
    ------
    BoundViolation
        If the sampled one-step contraction fails.
    """
    s = data.family.at(step)
    k, m = s.k, s.d - s.k
    if k == 1:
        nF = _line_zeta_norm(data, step)
        if m == 1:
            c = float(nF(s.F.basis.T)[0])
            C = ConeRankK(s, 1.0 / c, kind="zeta_weighted", zeta=(data, step))
        else:
            C = ConeRankK(s, 1.0, kind="zeta_weighted", norm_F=nF, zeta=(data, step))
    else:
        n = max(int(np.sqrt(grid)), 8)
        X = sphere_grid(k, n) @ s.E.basis.T
        Y = sphere_grid(m, n) @ s.F.basis.T
        P = (X[:, None, :] + Y[None, :, :]).reshape(-1, s.d)
        z, _ = zeta_rows(data, step, P)
        C = ConeRankK(s, float(np.max(1.0 / z)), kind="zeta_weighted", zeta=(data, step))
    if check:
        zeta_contraction_defect(data, step, samples=samples, rng=rng, raise_on_fail=True)
    return C


def zeta_contraction_defect(data, step, samples=256, rng=None, raise_on_fail=False):
    """Largest ``zeta(A v) - e^{-delta/2} zeta(v) - slack`` over random ``v``.

    The slack is the sum of both truncation certificates; a nonpositive
    result means the one-step contraction holds on every sample.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    V = rng.standard_normal((samples, data.trace.d))
    z0, e0 = zeta_rows(data, step, V)
    z1, e1 = zeta_rows(data, step + 1, V @ data.trace.A(step).T)
    ok = np.isfinite(z0)
    r = np.exp(-0.5 * data.delta)
    slack = e1 + r * e0 + 1e-12 * (1.0 + z0)
    excess = np.where(ok, z1 - r * z0 - slack, -np.inf)
    worst = float(np.max(excess)) if ok.any() else -np.inf
    if raise_on_fail and worst > 0:
        raise BoundViolation(f"zeta contraction fails by {worst:.3g}")
    return worst


def zeta_lipschitz_chi(family, step):
    """Focusing parameter certifying strict contraction of zeta cones when ``dim E = 1``.

    ``max{8 |pi_E|, 32 K (|pi_E| + 1)^2 / ((1 - e^{-delta/2})(1 - e^{-delta}))}``
    with the projection norm taken at the next step.
    """
    pE = operator_norm(family.at(step + 1).proj_E)
    d = family.delta
    K = family.K_bound
    return max(8.0 * pE, 32.0 * K * (pE + 1.0) ** 2 / ((1.0 - np.exp(-0.5 * d)) * (1.0 - np.exp(-d))))


# ---------------------------------------------------------------------------
# MET decomposition

def cluster_exponents(spectrum, stderr, gap=MERGE_GAP):
    """Group sorted exponents whose consecutive gaps are at most ``gap``."""
    groups = [[0]]
    for i in range(1, len(spectrum)):
        if spectrum[i - 1] - spectrum[i] > gap:
            groups.append([i])
        else:
            groups[-1].append(i)
    exps = np.array([np.mean(spectrum[g]) for g in groups])
    errs = np.array([np.max(stderr[g]) for g in groups])
    dims = tuple(len(g) for g in groups)
    return exps, errs, dims


def met_decomposition(trace, start=None, stop=None, gap=MERGE_GAP, eps=None):
    """Oseledets blocks ``E_1, ..., E_m`` on steps ``start..stop``.

    For each cluster boundary the top space ``U_c`` is a push-forward limit
    and its invariant complement ``F_c`` a graph transform over
    ``U_c^perp``; the blocks are ``E_c = pi_{U_c} F_{c-1}`` with the
    projection along ``F_c``.

    Parameters
    ----------
    start, stop : int, optional
        Default to the middle half of the trace window.
    gap : float
        Exponents closer than this are merged into one block.
    eps : array_like, optional
        Per-block slack stored with the result; default a tenth of the
        adjacent gaps.
    """
    rep = lyapunov_spectrum(trace)
    exps, errs, dims = cluster_exponents(rep.spectrum, rep.stderr, gap)
    lo, hi = trace.window
    if start is None:
        start = lo + (hi - lo) // 4
    if stop is None:
        stop = lo + (hi - lo) // 2
    m = len(dims)
    eps = default_eps(exps) if eps is None else np.broadcast_to(np.asarray(eps, float), (m,))
    if m == 1:
        whole = Subspace(np.eye(trace.d))
        blocks = {j: [whole] for j in range(start, stop + 1)}
        return METDecomposition(exps, errs, dims, blocks, np.asarray(eps, float))
    cum = np.cumsum(dims)
    splits = []
    for c in range(m - 1):
        U, _ = push_forward_family(trace, start, hi, k=int(cum[c]))
        res = graph_transform_complement(trace, U, start=start, stop=stop)
        splits.append([make_splitting(U[j - start], res.F[j - start], check=False)
                       for j in range(start, stop + 1)])
    blocks = {}
    for j in range(start, stop + 1):
        t = j - start
        bl = [splits[0][t].E]
        for c in range(1, m - 1):
            Fprev = splits[c - 1][t].F
            B = splits[c][t].proj_E @ Fprev.basis
            Ub = np.linalg.svd(B)[0][:, : dims[c]]
            bl.append(make_subspace(Ub))
        bl.append(splits[m - 2][t].F)
        blocks[j] = bl
    return METDecomposition(exps, errs, dims, blocks, np.asarray(eps, float))


# ---------------------------------------------------------------------------
# nested Lyapunov-norm cones

@dataclass(eq=False)
class NestedCones:
    """Cones ``C_i^{l_i}`` on a range of steps with their certificates.

    Attributes
    ----------
    levels : tuple of int
    steps : range
    cones : dict
        ``cones[i, j]`` is the cone of level ``i`` at step ``j``.
    norms : dict
        The Lyapunov norms behind each cone.
    openings : dict
        ``openings[i, j]``.
    chi : dict
        ``chi[i, j]``: reciprocal of the guaranteed separation of
        ``A C_i^l(j)`` from the complement of ``C_i^{l e^{-eps_i}}(j + 1)``.
    eps : ndarray
    """

    met: METDecomposition
    levels: tuple
    steps: range
    cones: dict
    norms: dict
    openings: dict
    chi: dict
    eps: np.ndarray

    def family(self, level):
        """The cones of one level as a ConeFamily."""
        from .cones import ConeFamily
        return ConeFamily(lambda j: self.cones[level, j],
                          lambda j: self.chi.get((level, j), np.nan))


def _line_scale(norm, S):
    # a norm restricted to a line is a multiple of the Euclidean norm
    v = S.basis[:, 0]
    return float(norm(v[None, :])[0])


def lyapunov_cone(L, split, opening):
    """Splitting-norm cone from the component norms of a Lyapunov norm.

    A component norm on a line is a multiple of the Euclidean norm; planar
    cones therefore come out Euclidean with opening ``l c_E / c_F``.
    """
    lines = [S.dim == 1 for S in (split.E, split.F)]
    comps = [L.upper_norm, L.lower_norm]
    if all(lines):
        cE = _line_scale(comps[0], split.E)
        cF = _line_scale(comps[1], split.F)
        return ConeRankK(split, float(opening) * cE / cF, kind="lyapunov_norm")
    fns = []
    for S, line, nrm in zip((split.E, split.F), lines, comps):
        if line:
            c = _line_scale(nrm, S)
            fns.append(lambda X, c=c: c * np.linalg.norm(X, axis=1))
        else:
            fns.append(nrm)
    return ConeRankK(split, float(opening), kind="lyapunov_norm", norm_E=fns[0], norm_F=fns[1])


def separation_chi(level, opening, lam, eps, K_next, proj_max_next):
    """Reciprocal separation guaranteed for Lyapunov-norm cones of one level.

    ``(1 + (l i + e^{eps_i})(e^{eps_i} + l) / (l (e^{lam_i - lam_{i+1} - eps_i - eps_{i+1}} - e^{eps_i})))
    * K_i(theta omega) * max_j |pi_j^i(theta omega)|`` with 1-based level ``i``.

    Raises
    ------
    GapTooSmall
        If the slack leaves no room: ``lam_i - lam_{i+1} <= 2 eps_i + eps_{i+1}``.
    """
    i = level
    li, lj = lam[i - 1], lam[i]
    ei, ej = eps[i - 1], eps[i]
    den = opening * (np.exp(li - lj - ei - ej) - np.exp(ei))
    if den <= 0:
        raise GapTooSmall("slack too large for the spectral gap")
    num = (opening * i + np.exp(ei)) * (np.exp(ei) + opening)
    return float((1.0 + num / den) * K_next * proj_max_next)


def build_nested_cones(trace, met, levels=None, openings=None, steps=None, eps=None,
                       check=True, samples=256, rng=None):
    """Nested cones ``C_1 in C_2 in ...`` from Lyapunov norms.

    Level ``i`` uses the splitting ``(E_1 + ... + E_i, E_{i+1} + ...)`` and the
    cone ``{|pi_{i+1} v|_i <= l_i |v - pi_{i+1} v|_i}``. The first opening is
    ``openings[0]`` (default 1); each further one is at least
    ``K_{i+1} K_i |pi^{i+1}_{i+2}| l_i``, smoothed along the orbit so that
    consecutive values differ by at most ``e^{eps_{i+1}}``.

    Parameters
    ----------
    met : METDecomposition
    levels : sequence of int, optional
        1-based levels; default all.
    openings : sequence of float, optional
        Requested openings per level; raised to the recursion bound if
        smaller.
    steps : iterable of int, optional
        Steps to build; default ``[0]``. ``chi`` is filled for steps whose
        successor is also built.
    check : bool
        Assert nesting on sampled vectors.

    Raises
    ------
    GapTooSmall
        If a used gap is below ``1e-3``.
    BoundViolation
        If sampled nesting fails.
    """
    m = met.n_blocks
    if m < 2:
        raise GapTooSmall("need at least two separated exponents")
    lam = np.asarray(met.exponents, dtype=float)
    if np.min(-np.diff(lam)) < MERGE_GAP:
        raise GapTooSmall("adjacent exponents closer than 1e-3")
    levels = tuple(range(1, m)) if levels is None else tuple(sorted(levels))
    if levels[0] < 1 or levels[-1] >= m:
        raise InvalidArgument(f"levels must lie in 1..{m - 1}")
    steps = range(0, 1) if steps is None else steps
    steps = list(steps)
    eps = met.eps if eps is None else np.broadcast_to(np.asarray(eps, float), (m,))
    norms, splits, Ks, pmax = {}, {}, {}, {}
    for i in levels:
        for j in steps:
            L = lyapunov_norm_at(trace, met, i, step=j, eps=eps)
            norms[i, j] = L
            Ks[i, j] = L.K
            pmax[i, j] = max(operator_norm(P) for P in L.projections)
            splits[i, j] = make_splitting(met.upper(i, j), met.lower(i, j), check=False)
    # opening recursion
    openings_out = {}
    prev = None
    for idx, i in enumerate(levels):
        req = None if openings is None or idx >= len(openings) else float(openings[idx])
        if prev is None:
            vals = {j: (1.0 if req is None else req) for j in steps}
        else:
            pi_prev, i_prev = prev
            raw = np.array([Ks[i, j] * Ks[i_prev, j]
                            * operator_norm(norms[i, j].projections[-1]) * pi_prev[j]
                            for j in steps])
            smooth = _windowed_max(raw, eps[i - 1], steps)
            vals = {j: max(smooth[t], req or 0.0) for t, j in enumerate(steps)}
        for j in steps:
            openings_out[i, j] = vals[j]
        prev = (vals, i)
    cones = {(i, j): lyapunov_cone(norms[i, j], splits[i, j], openings_out[i, j])
             for i in levels for j in steps}
    chi = {}
    step_set = set(steps)
    for i in levels:
        for j in steps:
            if j + 1 in step_set:
                chi[i, j] = separation_chi(i, openings_out[i, j], lam, eps, Ks[i, j + 1],
                                           pmax[i, j + 1])
    if check and len(levels) > 1:
        rng = np.random.default_rng(0) if rng is None else rng
        from .cones import sample_cone
        for a, b in zip(levels[:-1], levels[1:]):
            for j in steps:
                V = sample_cone(cones[a, j], rng, samples)
                worst = float(np.min(cones[b, j].margin(V)))
                if worst < -1e-9:
                    raise BoundViolation(f"cone of level {a} leaves level {b} at step {j}")
    return NestedCones(met, levels, range(min(steps), max(steps) + 1), cones, norms,
                       openings_out, chi, np.asarray(eps, float))


def _windowed_max(raw, eps, steps):
    # smallest sequence above raw whose consecutive ratios stay in [e^-eps, e^eps]
    g = np.log(raw)
    fw, bw = g.copy(), g.copy()
    for t in range(1, len(g)):
        fw[t] = max(g[t], fw[t - 1] - eps)
    for t in range(len(g) - 2, -1, -1):
        bw[t] = max(g[t], bw[t + 1] - eps)
    return np.exp(np.maximum(fw, bw))
