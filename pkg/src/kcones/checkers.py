"""Verdicts for cone and splitting conditions on sampled orbits.

Each checker returns ``Verdict`` objects with per-step margins; a condition
passes when its smallest margin is nonnegative. Geometric quantities of
constant cone families are cached per distinct matrix.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._sphere import minimize_on_sphere
from .cocycle import (bundle_exponents, cocycle_product, restricted_log_norms,
                      scaled_product, top_lyapunov)
from .cones import (ConeFamily, ImageCone, cone_separation, family_from_steps, sample_cone)
from .errors import (EmptyReturnSet, InvalidArgument, KConesError, NotInCone,
                     NotInvariant, NotSeparated, NotStrictlyInvariant, WindowExceeded)
from .splitting import (build_nested_cones, build_zeta_cone, extract_dominated_splitting,
                        fit_domination, make_zeta_data, met_decomposition,
                        zeta_lipschitz_chi)
from .subspaces import (gap_distance, is_injective, operator_norm, separation_index,
                        span_image, subspace_distance)

CONDITIONS = ("C1", "C2", "C3", "C3'", "C4", "D1", "D2", "D3", "D3'")
BOUNDARY_SAMPLES = 256
INTERIOR_SAMPLES = 64
CONTAIN_TOL = 1e-12
TEMPER_TOL = 1e-2
DELTA_MIN = 1e-3
KAC_FLOOR = 0.01
INVARIANCE_TOL = 1e-6


@dataclass
class Verdict:
    """Outcome of one condition on a sampled orbit.

    Attributes
    ----------
    condition_id : str
    margins : ndarray
        Per-step (or per-item) margins; the verdict passes iff all are >= 0.
    witness : tuple, optional
        ``(step, vector)`` of the worst violation, present iff failed.
    notes : list of str
    data : dict
        Fitted numbers behind the margins.
    """

    condition_id: str
    margins: np.ndarray
    witness: Optional[tuple] = None
    notes: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.condition_id not in CONDITIONS:
            raise InvalidArgument(f"unknown condition {self.condition_id!r}")
        self.margins = np.asarray(self.margins, dtype=float).ravel()
        if self.passed:
            self.witness = None
        elif self.witness is None:
            self.witness = (int(np.argmin(self.margins)), None)

    @property
    def passed(self):
        return bool(self.margins.size == 0 or np.min(self.margins) >= 0.0)

    @property
    def min_margin(self):
        return float(np.min(self.margins)) if self.margins.size else np.inf


_ERRORS = {"C1": NotStrictlyInvariant, "C2": NotInCone, "C3": NotStrictlyInvariant,
           "C4": NotSeparated, "C3'": NotStrictlyInvariant, "D1": NotInvariant,
           "D2": KConesError, "D3": KConesError, "D3'": KConesError}


def raise_for_verdicts(verdicts):
    """Raise the error matching the first failed verdict."""
    for v in verdicts:
        if not v.passed:
            raise _ERRORS[v.condition_id](
                f"{v.condition_id} fails (margin {v.min_margin:.3g} at {v.witness[0]})")
    return verdicts


def _worst(margins, steps, vectors=None):
    i = int(np.argmin(margins))
    vec = None if vectors is None else vectors[i]
    return (int(list(steps)[i]), vec)


def _cone_key(C):
    # Euclidean cones are determined by their quadric; others by identity
    if C.euclidean:
        return np.round(C.quadric_matrix(), 12).tobytes()
    return id(C)


def _cache_key(M, C0, C1):
    return (np.round(M, 14).tobytes(), _cone_key(C0), _cone_key(C1))


# ---------------------------------------------------------------------------
# geometry along the orbit

def image_separations(trace, cone_family, steps, m=1, cache=None):
    """Separation of ``T^m(theta^j omega) C_j`` from the complement of ``C_{j+m}``.

    Returns
    -------
    seps : ndarray
    witnesses : list of ndarray
    """
    cache = {} if cache is None else cache
    seps, wits = [], []
    for j in steps:
        C0, C1 = cone_family.cone(j), cone_family.cone(j + m)
        _, M = scaled_product(trace, j, m)
        key = _cache_key(M, C0, C1)
        if key not in cache:
            cache[key] = cone_separation(ImageCone(C0, M), C1.complement())
        s, w = cache[key]
        seps.append(s)
        wits.append(w)
    return np.array(seps), wits


def _containment_margin(C0, C1, A, rng):
    U = np.vstack([C0.boundary_lines(BOUNDARY_SAMPLES), sample_cone(C0, rng, INTERIOR_SAMPLES)])
    W = U @ A.T
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    m = C1.margin(W)
    i = int(np.argmin(m))
    return float(m[i]) + CONTAIN_TOL, U[i]


def _trailing_slope(values):
    f = np.asarray(values, dtype=float)
    h = len(f) // 2
    x = np.arange(h, len(f), dtype=float)
    if len(x) < 2:
        return 0.0
    return float(np.polyfit(x, np.log(f[h:]), 1)[0])


def _resolve_chi(cone_family, chi, steps, seps, notes):
    steps = list(steps)
    if chi is not None:
        c = np.broadcast_to(np.asarray(chi, dtype=float), (len(steps),)).copy()
    elif cone_family.has_chi:
        c = np.array([cone_family.chi(j) for j in steps])
    else:
        c = 1.0 / np.maximum(seps, 1e-300)
        notes.append("chi estimated as the reciprocal sampled separation")
    return np.maximum(c, 1.0)


def _default_steps(trace, cone_family, margin=1):
    lo, hi = 0, trace.window[1] - margin
    if cone_family.lo is not None:
        lo = max(lo, cone_family.lo)
    if cone_family.hi is not None:
        hi = min(hi, cone_family.hi - margin + 1)
    return range(lo, hi)


def check_contracting(trace, cone_family, splitting0=None, chi=None, steps=None,
                      temper_tol=TEMPER_TOL, seed=0):
    """Verdicts C1, C2, C3 and C4 for a cone family along a trace.

    Parameters
    ----------
    cone_family : ConeFamily
    splitting0 : callable, optional
        Maps a step to the reference splitting ``E0 + F0``; defaults to the
        cone's own splitting.
    chi : float or array_like, optional
        Focusing parameters per step; defaults to the family's, else they
        are estimated (and C3 then reduces to strict invariance).
    steps : iterable of int, optional
        Steps ``j`` checked; each needs ``C_j`` and ``C_{j+1}``.

    Returns
    -------
    list of Verdict
        In the order C1, C2, C3, C4.
    """
    steps = list(_default_steps(trace, cone_family) if steps is None else steps)
    if not steps:
        raise InvalidArgument("no steps to check")
    rng = np.random.default_rng(seed)
    notes = []
    if splitting0 is None:
        notes.append("E0 and F0 taken from the cones' own splittings")
    cache_c1, cache_c2, cache_sep, cache_c4 = {}, {}, {}, {}
    c1, c1w, c2, c2w, c4 = [], [], [], [], []
    for j in steps:
        C0, C1 = cone_family.cone(j), cone_family.cone(j + 1)
        A = trace.A(j)
        key = _cache_key(A / np.abs(A).max(), C0, C1)
        if key not in cache_c1:
            cache_c1[key] = _containment_margin(C0, C1, A, rng)
        m, w = cache_c1[key]
        c1.append(m)
        c1w.append(w)
        s0 = C0.splitting if splitting0 is None else splitting0(j)
        k2 = (_cone_key(C0), np.round(s0.proj_E, 12).tobytes())
        if k2 not in cache_c2:
            mE, wE = minimize_on_sphere(lambda a: C0.margin(a @ s0.E.basis.T), s0.E.dim, n=512)
            mF, wF = minimize_on_sphere(lambda a: -C0.margin(a @ s0.F.basis.T), s0.F.dim, n=512)
            cache_c2[k2] = (mE, wE @ s0.E.basis.T) if mE <= mF else (mF, wF @ s0.F.basis.T)
            cache_c4[k2] = separation_index(s0.F, C0, grid=1024)
        c2.append(cache_c2[k2][0])
        c2w.append(cache_c2[k2][1])
        c4.append(cache_c4[k2])
    seps, sw = image_separations(trace, cone_family, steps, cache=cache_sep)
    chi_v = _resolve_chi(cone_family, chi, steps, seps, notes)
    if chi is None and not cone_family.has_chi:
        # estimated chi makes the bound tautological: test strictness only
        m3 = seps - CONTAIN_TOL
    else:
        m3 = seps - 1.0 / chi_v
    data3 = {"separation": seps, "chi": chi_v}
    notes3 = list(notes)
    if len(chi_v) >= 100:
        slope = _trailing_slope(chi_v)
        data3["chi_slope"] = slope
        m3 = np.append(m3, temper_tol - abs(slope))
    else:
        notes3.append("fewer than 100 steps: temperedness of chi not assessed")
    m4 = np.array(c4) - 1.0 / chi_v
    out = [
        Verdict("C1", c1, None if min(c1) >= 0 else _worst(c1, steps, c1w), list(notes)),
        Verdict("C2", c2, None if min(c2) >= 0 else _worst(c2, steps, c2w), list(notes)),
        Verdict("C3", m3, None if np.min(m3) >= 0 else
                _worst(m3[: len(steps)], steps, sw), notes3, data3),
        Verdict("C4", m4, None if np.min(m4) >= 0 else _worst(m4, steps), list(notes),
                {"separation": np.array(c4)}),
    ]
    return out


def check_eventually_contracting(trace, cone_family, chi=None, window=10, steps=None):
    """Verdict C3' and the contraction times ``N(theta^j omega)``.

    ``N`` at step ``j`` is the least ``m <= window`` such that
    ``T^{m'}(theta^j omega) C_j`` is separated from the complement of
    ``C_{j+m'}`` by at least ``1 / chi(theta^{j+m'} omega)`` for every ``m'``
    from ``m`` to ``window``.

    Returns
    -------
    verdict : Verdict
    N : ndarray of int
        ``-1`` where no ``m`` inside the window works.
    """
    steps = list(_default_steps(trace, cone_family, margin=window) if steps is None else steps)
    if not steps:
        raise InvalidArgument("no steps to check")
    cache = {}
    notes = []
    sep = np.empty((len(steps), window))
    for m in range(1, window + 1):
        s, _ = image_separations(trace, cone_family, steps, m=m, cache=cache)
        sep[:, m - 1] = s
    if chi is not None:
        c = np.asarray(chi, dtype=float)
        chi_at = (lambda j: float(c)) if c.ndim == 0 else (lambda j: float(c[j - steps[0]]))
    elif cone_family.has_chi:
        chi_at = cone_family.chi
    else:
        chi_at = None
        notes.append("chi estimated as the reciprocal of the last separation in the window")
    marg = np.empty_like(sep)
    for a, j in enumerate(steps):
        for m in range(1, window + 1):
            if chi_at is None:
                cj = 1.0 / max(sep[a, -1], 1e-300)
            else:
                cj = max(chi_at(j + m), 1.0)
            marg[a, m - 1] = sep[a, m - 1] - 1.0 / cj
    N = np.full(len(steps), -1, dtype=int)
    margins = np.empty(len(steps))
    for a in range(len(steps)):
        tail_ok = np.minimum.accumulate(marg[a, ::-1])[::-1]  # min over m' >= m
        good = np.nonzero(tail_ok >= 0)[0]
        if good.size:
            N[a] = int(good[0]) + 1
            margins[a] = tail_ok[good[0]]
        else:
            margins[a] = tail_ok[-1]
    wit = None if np.min(margins) >= 0 else _worst(margins, steps)
    v = Verdict("C3'", margins, wit, notes, {"N": N, "window": window})
    return v, N


def check_dominated(trace, family, n=None, temper_tol=TEMPER_TOL, delta_min=DELTA_MIN):
    """Verdicts D1, D2 and D3 for a splitting family along a trace.

    D1 compares ``A E_j``, ``A F_j`` with the next fibres; D2 fits the growth
    of ``1 / dist(E, F)``, ``|pi_E|`` and ``|pi_F|``; D3 fits
    ``log ||(T^n|_E)^{-1}|| ||T^n|_F||`` by least squares and requires the
    fitted rate ``delta`` to exceed ``delta_min``.
    """
    start = family.start
    n = min(family.n_steps, trace.window[1] - start) if n is None else n
    steps = range(start, start + n)
    d1 = []
    for j in steps:
        gE = gap_distance(span_image(trace.A(j), family.E(j)), family.E(j + 1))
        gF = gap_distance(span_image(trace.A(j), family.F(j)), family.F(j + 1))
        d1.append(INVARIANCE_TOL - max(gE, gF))
    notes2 = []
    fib = range(start, start + n + 1)
    sep = np.array([subspace_distance(family.E(j), family.F(j)) for j in fib])
    pE = np.array([operator_norm(family.at(j).proj_E) for j in fib])
    pF = np.array([operator_norm(family.at(j).proj_F) for j in fib])
    slopes = {"dist": _trailing_slope(1.0 / sep), "pi_E": _trailing_slope(pE),
              "pi_F": _trailing_slope(pF)}
    if n + 1 < 100:
        notes2.append("fewer than 100 steps: slopes are indicative only")
    d2 = [temper_tol - abs(s) for s in slopes.values()]
    Es = family.subspaces("E", start, n)
    Fs = family.subspaces("F", start, n)
    _, iE = restricted_log_norms(trace, Es, start, n)
    fF, _ = restricted_log_norms(trace, Fs, start, n)
    y = iE + fF
    slope, delta, K = fit_domination(y)
    env = np.log(K) - delta * np.arange(len(y)) - y
    d3 = np.concatenate([[delta - delta_min], env + 1e-12])
    return [
        Verdict("D1", d1, None if min(d1) >= 0 else _worst(d1, steps)),
        Verdict("D2", d2, None if min(d2) >= 0 else (start, None), notes2, {"slopes": slopes}),
        Verdict("D3", d3, None if np.min(d3) >= 0 else (start, None), [],
                {"slope": slope, "delta": delta, "K": K}),
    ]


@dataclass
class ReturnSystemData:
    """Return times to ``{m <= N <= n}`` along the orbit.

    Attributes
    ----------
    set_window : tuple of int
    return_times : ndarray of int
        ``n_j`` with ``n_0 = 0``, strictly increasing.
    first_returns : ndarray of int
        Gaps between consecutive returns.
    kac_frequency : float
        Trailing-window minimum of ``j / n_j`` over the last third.
    """

    set_window: tuple
    return_times: np.ndarray
    first_returns: np.ndarray
    kac_frequency: float


def check_dominated_in_probability(trace, family, set_window, N_estimates, start=0,
                                   delta_min=DELTA_MIN, kac_floor=KAC_FLOOR):
    """Verdict D3' along the return times to ``{m <= N <= n}``.

    Parameters
    ----------
    N_estimates : array_like of int
        Contraction times from ``check_eventually_contracting`` for steps
        ``start, start + 1, ...``.

    Raises
    ------
    EmptyReturnSet
        If no step lands in the set.
    """
    m, n = set_window
    N = np.asarray(N_estimates)
    hits = np.nonzero((N >= m) & (N <= n))[0] + start
    last = min(family.stop, trace.window[1])
    hits = hits[(hits >= family.start) & (hits <= last)]
    if hits.size == 0:
        raise EmptyReturnSet(f"no step with {m} <= N <= {n}")
    r0 = int(hits[0])
    nj = hits - r0
    span = int(nj[-1])
    Es = family.subspaces("E", r0, span)
    Fs = family.subspaces("F", r0, span)
    _, iE = restricted_log_norms(trace, Es, r0, span)
    fF, _ = restricted_log_norms(trace, Fs, r0, span)
    y = (iE + fF)[nj]
    notes = []
    if len(y) >= 2:
        slope, delta, K = fit_domination(y)
        env = np.log(K) - delta * np.arange(len(y)) - y
    else:
        slope, delta, K, env = np.nan, -np.inf, 1.0, np.zeros(1)
        notes.append("a single return: no rate can be fitted")
    j = np.arange(1, len(nj))
    ratio = j / nj[1:] if len(j) else np.array([0.0])
    tail = ratio[len(ratio) - max(len(ratio) // 3, 1):]
    kac = float(np.min(tail))
    data = ReturnSystemData((m, n), nj, np.diff(nj), kac)
    margins = np.concatenate([[delta - delta_min, kac - kac_floor], env + 1e-12])
    v = Verdict("D3'", margins, None if np.min(margins) >= 0 else (r0, None), notes,
                {"slope": slope, "delta": delta, "K": K, "kac_frequency": kac})
    return v, data


# ---------------------------------------------------------------------------
# round trips between cones and splittings

@dataclass
class RoundTripReport:
    """Cone to splitting to cone (or splitting to cone to splitting) round trip.

    ``gaps[t]`` is the larger of the gaps between the two ``E`` fibres and the
    two ``F`` fibres at step ``steps[t]``.
    """

    k: int
    verdicts: list
    steps: np.ndarray
    gaps: np.ndarray
    families: tuple
    notes: list = field(default_factory=list)

    @property
    def max_gap(self):
        return float(np.max(self.gaps)) if self.gaps.size else 0.0

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts)


def eventual_chi(family, j, delta, eps=None):
    """Focusing parameter for eventual contraction of zeta cones at step ``j``.

    ``(|pi_E| + 1) max{4, 2 (1 + K e^{-delta/2 + eps} / (1 - e^{-delta/2 + eps}))}``
    with ``eps = delta / 10`` by default.
    """
    eps = 0.1 * delta if eps is None else eps
    q = np.exp(-0.5 * delta + eps)
    B = 1.0 + family.K_bound * q / (1.0 - q)
    return (operator_norm(family.at(j).proj_E) + 1.0) * max(4.0, 2.0 * B)


def zeta_cone_family(trace, family, data=None, steps=None):
    """Zeta cones on a range of steps, as a ConeFamily."""
    data = make_zeta_data(trace, family) if data is None else data
    hi = min(family.stop - 1, trace.window[1] - data.window - 1)
    steps = range(family.start, hi + 1) if steps is None else steps
    steps = list(steps)
    if not steps:
        raise WindowExceeded("no step leaves room for the zeta series")
    cones = []
    for j in steps:
        try:
            cones.append(build_zeta_cone(data, j))
        except WindowExceeded:
            # a large local constant can need a longer series near the end
            if not cones:
                raise
            break
    return family_from_steps(cones, start=steps[0]), data


def roundtrip_report(trace, start, window=10):
    """Close the loop between contracting cones and dominated splittings.

    From a cone family: extract the splitting, build zeta cones from it and
    extract again. From a splitting family: build zeta cones and extract.
    For ``k = 1`` strict contraction of the zeta cones is certified with the
    Lipschitz ``chi``; for larger ``k`` eventual contraction is checked.

    Parameters
    ----------
    start : ConeFamily or SplittingFamily
        Must pass its own checker.

    Raises
    ------
    KConesError
        If the starting object fails its checker.
    """
    notes = []
    verdicts = []
    if isinstance(start, ConeFamily):
        fam1 = extract_dominated_splitting(trace, start, check=True)
        notes.append("start: cone family")
    else:
        raise_for_verdicts(check_dominated(trace, start))
        fam1 = start
        notes.append("start: splitting family")
    verdicts += check_dominated(trace, fam1)
    zfam, data = zeta_cone_family(trace, fam1)
    k = fam1.k
    zsteps = range(zfam.lo, zfam.hi)
    if k == 1:
        chi = np.array([zeta_lipschitz_chi(fam1, j) for j in zsteps])
        zfam.chi_at = lambda j, c=chi, s=zfam.lo: c[j - s]
        verdicts += check_contracting(trace, zfam, steps=zsteps)
        fam2 = extract_dominated_splitting(trace, zfam, check=False)
    else:
        esteps = range(zfam.lo, zfam.hi - window + 1)
        chi = np.array([eventual_chi(fam1, j, data.delta) for j in range(zfam.lo, zfam.hi + 1)])
        v, _ = check_eventually_contracting(trace, zfam, chi=chi, window=window, steps=esteps)
        verdicts.append(v)
        notes.append("k > 1: eventual contraction checked, strict contraction not asserted")
        fam2 = extract_dominated_splitting(trace, zfam, check=False)
    lo = max(fam1.start, fam2.start)
    hi = min(fam1.stop, fam2.stop)
    steps = np.arange(lo, hi + 1)
    gaps = np.array([max(gap_distance(fam1.E(j), fam2.E(j)), gap_distance(fam1.F(j), fam2.F(j)))
                     for j in steps])
    return RoundTripReport(k, verdicts, steps, gaps, (fam1, fam2), notes)


theoremB_roundtrip = roundtrip_report


@dataclass
class EquivalenceReport:
    """Which links of the cone/splitting/exponent equivalence were witnessed.

    ``witnessed`` maps each of ``"a"`` (contracting cones), ``"b"`` (dominated
    splitting), ``"c"`` (eventually contracting cones), ``"d"`` (dominated
    splitting in probability) and ``"e"`` (top exponent above the essential
    exponent, which is minus infinity in finite dimension) to a boolean.
    """

    k: int
    lambda_top: float
    witnessed: dict
    verdicts: list
    notes: list = field(default_factory=list)


def equivalence_probe(trace, k=None, steps=96, window=10):
    """Run the chain a -> b -> c -> d -> e -> a on one trace.

    Parameters
    ----------
    k : int, optional
        Rank of the cones; defaults to the dimension of the top Oseledets block.
    steps : int
        Number of orbit steps on which the Lyapunov-norm cones are built.

    Raises
    ------
    InvalidArgument
        If a matrix is singular or the top exponent is not finite.
    """
    for j in range(*trace.window):
        if not is_injective(trace.A(j)):
            raise InvalidArgument(f"matrix at step {j} is not injective")
    lam, _ = top_lyapunov(trace)
    if not np.isfinite(lam):
        raise InvalidArgument("top exponent is not finite")
    w = {"e": True, "a": False, "b": False, "c": False, "d": False}
    notes = ["essential exponent is minus infinity in finite dimension"]
    verdicts = []
    lo, hi = trace.window
    q = max((hi - lo) // 8, 1)
    met = met_decomposition(trace, start=lo + q, stop=hi - q)
    cum = np.cumsum(met.dims)
    k = int(cum[0]) if k is None else int(k)
    if k not in cum[:-1]:
        notes.append(f"no {k}-dimensional dominated splitting: block dimensions {met.dims}")
        return EquivalenceReport(k, lam, w, verdicts, notes)
    level = int(np.nonzero(cum == k)[0][0]) + 1
    lo, hi = met.steps
    mid = (lo + hi) // 2
    try:
        nested = build_nested_cones(trace, met, levels=[level],
                                    steps=range(mid - steps // 2, mid + steps // 2 + 1))
        fam_c = nested.family(level)
        fam_c.lo, fam_c.hi = nested.steps.start, nested.steps.stop - 1
        vs = check_contracting(trace, fam_c, steps=range(fam_c.lo, fam_c.hi))
        verdicts += vs
        w["a"] = all(v.passed for v in vs)
        fam = extract_dominated_splitting(trace, fam_c, check=False)
        vs = check_dominated(trace, fam)
        verdicts += vs
        w["b"] = all(v.passed for v in vs)
        zfam, data = zeta_cone_family(trace, fam)
        chi = np.array([eventual_chi(fam, j, data.delta) for j in range(zfam.lo, zfam.hi + 1)])
        esteps = range(zfam.lo, min(zfam.hi - window + 1, zfam.lo + steps))
        v, N = check_eventually_contracting(trace, zfam, chi=chi, window=window, steps=esteps)
        verdicts.append(v)
        w["c"] = v.passed
        good = N[N > 0]
        if good.size:
            v, _ = check_dominated_in_probability(trace, fam, (1, int(good.max())), N,
                                                  start=esteps.start)
            verdicts.append(v)
            w["d"] = v.passed
        rep = bundle_exponents(trace, fam)
        if not rep.lambda_E >= -rep.lambda_E_minus > rep.lambda_F:
            notes.append("bundle exponents do not order as lambda_E >= -lambda_E^- > lambda_F")
    except KConesError as exc:
        notes.append(f"{type(exc).__name__}: {exc}")
    return EquivalenceReport(k, lam, w, verdicts, notes)


theoremC_equivalence_probe = equivalence_probe
