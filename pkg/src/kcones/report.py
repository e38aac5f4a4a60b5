"""Scenario runs and their machine-readable reports.

``run_scenario`` samples one orbit and runs each requested analysis in
isolation; a failing analysis is recorded with its error and the others
still run. ``emit_report`` writes ``report.json`` or three CSV tables, with
sorted keys and fixed float formatting so identical runs give identical
bytes. Wall-clock time is deliberately not recorded.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .checkers import (check_contracting, check_dominated, check_dominated_in_probability,
                       check_eventually_contracting, equivalence_probe, roundtrip_report,
                       zeta_cone_family)
from .cocycle import lyapunov_spectrum, sample_orbit
from .cones import constant_family, make_cone
from .errors import ConfigValidationError, KConesError, NoConvergence, SeriesDiverging
from .splitting import (extract_dominated_splitting, family_from_bundles, met_decomposition,
                        zeta_lipschitz_chi)
from .subspaces import make_subspace, subspace_distance

SCHEMA_VERSION = 1
NONCONVERGENCE = (NoConvergence, SeriesDiverging)
EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NONCONVERGENCE = 0, 1, 2, 3


@dataclass
class AnalysisResult:
    """Outcome of one analysis: numbers, verdicts and any error."""

    name: str
    result: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    passed: bool = True
    error: tuple = None  # (type name, message, non-convergence flag)

    @property
    def status(self):
        return "ok" if self.error is None else "error"


@dataclass
class RunReport:
    """All analyses of one scenario run."""

    config: dict
    seed: int
    analyses: list

    @property
    def exit_code(self):
        if any(a.error is not None and a.error[2] for a in self.analyses):
            return EXIT_NONCONVERGENCE
        if any(not a.passed for a in self.analyses):
            return EXIT_FAIL
        return EXIT_PASS

    def to_dict(self):
        from . import __version__
        return {
            "schema_version": SCHEMA_VERSION,
            "tool": {"name": "kcones", "version": __version__},
            "seed": self.seed,
            "config": self.config,
            "analyses": {a.name: _analysis_dict(a) for a in self.analyses},
            "exit_code": self.exit_code,
        }


def _analysis_dict(a):
    out = {"status": a.status, "passed": a.passed, "result": a.result,
           "verdicts": [_verdict_dict(v) for v in a.verdicts]}
    if a.error is not None:
        out["error"] = {"type": a.error[0], "message": a.error[1]}
    return out


def _verdict_dict(v):
    w = v.witness
    return {
        "condition_id": v.condition_id,
        "passed": v.passed,
        "min_margin": v.min_margin,
        "margins": v.margins,
        "witness_step": None if w is None else w[0],
        "witness_vector": None if w is None or w[1] is None else w[1],
        "notes": list(v.notes),
    }


# ---------------------------------------------------------------------------
# analyses

def _basis(vectors):
    return make_subspace(np.asarray(vectors, dtype=float).T)


def _config_cone(config):
    c = config.cone
    return make_cone(_basis(c["E"]), _basis(c["F"]), c["opening"])


def _cone_family(config):
    return constant_family(_config_cone(config), config.cone.get("chi"))


def _met_family(trace, config):
    # splitting at rank k from the Oseledets blocks on the middle of the window
    lo, hi = trace.window
    q = max((hi - lo) // 8, 1)
    met = met_decomposition(trace, start=max(lo + q, 0), stop=hi - q,
                            gap=config.tolerances["merge_gap"])
    cum = list(np.cumsum(met.dims))
    if config.k not in cum[:-1]:
        raise NoConvergence(f"no {config.k}-dimensional dominated splitting: "
                            f"Oseledets block dimensions {met.dims}")
    level = cum.index(config.k) + 1
    a, b = met.steps
    Es = [met.upper(level, j) for j in range(a, b)]
    Fs = [met.lower(level, j) for j in range(a, b)]
    return family_from_bundles(trace, Es, Fs, a, check=False), met


def _splitting_summary(fam):
    sep = [subspace_distance(fam.E(j), fam.F(j)) for j in range(fam.start, fam.stop + 1)]
    y = np.asarray(fam.log_products)
    n = np.arange(len(y))
    resid = y - (np.polyval(np.polyfit(n, y, 1), n)) if len(y) > 1 else np.zeros(1)
    return {
        "start": fam.start,
        "stop": fam.stop,
        "k": fam.k,
        "delta": fam.delta,
        "delta_fit_rms": float(np.sqrt(np.mean(resid ** 2))),
        "K_bound": fam.K_bound,
        "rate_fit": fam.rate_fit,
        "mean_log_tau": fam.mean_log_tau,
        "separation": np.asarray(sep),
        "notes": list(fam.notes),
    }


def _spectrum(trace, config, out):
    rep = lyapunov_spectrum(trace)
    out.result = {"lambda_top": rep.lambda_top, "lambda_top_stderr": rep.lambda_top_stderr,
                  "spectrum": rep.spectrum, "stderr": rep.stderr, "kappa": rep.kappa}


def _extract(trace, config, out):
    fam_c = _cone_family(config)
    n = trace.length
    vs = check_contracting(trace, fam_c, steps=range(0, n - 1),
                           temper_tol=config.tolerances["temper"])
    out.verdicts += vs
    fam = extract_dominated_splitting(trace, fam_c, check=False, tol=config.tolerances["push"])
    out.result = _splitting_summary(fam)
    out.verdicts += check_dominated(trace, fam, temper_tol=config.tolerances["temper"],
                                    delta_min=config.tolerances["delta_min"])


def _build_cones(trace, config, out):
    fam, _ = _met_family(trace, config)
    zfam, data = zeta_cone_family(trace, fam)
    steps = range(zfam.lo, zfam.hi + 1)
    openings = np.array([zfam.cone(j).opening for j in steps])
    res = {"splitting": _splitting_summary(fam), "first_step": zfam.lo, "openings": openings,
           "delta": data.delta, "K": data.K, "truncation": data.window,
           "tail_bound": data.tail_bound}
    if fam.k == 1:
        res["chi"] = np.array([zeta_lipschitz_chi(fam, j) for j in steps])
    out.result = res


def _checks(trace, config, out, ids):
    tol = config.tolerances
    n = trace.length
    want = set(ids)
    fam_c = _cone_family(config)
    N = None
    if want & {"C1", "C2", "C3", "C4"}:
        vs = check_contracting(trace, fam_c, steps=range(0, n - 1), temper_tol=tol["temper"])
        out.verdicts += [v for v in vs if v.condition_id in want]
    if want & {"C3'", "D3'"}:
        w = config.eventual_window
        v, N = check_eventually_contracting(trace, fam_c, window=w, steps=range(0, n - w))
        if "C3'" in want:
            out.verdicts.append(v)
        out.result["N"] = N
    if want & {"D1", "D2", "D3", "D3'"}:
        if config.splitting is not None:
            E, F = _basis(config.splitting["E"]), _basis(config.splitting["F"])
            fam = family_from_bundles(trace, [E] * n, [F] * n, 0, check=False)
        else:
            fam, _ = _met_family(trace, config)
        out.result["splitting"] = _splitting_summary(fam)
        vs = check_dominated(trace, fam, temper_tol=tol["temper"], delta_min=tol["delta_min"])
        out.verdicts += [v for v in vs if v.condition_id in want]
        if "D3'" in want:
            v, data = check_dominated_in_probability(trace, fam, config.set_window, N,
                                                     delta_min=tol["delta_min"],
                                                     kac_floor=tol["kac_floor"])
            out.verdicts.append(v)
            out.result["return_times"] = data.return_times
            out.result["kac_frequency"] = data.kac_frequency


def _roundtrip(trace, config, out):
    rep = roundtrip_report(trace, _cone_family(config), window=config.eventual_window)
    out.verdicts += rep.verdicts
    closed = rep.max_gap <= config.tolerances["roundtrip_gap"]
    out.result = {"k": rep.k, "steps": rep.steps, "gaps": rep.gaps, "max_gap": rep.max_gap,
                  "closed": closed, "notes": rep.notes,
                  "start": _splitting_summary(rep.families[0]),
                  "final": _splitting_summary(rep.families[1])}
    if not closed:
        out.passed = False


def _probe(trace, config, out):
    rep = equivalence_probe(trace, k=config.k, window=config.eventual_window)
    out.verdicts += rep.verdicts
    out.result = {"k": rep.k, "lambda_top": rep.lambda_top, "witnessed": rep.witnessed,
                  "notes": rep.notes}
    if not all(rep.witnessed.values()):
        out.passed = False


_RUNNERS = {"spectrum": _spectrum, "extract_splitting": _extract, "build_cones": _build_cones,
            "roundtrip": _roundtrip, "theoremC": _probe}


def run_scenario(config, analyses=None):
    """Run the requested analyses on one sampled orbit.

    Parameters
    ----------
    config : ScenarioConfig
    analyses : list of str, optional
        Overrides ``config.analyses``.

    Returns
    -------
    RunReport
        Library errors inside an analysis are recorded, not raised.
    """
    names = list(config.analyses if analyses is None else analyses)
    trace = sample_orbit(config.spec, config.orbit_length, seed=config.seed, past=config.past)
    results = []
    checks = [a for a in names if a.startswith("check:")]
    for name in names:
        if name.startswith("check:"):
            if name != checks[0]:
                continue
            out = AnalysisResult("check")
            ids = []
            for c in checks:
                ids += [i for i in c[6:].split(",") if i and i not in ids]
            runner = lambda tr, cfg, o, ids=ids: _checks(tr, cfg, o, ids)
            out.result["conditions"] = ids
        else:
            out = AnalysisResult(name)
            runner = _RUNNERS[name]
        try:
            runner(trace, config, out)
        except KConesError as exc:
            out.error = (type(exc).__name__, str(exc), isinstance(exc, NONCONVERGENCE))
            out.passed = False
        out.passed = out.passed and all(v.passed for v in out.verdicts)
        results.append(out)
    return RunReport(config.raw, config.seed, results)


# ---------------------------------------------------------------------------
# serialization

def _clean(x):
    # JSON-safe plain values; non-finite floats become strings
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return x


def report_json(report):
    """The report as a canonical JSON string."""
    return json.dumps(_clean(report.to_dict()), sort_keys=True, indent=2) + "\n"


def _fmt(x):
    x = _clean(x)
    return repr(x) if isinstance(x, float) else str(x)


def report_tables(report):
    """Rows of the three CSV tables.

    Columns
    -------
    exponents : analysis, quantity, index, value, stderr
    margins : analysis, condition_id, index, margin
    verdicts : analysis, condition_id, passed, min_margin, witness_step, notes
    """
    expo = [("analysis", "quantity", "index", "value", "stderr")]
    marg = [("analysis", "condition_id", "index", "margin")]
    verd = [("analysis", "condition_id", "passed", "min_margin", "witness_step", "notes")]
    for a in report.analyses:
        r = a.result
        if a.name == "spectrum" and a.error is None:
            expo.append((a.name, "lambda_top", 0, _fmt(r["lambda_top"]),
                         _fmt(r["lambda_top_stderr"])))
            for i, (v, s) in enumerate(zip(r["spectrum"], r["stderr"])):
                expo.append((a.name, "spectrum", i, _fmt(v), _fmt(s)))
        if a.name == "theoremC" and a.error is None:
            expo.append((a.name, "lambda_top", 0, _fmt(r["lambda_top"]), ""))
        for v in a.verdicts:
            for i, m in enumerate(v.margins):
                marg.append((a.name, v.condition_id, i, _fmt(m)))
            w = "" if v.witness is None else v.witness[0]
            verd.append((a.name, v.condition_id, v.passed, _fmt(v.min_margin), w,
                         " | ".join(v.notes)))
        if a.error is not None:
            verd.append((a.name, "", False, "", "", f"{a.error[0]}: {a.error[1]}"))
    return {"exponents.csv": expo, "margins.csv": marg, "verdicts.csv": verd}


def emit_report(report, fmt, output_dir):
    """Write the report files and return their paths.

    Raises
    ------
    ConfigValidationError
        For an unknown format.
    OSError
        If the directory cannot be written.
    """
    if fmt not in ("json", "csv"):
        raise ConfigValidationError([("output.format", f"unknown format {fmt!r}")])
    os.makedirs(output_dir, exist_ok=True)
    paths = []
    if fmt == "json":
        p = os.path.join(output_dir, "report.json")
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report_json(report))
        return [p]
    for name, rows in report_tables(report).items():
        p = os.path.join(output_dir, name)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        paths.append(p)
    return paths
