"""Scenario files: JSON parsing, validation and defaults.

A scenario names a base system, one generator matrix per base symbol, the
orbit to sample and the analyses to run. Validation collects every problem
with its field path before raising.
"""

import copy
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cocycle import CocycleSpec, bernoulli, markov, rotation
from .errors import ConfigParseError, ConfigValidationError, KConesError
from .subspaces import is_injective, make_splitting, make_subspace

ANALYSES = ("spectrum", "extract_splitting", "build_cones", "roundtrip", "theoremC")
CHECKABLE = ("C1", "C2", "C3", "C3'", "C4", "D1", "D2", "D3", "D3'")
FORMATS = ("json", "csv")
BASE_KINDS = ("bernoulli_shift", "markov_chain", "circle_rotation", "constant")
EXPONENT_ANALYSES = ("spectrum", "theoremC")
MIN_EXPONENT_LENGTH = 100

DEFAULT_TOLERANCES = {
    "push": 1e-10,
    "merge_gap": 1e-3,
    "delta_min": 1e-3,
    "kac_floor": 0.01,
    "temper": 1e-2,
    "roundtrip_gap": 1e-5,
}


@dataclass
class ScenarioConfig:
    """Validated scenario with defaults filled.

    Attributes
    ----------
    name : str
    spec : CocycleSpec
    orbit_length, past, seed : int
    analyses : list of str
        Entries of ``ANALYSES`` or ``"check:<ids>"`` with comma-separated
        condition ids.
    k : int
        Rank of cones and dimension of ``E``.
    cone : dict
        ``E`` and ``F`` spanning vectors, ``opening`` and optional ``chi``.
    splitting : dict, optional
        Constant reference splitting for the D conditions.
    eventual_window : int
    set_window : tuple of int
        ``(m, n)`` for the return set of D3'.
    tolerances : dict
    format : str
    raw : dict
        Normalized echo of the input, used in reports.
    """

    name: str
    spec: CocycleSpec
    orbit_length: int
    past: int
    seed: int
    analyses: list
    k: int
    cone: dict
    splitting: Optional[dict]
    eventual_window: int
    set_window: tuple
    tolerances: dict
    format: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def dim(self):
        return self.spec.dim

    @property
    def checks(self):
        """Condition ids requested through ``check:`` entries, in order."""
        out = []
        for a in self.analyses:
            if a.startswith("check:"):
                out += [c for c in a[6:].split(",") if c not in out]
        return out


def _is_int(x):
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _matrix(x, path, problems):
    try:
        M = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        problems.append((path, "not a numeric array"))
        return None
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        problems.append((path, "must be a non-empty square matrix"))
        return None
    if not np.all(np.isfinite(M)):
        problems.append((path, "entries must be finite"))
        return None
    return M


def _vectors(x, d, path, problems):
    # list of spanning vectors -> (d, k) column basis
    try:
        V = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        problems.append((path, "not a numeric array"))
        return None
    if V.ndim == 1:
        V = V[None, :]
    if V.ndim != 2 or V.shape[1] != d:
        problems.append((path, f"must be a list of vectors of length {d}"))
        return None
    return V.T


def _parse_base(b, n_gen, problems):
    if not isinstance(b, dict):
        problems.append(("base", "must be an object"))
        return None
    kind = b.get("kind")
    if kind not in BASE_KINDS:
        problems.append(("base.kind", f"must be one of {', '.join(BASE_KINDS)}"))
        return None
    try:
        if kind == "constant":
            if n_gen not in (None, 1):
                problems.append(("generators", "a constant base takes exactly one generator"))
            return bernoulli([1.0])
        if kind == "bernoulli_shift":
            p = b.get("probabilities")
            if p is None and n_gen:
                p = [1.0 / n_gen] * n_gen
            return bernoulli(p)
        if kind == "markov_chain":
            if "transition" not in b:
                problems.append(("base.transition", "required for markov_chain"))
                return None
            return markov(b["transition"], b.get("stationary"))
        if "rotation" not in b:
            problems.append(("base.rotation", "required for circle_rotation"))
            return None
        bins = b.get("bins", n_gen)
        if not _is_int(bins):
            problems.append(("base.bins", "must be an integer"))
            return None
        return rotation(b["rotation"], bins)
    except (TypeError, ValueError) as exc:
        problems.append(("base", str(exc)))
        return None


def validate_config(data):
    """Validate a parsed JSON object and fill defaults.

    Raises
    ------
    ConfigValidationError
        Listing every problem with its field path.
    """
    problems = []
    if not isinstance(data, dict):
        raise ConfigValidationError([("", "top level must be an object")])
    data = copy.deepcopy(data)
    known = {"name", "base", "generators", "dim", "orbit_length", "past", "seed", "analyses",
             "k", "cone", "splitting", "eventual_window", "set_window", "tolerances", "output"}
    for key in sorted(set(data) - known):
        problems.append((key, "unknown field"))

    gens = data.get("generators")
    mats = []
    if not isinstance(gens, list) or not gens:
        problems.append(("generators", "must be a non-empty list of matrices"))
    else:
        for i, g in enumerate(gens):
            M = _matrix(g, f"generators[{i}]", problems)
            if M is not None:
                if not is_injective(M):
                    problems.append((f"generators[{i}]", "matrix is not injective"))
                mats.append(M)
        shapes = {M.shape for M in mats}
        if len(shapes) > 1:
            problems.append(("generators", "matrices must share one size"))
    d = mats[0].shape[0] if mats else None
    if "dim" in data and d is not None and data["dim"] != d:
        problems.append(("dim", f"does not match generator size {d}"))

    base = _parse_base(data.get("base", {"kind": "bernoulli_shift"}),
                       len(gens) if isinstance(gens, list) else None, problems)
    if base is not None and mats and base.n_symbols != len(gens):
        problems.append(("generators", f"base has {base.n_symbols} symbols but "
                                       f"{len(gens)} generators were given"))

    n = data.get("orbit_length", 1000)
    if not _is_int(n) or n < 1:
        problems.append(("orbit_length", "must be a positive integer"))
    past = data.get("past", n)
    if not _is_int(past) or past < 0:
        problems.append(("past", "must be a nonnegative integer"))
    seed = data.get("seed", 0)
    if not _is_int(seed) or not 0 <= seed < 2 ** 64:
        problems.append(("seed", "must be an integer in [0, 2^64)"))

    analyses = data.get("analyses")
    if not isinstance(analyses, list) or not analyses:
        problems.append(("analyses", "must be a non-empty list"))
        analyses = []
    for i, a in enumerate(analyses):
        if not isinstance(a, str):
            problems.append((f"analyses[{i}]", "must be a string"))
        elif a.startswith("check:"):
            ids = [c for c in a[6:].split(",") if c]
            bad = [c for c in ids if c not in CHECKABLE]
            if not ids or bad:
                problems.append((f"analyses[{i}]", f"unknown condition ids {bad or a}"))
        elif a not in ANALYSES:
            problems.append((f"analyses[{i}]", f"unknown analysis {a!r}"))
    if _is_int(n) and any(a in EXPONENT_ANALYSES for a in analyses if isinstance(a, str)):
        if n < MIN_EXPONENT_LENGTH:
            problems.append(("orbit_length", f"exponent analyses need at least "
                                             f"{MIN_EXPONENT_LENGTH} steps"))

    k = data.get("k", 1)
    if not _is_int(k) or (d is not None and not 0 < k < d):
        problems.append(("k", "must be an integer with 0 < k < dim"))
        k = None

    cone = data.get("cone", {})
    if not isinstance(cone, dict):
        problems.append(("cone", "must be an object"))
        cone = {}
    cone = dict(cone)
    if d is not None and k is not None:
        I = np.eye(d)
        E = _vectors(cone.get("E", I[:k].tolist()), d, "cone.E", problems)
        F = _vectors(cone.get("F", I[k:].tolist()), d, "cone.F", problems)
        if E is not None and F is not None:
            if E.shape[1] != k or F.shape[1] != d - k:
                problems.append(("cone", f"E needs {k} vectors and F {d - k}"))
            else:
                try:
                    make_splitting(make_subspace(E), make_subspace(F))
                except (KConesError, ValueError) as exc:
                    problems.append(("cone", str(exc)))
        cone["E"] = None if E is None else E.T.tolist()
        cone["F"] = None if F is None else F.T.tolist()
    op = cone.setdefault("opening", 1.0)
    if not _is_num(op) or not 1e-6 <= op <= 1e6:
        problems.append(("cone.opening", "must be a number in [1e-6, 1e6]"))
    chi = cone.setdefault("chi", None)
    if chi is not None and (not _is_num(chi) or chi < 1):
        problems.append(("cone.chi", "must be a number >= 1"))

    split = data.get("splitting")
    if split is not None:
        if not isinstance(split, dict) or d is None or k is None:
            problems.append(("splitting", "must be an object with E and F"))
        else:
            E = _vectors(split.get("E"), d, "splitting.E", problems)
            F = _vectors(split.get("F"), d, "splitting.F", problems)
            if E is not None and F is not None and (E.shape[1] != k or F.shape[1] != d - k):
                problems.append(("splitting", f"E needs {k} vectors and F {d - k}"))

    window = data.get("eventual_window", 10)
    if not _is_int(window) or window < 1:
        problems.append(("eventual_window", "must be a positive integer"))
    sw = data.get("set_window", [1, window if _is_int(window) else 10])
    if (not isinstance(sw, list) or len(sw) != 2 or not all(_is_int(x) for x in sw)
            or not 1 <= sw[0] <= sw[1]):
        problems.append(("set_window", "must be [m, n] with 1 <= m <= n"))

    tol = dict(DEFAULT_TOLERANCES)
    given = data.get("tolerances", {})
    if not isinstance(given, dict):
        problems.append(("tolerances", "must be an object"))
        given = {}
    for key, val in given.items():
        if key not in DEFAULT_TOLERANCES:
            problems.append((f"tolerances.{key}", "unknown tolerance"))
        elif not _is_num(val) or val <= 0:
            problems.append((f"tolerances.{key}", "must be a positive number"))
        else:
            tol[key] = float(val)

    out = data.get("output", {})
    fmt = out.get("format", "json") if isinstance(out, dict) else None
    if fmt not in FORMATS:
        problems.append(("output.format", f"must be one of {', '.join(FORMATS)}"))

    spec = None
    if not problems:
        try:
            spec = CocycleSpec(base, np.array(mats))
        except (KConesError, ValueError) as exc:
            problems.append(("generators", str(exc)))
    if problems:
        raise ConfigValidationError(problems)

    raw = {
        "name": data.get("name", "scenario"),
        "base": data.get("base", {"kind": "bernoulli_shift"}),
        "generators": [M.tolist() for M in mats],
        "dim": d,
        "orbit_length": n,
        "past": past,
        "seed": seed,
        "analyses": list(analyses),
        "k": k,
        "cone": cone,
        "splitting": split,
        "eventual_window": window,
        "set_window": list(sw),
        "tolerances": tol,
        "output": {"format": fmt},
    }
    return ScenarioConfig(raw["name"], spec, n, past, seed, list(analyses), k, cone, split,
                          window, tuple(sw), tol, fmt, raw)


def parse_config_text(text):
    """Parse and validate a scenario given as JSON text."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"malformed JSON at line {exc.lineno}: {exc.msg}") from exc
    return validate_config(data)


def parse_config(path):
    """Read, parse and validate a scenario file.

    Raises
    ------
    ConfigParseError
        If the file is not valid JSON.
    ConfigValidationError
        If the content is semantically invalid.
    OSError
        If the file cannot be read.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def apply_overrides(config, seed=None, orbit_length=None, fmt=None, tolerances=None):
    """Return a new config with command-line overrides applied and revalidated."""
    raw = copy.deepcopy(config.raw)
    if seed is not None:
        raw["seed"] = seed
    if orbit_length is not None:
        raw["orbit_length"] = orbit_length
        if config.raw["past"] == config.raw["orbit_length"]:
            raw["past"] = orbit_length
    if fmt is not None:
        raw["output"] = {"format": fmt}
    if tolerances:
        raw["tolerances"] = {**raw["tolerances"], **tolerances}
    return validate_config(raw)


def parse_overrides(text):
    """Parse ``k=v,k=v`` tolerance overrides.

    Raises
    ------
    ConfigValidationError
        On malformed pairs or non-numeric values.
    """
    out, problems = {}, []
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            problems.append((f"tolerances.{item}", "expected key=value"))
            continue
        try:
            out[key.strip()] = float(val)
        except ValueError:
            problems.append((f"tolerances.{key.strip()}", "value must be a number"))
    if problems:
        raise ConfigValidationError(problems)
    return out
