"""Exception types raised by the library."""


class KConesError(Exception):
    """Base class for all library errors."""


class InvalidArgument(KConesError, ValueError):
    """A precondition on the arguments does not hold."""


class RankDeficient(KConesError):
    """A basis does not have full numerical rank."""


class NotComplementary(KConesError):
    """Two subspaces do not form a direct sum of the whole space."""


class EmptySubspace(KConesError):
    """An operation needs a nontrivial subspace."""


class ZeroVector(KConesError):
    """A vector is numerically zero."""


class NotInterior(KConesError):
    """A vector is not in the interior of a cone."""


class NotInCone(KConesError):
    """A subspace is not contained in the interior of a cone."""


class NotStrictlyInvariant(KConesError):
    """A map does not send a cone into the interior of the target cone."""


class NoAdmissiblePairs(KConesError):
    """No sampled pair has angle index larger than one."""


class FitFailure(KConesError):
    """No cone opening satisfies the required containments."""


class NotSeparated(KConesError):
    """A subspace meets a cone outside the origin."""


class WindowExceeded(KConesError):
    """A requested index lies outside the sampled orbit window."""


class NotInvariant(KConesError):
    """A subspace family is not carried to itself by the cocycle."""


class NonPositiveValue(KConesError):
    """A sequence expected to be positive has a nonpositive entry."""


class GapTooSmall(KConesError):
    """Two Lyapunov exponents are too close to be separated."""


class NoConvergence(KConesError):
    """An iteration failed to converge inside the available window."""


class SeriesDiverging(KConesError):
    """Series terms do not decay geometrically."""


class EmptyReturnSet(KConesError):
    """No orbit step lands in the requested return set."""


class BoundViolation(KConesError):
    """A computed quantity breaks a bound that must hold by construction."""


class ConfigParseError(KConesError):
    """A scenario file is not valid JSON."""


class ConfigValidationError(KConesError):
    """A scenario file is well formed but semantically invalid.

    Parameters
    ----------
    problems : list of (str, str)
        Pairs of field path and message, all collected before raising.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        text = "; ".join(f"{path}: {msg}" for path, msg in self.problems)
        super().__init__(text)
