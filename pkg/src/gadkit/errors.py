"""Exception and warning types shared across the toolkit."""


class GadError(Exception):
    """Base class for all toolkit errors."""


class ParseError(GadError):
    """Input file is not valid JSON."""


class SchemaError(GadError):
    """JSON parses but a required field is missing or mistyped."""


class InvariantError(GadError):
    """Data violates a structural invariant (e.g. an actor in two groups)."""


class ShapeError(GadError):
    """Array or matrix has an incompatible shape."""


class DimError(GadError):
    """Score vectors disagree on the number of actors or classes."""


class FrameMismatch(GadError):
    """A tracklet has no box on one of the requested frames."""


class MissingPrediction(GadError):
    """A ground-truth clip has no prediction entry."""


class DegenerateHull(GadError):
    """Convex hull has zero area (fewer than three non-collinear points)."""


class NoCounterpart(GadError):
    """A group has no non-member actor in its clip to measure distance to."""


class AllMaskedRow(GadError):
    """A softmax row with every position masked out."""


class NonScalarLoss(GadError):
    """backward() called on a tensor that is not a scalar."""


class DivergenceError(GadError):
    """Training loss became non-finite."""


class InfeasibleSpec(GadError):
    """Synthetic-scene spec cannot be satisfied (e.g. too few actors)."""


class SingletonGroupWarning(UserWarning):
    """A group with fewer than two members was skipped by a loss term."""


class DegenerateDegree(UserWarning):
    """An actor with zero total affinity was isolated into its own cluster."""
