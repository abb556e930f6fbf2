"""Exception taxonomy for the engine.

Verdict-level failures (bad questions) are never exceptions; they travel
in-band as invalid Verdicts. Exceptions here signal caller bugs or broken
assets.
"""


class SpatialEnvError(Exception):
    """Base class for all engine exceptions."""


class MalformedAsset(SpatialEnvError):
    """Scene asset violates the on-disk schema (missing keys, bad types)."""


class InconsistentAsset(SpatialEnvError):
    """Scene asset parses but violates a scene invariant."""


class SpecOutOfRange(SpatialEnvError):
    """Generator spec outside the supported bounds."""


class EmptyPointSet(SpatialEnvError):
    """A geometric operator received zero points."""


class DegenerateVector(SpatialEnvError):
    """A direction operator received a vector with no usable projection."""


class ModalityMismatch(SpatialEnvError):
    """Context modality has no pools for the requested operation."""


class IncompleteParams(SpatialEnvError):
    """Question params are missing required roles for rendering."""


class CrossContextInput(SpatialEnvError):
    """Deduplication received candidates from more than one context."""


class NonFiniteInput(SpatialEnvError):
    """A scoring function received NaN or infinity."""


class EmptyFeasibleSet(SpatialEnvError):
    """Sampling was requested over an empty feasible task set."""


class CalledOnValidVerdict(SpatialEnvError):
    """Diagnostics were requested for a verdict that is not a failure."""
