"""Exception hierarchy shared by all modules."""


class ModelError(ValueError):
    """Base class for domain errors (CLI exit code 1)."""


class NonScaledSpeed(ModelError):
    pass


class NegativeRate(ModelError):
    pass


class BadThreshold(ModelError):
    pass


class Unstable(ModelError):
    pass


class NearlyUnstable(Unstable):
    """Load so close to capacity that the truncation level would explode."""


class TruncationTooSmall(ModelError):
    pass


class SingularSystem(ModelError):
    pass


class ToleranceNotMet(ModelError):
    pass


class EmptyFeasibleSet(ModelError):
    pass


class PreferenceViolated(ModelError):
    pass


class UnstableDetected(ModelError):
    pass


class DegenerateBatches(ModelError):
    pass
