"""Exception types shared across conjlab."""


class ConjlabError(Exception):
    """Base class for all library errors."""


class InvalidArgument(ConjlabError, ValueError):
    pass


class HypothesisViolated(ConjlabError):
    """A smallness or dichotomy hypothesis needed by an operation fails."""


class ContractionViolated(HypothesisViolated):
    """A fixed-point map is not a contraction (ratio >= 1)."""


class IntegrationFailure(ConjlabError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NumericOverflow(IntegrationFailure):
    pass


class QuadratureFailure(ConjlabError):
    pass


class ConvergenceFailure(ConjlabError):
    def __init__(self, message, last_change=None, iterations=None):
        super().__init__(message)
        self.last_change = last_change
        self.iterations = iterations


class EstimationFailure(ConjlabError):
    pass
