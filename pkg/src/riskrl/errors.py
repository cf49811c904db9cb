"""Exception hierarchy shared across the package."""


class RiskRLError(Exception):
    """Base class for all errors raised by riskrl."""


class InvalidParameter(RiskRLError, ValueError):
    pass


class NonDifferentiablePoint(RiskRLError, ValueError):
    pass


class UnboundedDerivative(RiskRLError, ValueError):
    pass


class NoAdmissibleK(RiskRLError):
    pass


class BracketFailure(RiskRLError):
    pass


class InvalidMDP(RiskRLError, ValueError):
    """Raised by :func:`riskrl.mdp.validate`; ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid MDP:\n  " + "\n  ".join(self.problems))


class InvalidPolicy(RiskRLError, ValueError):
    pass


class EmptyDemonstrations(RiskRLError, ValueError):
    pass


class MalformedMap(RiskRLError, ValueError):
    pass


class InvalidConfig(RiskRLError, ValueError):
    pass


class SolverError(RiskRLError):
    """Base for failures of the fixed-point solvers."""


class MaxItersExceeded(SolverError):
    pass


class AlphaUnderflow(SolverError):
    pass


class ZeroProbabilityDemo(RiskRLError, ValueError):
    pass


class AbsoluteContinuityViolation(RiskRLError, ValueError):
    pass


class DimensionMismatch(RiskRLError, ValueError):
    pass


class SupportMismatch(RiskRLError, ValueError):
    pass


class AllRestartsFailed(RiskRLError):
    pass
