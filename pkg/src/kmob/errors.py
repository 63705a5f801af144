"""Exception hierarchy for the verification engine."""


class KmobError(Exception):
    """Base class for all engine errors."""


# jets
class DegenerateEvaluation(KmobError, ArithmeticError):
    pass


class OutOfDomain(KmobError, ValueError):
    pass


class EvaluationFailed(KmobError, RuntimeError):
    pass


# geometry
class SingularMetric(KmobError, ArithmeticError):
    pass


class UnsupportedValence(KmobError, ValueError):
    pass


class ZeroVector(KmobError, ValueError):
    pass


# metrics
class DomainViolation(KmobError, ValueError):
    pass


class EmptyDomain(KmobError, ValueError):
    pass


class NonHorizontalInput(KmobError, ValueError):
    pass


class ConstructionError(KmobError, ValueError):
    """An instance description cannot be turned into a valid chart."""


# mobility
class DegenerateFit(KmobError, ArithmeticError):
    pass


class ModeMismatch(KmobError, ValueError):
    pass


class IllConditioned(KmobError, ArithmeticError):
    pass


class SingularA(KmobError, ArithmeticError):
    pass


# nullity
class CoincidentEigenvalues(KmobError, ValueError):
    pass


# cone
class MissingPotential(KmobError, ValueError):
    pass


class WrongB(KmobError, ValueError):
    pass


class LengthMismatch(KmobError, ValueError):
    pass


class NegativeSquare(KmobError, ValueError):
    pass


class DuplicateEigenvalues(KmobError, ValueError):
    pass


class NotOnLevelSet(KmobError, ValueError):
    pass


class InvalidDecomposition(KmobError, ValueError):
    pass


# cli
class ConfigError(KmobError, ValueError):
    pass
