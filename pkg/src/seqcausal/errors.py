"""Exception hierarchy.

Every error raised by the package derives from :class:`SeqCausalError`.
The two intermediate classes map onto the CLI exit codes: input problems
(exit 2) and estimation problems (exit 3).
"""


class SeqCausalError(Exception):
    """Base class for all package errors."""


class ValidationError(SeqCausalError, ValueError):
    """Input data, schema or configuration is invalid."""


class EstimationError(SeqCausalError, ArithmeticError):
    """A well-formed input cannot be estimated or evaluated."""


# panel
class MissingColumn(ValidationError):
    pass


class NonIntegerTreatment(ValidationError):
    pass


class OutOfRangeValue(ValidationError):
    pass


class NonFiniteOutcome(ValidationError):
    pass


class EmptyPanel(ValidationError):
    pass


class EmptyConditioningStratum(EstimationError):
    pass


class EmptyStratum(EstimationError):
    pass


# point parameters
class EmptyActiveStratum(EstimationError):
    pass


class EmptyControlStratum(EstimationError):
    pass


class MissingProportion(EstimationError):
    pass


class MissingPointParam(EstimationError):
    pass


class MissingCellMean(EstimationError):
    pass


# net effects
class UncoveredStratum(ValidationError):
    pass


class EmptyClass(ValidationError):
    pass


class PatternNotMarkov(ValidationError):
    pass


class RankDeficientDesign(EstimationError):
    pass


class TooFewRows(EstimationError):
    pass


class SingularWeightMatrix(EstimationError):
    pass


class ZeroDof(EstimationError):
    pass


# g-formula
class UnresolvedHistory(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class UnreachableCellMean(EstimationError):
    pass


class MissingTransitionProportion(EstimationError):
    pass


# simulation
class ProbabilitySumError(ValidationError):
    pass


class NonIntegerFrequency(ValidationError):
    pass


class InvalidLevel(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


# oracle
class MissingConditionalMean(EstimationError):
    pass
