"""Exception hierarchy.

Every domain error derives from :class:`HmerError`; the CLI reports the class
name as a machine-parsable prefix, so names are part of the public surface.
"""


class HmerError(Exception):
    """Base class for all toolkit errors."""


# latex_core
class UnknownCommand(HmerError):
    pass


class UnbalancedBraces(HmerError):
    pass


class EmptyCorpus(HmerError):
    pass


class OutOfVocab(HmerError):
    pass


class IdOutOfRange(HmerError):
    pass


class EmptySequence(HmerError):
    pass


# posforest
class ForestError(HmerError):
    """Token stream does not describe a well-formed layout."""


class MalformedSuperscript(ForestError):
    pass


class MalformedFraction(ForestError):
    pass


class MalformedSqrt(ForestError):
    pass


class DepthExceeded(ForestError):
    pass


# counting
class LengthMismatch(HmerError):
    pass


# dataset
class MalformedXml(HmerError):
    pass


class MissingTruth(HmerError):
    pass


class EmptyTraces(HmerError):
    pass


class CorruptRecord(HmerError):
    pass


class IoFailure(HmerError):
    pass


# tensor / model
class ShapeMismatch(HmerError):
    pass


class NonScalarLoss(HmerError):
    pass


class BadDim(HmerError):
    pass


class TargetOutOfRange(HmerError):
    pass


class InputTooSmall(HmerError):
    pass


# trainer
class NonFiniteLoss(HmerError):
    pass


class NonFiniteGrad(HmerError):
    pass


class ConfigError(HmerError):
    pass


# metrics
class PairCountMismatch(HmerError):
    pass


class EmptyEvaluation(HmerError):
    pass


class UsageError(HmerError):
    pass
