"""Exception hierarchy.

Every error carries a ``category`` equal to its class name; the CLI prints
it as a single machine-parseable token.
"""


class MultivoxError(Exception):
    @property
    def category(self):
        return type(self).__name__


# audio
class NotWav(MultivoxError):
    pass


class UnsupportedFormat(MultivoxError):
    pass


class Truncated(MultivoxError):
    pass


class IoFailure(MultivoxError):
    pass


class TooShort(MultivoxError):
    pass


class SampleRateMismatch(MultivoxError):
    pass


class FactorOutOfRange(MultivoxError):
    pass


class IndexOutOfRange(MultivoxError):
    pass


# numgrad
class ShapeMismatch(MultivoxError):
    pass


class NonFiniteValue(MultivoxError):
    pass


class CheckpointFormatError(MultivoxError):
    pass


# models
class EmptyInput(MultivoxError):
    pass


class TargetOutOfRange(MultivoxError):
    pass


class EmptyList(MultivoxError):
    pass


class InsufficientSpeakers(MultivoxError):
    pass


class ManifestInvalid(MultivoxError):
    pass


class CheckpointIncompatible(MultivoxError):
    pass


class EmptyTokens(MultivoxError):
    pass


class EmptyMemory(MultivoxError):
    pass


class EmptyText(MultivoxError):
    pass


# augmentation
class SilentSignal(MultivoxError):
    pass


class SilentNoise(MultivoxError):
    pass


class EmptyRir(MultivoxError):
    pass


# evaluation
class OneClassOnly(MultivoxError):
    pass


class EmptyTrials(MultivoxError):
    pass


class MissingWeight(MultivoxError):
    pass


class ZeroWeightSum(MultivoxError):
    pass


class ParseError(MultivoxError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# pipeline
class DuplicateUttId(MultivoxError):
    pass


class MissingFile(MultivoxError):
    pass


class ConfigInvalid(MultivoxError):
    pass


class UnknownToken(MultivoxError):
    pass
