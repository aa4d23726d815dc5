"""Exception hierarchy.  Every error raised on purpose derives from AdvcastError."""


class AdvcastError(Exception):
    pass


class ShapeMismatch(AdvcastError, ValueError):
    pass


class InvalidField(AdvcastError, ValueError):
    pass


class InvalidParams(AdvcastError, ValueError):
    pass


class InvalidConfig(AdvcastError, ValueError):
    pass


class NonPeriodicInput(AdvcastError, ValueError):
    pass


class DegenerateKernel(AdvcastError, ValueError):
    pass


class UnstableDiffusion(AdvcastError, ValueError):
    pass


class StaleCache(AdvcastError, RuntimeError):
    pass


class NonScalarLoss(AdvcastError, ValueError):
    pass


class DoubleBackward(AdvcastError, RuntimeError):
    pass


class InsufficientBatch(AdvcastError, ValueError):
    pass


class NonFiniteLoss(AdvcastError, FloatingPointError):
    pass


class DatasetFormatError(AdvcastError, ValueError):
    pass


class CheckpointFormatError(AdvcastError, ValueError):
    pass


class EmptyDay(AdvcastError, ValueError):
    pass


class MissingClimatology(AdvcastError, KeyError):
    pass


class LengthMismatch(AdvcastError, ValueError):
    pass


class MissingMotion(AdvcastError, ValueError):
    pass
