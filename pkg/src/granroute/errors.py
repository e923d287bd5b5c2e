"""Exception types raised across the package."""


class GranrouteError(Exception):
    pass


class ShapeMismatch(GranrouteError, ValueError):
    pass


class NumericOverflow(GranrouteError, FloatingPointError):
    pass


class NonFiniteGradient(GranrouteError, FloatingPointError):
    pass


class OddAxis(ShapeMismatch):
    pass


class ZeroNormToken(GranrouteError, ValueError):
    pass


class EmptyList(GranrouteError, ValueError):
    pass


class VocabOverflow(GranrouteError, IndexError):
    pass


class CorruptManifest(GranrouteError, ValueError):
    pass


class MissingCheckpoint(GranrouteError, FileNotFoundError):
    pass


class SchemaError(GranrouteError, ValueError):
    pass
