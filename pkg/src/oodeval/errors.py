"""Exception taxonomy. Every malformed input maps to one of these, never a bare ValueError."""


class EngineError(Exception):
    """Base class for all engine errors."""


class SchemaError(EngineError):
    """File header or field layout does not match the declared schema."""


class ValidationError(EngineError):
    """A record parsed but violates a domain invariant."""


class TruncationError(EngineError):
    """Binary payload shorter (or longer) than its header declares."""


class InputError(EngineError):
    """A scoring operation received an argument outside its domain."""


class ParameterError(EngineError):
    """A hyperparameter is outside its documented range."""


class FitError(EngineError):
    """A fit phase cannot produce a usable state (e.g. empty training set)."""


class NumericalError(EngineError):
    """A numerical routine failed (e.g. covariance not factorizable)."""


class JoinError(EngineError):
    """Two record streams that must align on (image_id, det_index) do not."""


class ConfigurationError(EngineError):
    """Run configuration references something unresolvable."""
