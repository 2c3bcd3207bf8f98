"""Package-wide exception types."""


class StructuralError(ValueError):
    """Block dimensions or layout inconsistent with the declared instance."""


class ProtocolError(RuntimeError):
    """Channel/estimator protocol violated (e.g. delivered flag with a blank packet)."""


class NumericalError(RuntimeError):
    """A numerical precondition failed (non-PD inner matrix, indefinite cost, ...)."""


class EnumerationCapError(ValueError):
    """Channel-sequence enumeration would exceed the configured cap."""


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``errors`` is a list of (json_pointer, message) pairs locating each problem.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [("", errors)]
        self.errors = list(errors)
        text = "; ".join(f"{ptr or '/'}: {msg}" for ptr, msg in self.errors)
        super().__init__(text)
