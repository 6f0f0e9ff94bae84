"""Exception hierarchy shared across the toolkit."""


class DetPipeError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(DetPipeError, ValueError):
    """A value violates a documented invariant (range, sign, shape)."""


class GeometryError(ValidationError):
    """A bounding box has non-positive width or height."""


class ParseError(DetPipeError, ValueError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc = f" ({loc})"
        super().__init__(f"{message}{loc}")


class ConfigError(DetPipeError, ValueError):
    """A configuration file has an unknown key, bad type, or bad value."""


class OptimizationError(DetPipeError, RuntimeError):
    """The gradient-descent fitter diverged; carries the loss trace."""

    def __init__(self, message, trace=None):
        self.trace = list(trace) if trace is not None else []
        super().__init__(message)


class AdapterError(DetPipeError, RuntimeError):
    """An external detector command failed; carries its captured output."""

    def __init__(self, message, output=""):
        self.output = output
        super().__init__(message)


class GenerationError(DetPipeError, RuntimeError):
    """Synthetic scene generation could not satisfy the placement spec."""
