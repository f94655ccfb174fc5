"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or unexpected dimensions."""


class DomainError(ValueError):
    """Numeric input outside the supported domain (non-finite, degenerate)."""


class UnsupportedKindError(ValueError):
    """A kind/name tag that the called operation does not handle."""


class ConfigError(ValueError):
    """Experiment config file could not be parsed or validated."""

    def __init__(self, message, line=None, field=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.line = line
        self.field = field


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step, value=None):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.value = value
