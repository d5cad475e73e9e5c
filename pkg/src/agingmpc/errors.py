"""Exception hierarchy shared across the package."""


class AgingMPCError(Exception):
    """Base class for package errors."""


class InvalidStateError(AgingMPCError, ValueError):
    """A cell state violates its charge/capacity invariants."""


class DomainError(AgingMPCError, ValueError):
    """An argument lies outside the domain of a model function."""


class InvalidInputError(AgingMPCError, ValueError):
    """Planner, model, or data input fails validation."""


class DegenerateChainError(AgingMPCError):
    """Markov chain has no unique stationary distribution."""


class ParseError(AgingMPCError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GapError(AgingMPCError, ValueError):
    """An hourly series has missing timestamps."""

    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(str(m) for m in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"missing {len(self.missing)} hour(s): {shown}{more}")


class InfeasibleProfileError(AgingMPCError, ValueError):
    """A cycling profile requires a current above the C-rate limit."""


class SolverError(AgingMPCError, RuntimeError):
    """The QP solver did not return a solved status."""

    def __init__(self, status: str, step: int | None = None):
        self.status = status
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"QP solver returned status {status!r}{where}")


class DimensionError(AgingMPCError, ValueError):
    """Array shapes are inconsistent."""


class ConfigError(AgingMPCError, ValueError):
    """A run configuration file is missing, malformed, or inconsistent."""
