"""Exception hierarchy shared across the package."""


class PSCError(Exception):
    """Base class for all errors raised by psc_limits."""


class ParameterError(PSCError, ValueError):
    """A parameter lies outside its admissible range."""


class DimensionError(ParameterError):
    """The manifold dimension is too small for the construction (needs n >= 4)."""


class ConstructionError(PSCError):
    """A profile or block could not be built for otherwise admissible input."""


class PreconditionError(PSCError, ValueError):
    """An input violates a documented precondition (e.g. f > -1 somewhere)."""


class DomainError(PSCError, ValueError):
    """Evaluation requested at a coordinate singularity."""


class OracleError(PSCError):
    """The finite-difference or mesh oracle could not produce a value."""


class PackingError(PSCError):
    """Circle selection exhausted its retry budget."""


class CertificateError(PSCError):
    """A certificate is missing or failed; carries the witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConfigError(PSCError, ValueError):
    """Invalid experiment configuration; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))
