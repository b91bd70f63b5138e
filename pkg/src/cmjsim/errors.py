"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: configuration/usage problems exit 1,
violated model assumptions exit 2, unsupported regimes exit 3, resource
caps exit 4.
"""


class CmjError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(CmjError):
    """Invalid model parameters or experiment configuration."""

    exit_code = 1


class AssumptionViolation(CmjError):
    """A model assumption (A.1-A.5) fails for the given law.

    ``name`` is one of "A.1" (atom at zero below one), "A.2"
    (supercritical mean offspring), "A.3" (Malthusian root exists),
    "A.4" (second moment of the tilted point process), "A.5"
    (finitely many roots in the critical strip).
    """

    exit_code = 2

    def __init__(self, name: str, message: str):
        self.name = name
        super().__init__(f"{name} violated: {message}")


class UnsupportedRegime(CmjError):
    """The requested analysis is outside the implemented regime.

    Raised e.g. when roots sit on the critical line or when the
    limit variance degenerates, so the central-limit machinery must
    refuse rather than guess.
    """

    exit_code = 3


class ResourceCapExceeded(CmjError):
    """A hard safety cap (node count) was hit; partial state discarded."""

    exit_code = 4


class DomainError(CmjError):
    """Function evaluated outside its convergence domain."""

    exit_code = 1


class CapabilityError(CmjError):
    """A required evaluation path (analytic projection, nested MC) is unavailable."""

    exit_code = 1


class KnowledgeError(CmjError):
    """A quantity is undecidable from the simulated portion of the population."""

    exit_code = 1
