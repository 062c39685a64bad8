"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: ConfigError -> 2, ConstructionError
(and subclasses) -> 3, ConvergenceError -> 4, CertificationError -> 5.
"""


class NLBistableError(Exception):
    """Base class for all package errors."""


class ConfigError(NLBistableError):
    """Invalid configuration or violated model assumption."""


class InvalidProfileError(ConfigError):
    """Kernel profile violates an assumption (mass, monotonicity, ...)."""


class InvalidNonlinearityError(ConfigError):
    """Reaction term violates the bistability requirements."""


class ResolutionError(ConfigError):
    """Grid spacing too coarse for the requested kernel or obstacle."""


class ConstructionError(NLBistableError):
    """A sub/super-solution ingredient could not be built."""


class BarrierViolationError(ConstructionError):
    """Constrained energy minimizer ended on the constraint sphere."""


class WaveDirectionError(ConstructionError):
    """Estimated front speed is not positive (degenerate reaction data)."""


class ConvergenceError(NLBistableError):
    """An iterative solve exceeded its iteration budget."""


class CertificationError(NLBistableError):
    """A computed state failed its final residual / consistency checks."""
