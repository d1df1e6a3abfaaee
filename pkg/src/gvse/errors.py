"""Exception types shared across the package."""


class GvseError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GvseError):
    """Operands have incompatible shapes."""


class ConfigError(GvseError):
    """A configuration value is out of range or inconsistent."""


class ContractError(GvseError):
    """A caller violated an operation's precondition."""


class NumericFault(GvseError):
    """A NaN/Inf appeared where only finite values are allowed."""


class ValidationError(GvseError):
    """On-disk data failed validation on load."""


class DegenerateDataError(GvseError):
    """A category or attribute has no members / no occurrences."""


class EmptyGraphError(GvseError):
    """No co-occurring attribute pair exists, so no graph can be built."""


class SplitError(GvseError):
    """Seen/unseen class split is not a disjoint cover."""


class OracleError(GvseError):
    """A gradient-check closure turned out to be non-deterministic."""


class ArtifactMismatch(GvseError):
    """A checkpoint and a config do not belong together."""
