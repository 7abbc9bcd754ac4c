"""Exception types shared across the package."""


class DomainError(ValueError):
    """A query point lies outside the field domain or mesh cover."""


class FieldFormatError(ValueError):
    """Grid-field input records do not form a complete rectangular lattice."""


class MeshError(ValueError):
    """A mesh cannot be built or contains degenerate elements."""


class NumericalError(RuntimeError):
    """A linear solve failed or did not meet its residual tolerance."""


class IterationLimitError(RuntimeError):
    """An iterative solver exceeded its iteration budget."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""
