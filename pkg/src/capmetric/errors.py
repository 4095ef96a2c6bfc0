"""Exception hierarchy. Every error raised on bad input derives from CapmetricError."""


class CapmetricError(ValueError):
    pass


class SpaceFormatError(CapmetricError):
    """Malformed space file; the message carries the offending line number."""


class ValidationError(CapmetricError):
    """A space, domain or field violates its invariants."""


class ConstraintError(CapmetricError):
    """Set arguments of a capacity-type problem are not nested as required."""


class ParameterError(CapmetricError):
    """Exponents or numeric options out of range."""


class EnumerationCapError(CapmetricError):
    """An exhaustive enumeration would exceed the configured vertex cap."""
