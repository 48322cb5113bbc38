"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Inconsistent dimensions, presets or experiment settings."""


class InputError(ValueError):
    """A malformed argument (wrong length, NaN, negative probability, ...)."""


class RealizabilityError(RuntimeError):
    """The expert is no longer consistent with the learner's hypothesis set."""


class EmptyModelError(RuntimeError):
    """Every member of the policy class has infinite cumulative loss."""


class EnumerationTooLarge(ValueError):
    """An exact enumeration would exceed the path budget."""
