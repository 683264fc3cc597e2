"""Exception types shared across the package."""


class MetaTrustError(Exception):
    pass


class ConfigError(MetaTrustError, ValueError):
    """Invalid or unknown configuration value."""


class DataQualityError(MetaTrustError, ValueError):
    """A numeric input that should be finite was not."""


class PreconditionError(MetaTrustError, ValueError):
    pass


class ArtifactError(MetaTrustError):
    """Run artifacts are missing or unreadable."""
