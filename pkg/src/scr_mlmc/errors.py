class ConfigError(ValueError):
    """Invalid estimator, model or experiment configuration."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-convergence, non-finite output)."""
