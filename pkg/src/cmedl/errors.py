"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised for invalid configuration values (bad sizes, ranges, enum names)."""


class TrainingDiverged(RuntimeError):
    """Raised when a loss component becomes non-finite during training."""

    def __init__(self, component: str, value: float):
        super().__init__(f"non-finite loss component {component!r}: {value}")
        self.component = component
        self.value = value
