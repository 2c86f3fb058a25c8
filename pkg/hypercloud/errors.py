class HyperCloudError(RuntimeError):
    """Base class for every error raised on purpose by this package."""


class ShapeError(HyperCloudError, ValueError):
    pass


class DomainError(HyperCloudError, ValueError):
    """A value left the domain of an operation (log of a non-positive
    number, non-finite input, exp overflow)."""


class CloudFormatError(HyperCloudError):
    pass


class CheckpointError(HyperCloudError):
    pass


class ConfigError(HyperCloudError):
    pass


class DivergenceError(HyperCloudError):
    def __init__(self, step: int, value: float):
        super().__init__(f"Loss became non-finite ({value}) at step {step}; aborting.")
        self.step = step
        self.value = value
