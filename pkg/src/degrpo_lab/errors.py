"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class IntegrityError(RuntimeError):
    """Rollout data does not match the policy snapshot it claims to come from."""


class TrainingAborted(RuntimeError):
    """Non-finite values appeared during training."""

    def __init__(self, message, step=None, dump_path=None):
        self.step = step
        self.dump_path = dump_path
        super().__init__(message)
