class CFLabError(Exception):
    """Base class for every error raised by cflab."""


class DataFormatError(CFLabError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class EmptyDatasetError(CFLabError):
    pass


class StatisticError(CFLabError):
    pass


class SamplingError(CFLabError):
    pass


class ConfigError(CFLabError):
    pass


class OptimizerError(CFLabError):
    def __init__(self, name: str, step: int, message: str = "non-finite gradient"):
        self.name = name
        self.step = step
        super().__init__(f"{message} in '{name}' at step {step}")


class GradientCheckError(CFLabError):
    pass


class DivergenceError(CFLabError):
    pass
