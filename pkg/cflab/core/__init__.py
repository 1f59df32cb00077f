from .config import (
    DatasetConfig,
    ExperimentConfig,
    LossConfig,
    TrainConfig,
    build_experiment_config,
    load_config,
)
from .errors import (
    CFLabError,
    ConfigError,
    DataFormatError,
    DivergenceError,
    EmptyDatasetError,
    GradientCheckError,
    OptimizerError,
    SamplingError,
    StatisticError,
)

__all__ = [
    'DatasetConfig',
    'ExperimentConfig',
    'LossConfig',
    'TrainConfig',
    'build_experiment_config',
    'load_config',
    'CFLabError',
    'ConfigError',
    'DataFormatError',
    'DivergenceError',
    'EmptyDatasetError',
    'GradientCheckError',
    'OptimizerError',
    'SamplingError',
    'StatisticError',
]
