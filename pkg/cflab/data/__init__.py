from .dataset import (
    Interaction,
    InteractionDataset,
    build_dataset,
    ingest,
    kcore_filter,
    load_dataset,
    save_dataset,
    split,
)
from .sampler import Batch, NEGATIVE_SAMPLERS, get_sampler, sample_negatives
from .statistics import dataset_stats, gini_index, suggest_gamma_ratio
from .synthetic import SyntheticSpec, generate_synthetic, parse_synthetic_spec

__all__ = [
    'Interaction',
    'InteractionDataset',
    'build_dataset',
    'ingest',
    'kcore_filter',
    'load_dataset',
    'save_dataset',
    'split',
    'Batch',
    'NEGATIVE_SAMPLERS',
    'get_sampler',
    'sample_negatives',
    'dataset_stats',
    'gini_index',
    'suggest_gamma_ratio',
    'SyntheticSpec',
    'generate_synthetic',
    'parse_synthetic_spec',
]
