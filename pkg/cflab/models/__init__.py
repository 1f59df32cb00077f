from .checkpoint import load_checkpoint, load_state, save_checkpoint, save_state
from .encoders import (
    LightGCNEncoder,
    MFEncoder,
    NormalizedAdjacency,
    Representations,
    build_encoder,
    lightgcn_forward,
    mf_forward,
)
from .state import ModelState, PARAM_NAMES

__all__ = [
    'load_checkpoint',
    'load_state',
    'save_checkpoint',
    'save_state',
    'LightGCNEncoder',
    'MFEncoder',
    'NormalizedAdjacency',
    'Representations',
    'build_encoder',
    'lightgcn_forward',
    'mf_forward',
    'ModelState',
    'PARAM_NAMES',
]
