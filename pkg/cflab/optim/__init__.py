from .adam import Adam, AdamState, adam_step, init_params, inverse_softplus, xavier_bound

__all__ = [
    'Adam',
    'AdamState',
    'adam_step',
    'init_params',
    'inverse_softplus',
    'xavier_bound',
]
