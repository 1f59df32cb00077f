from .trainer import TrainResult, Trainer, score, train

__all__ = [
    'TrainResult',
    'Trainer',
    'score',
    'train',
]
