from .alignment import directau, mawu
from .base import LossEvaluation, margin_cosine, uniformity
from .gradcheck import GradCheckResult, grad_check
from .margins import MarginModel, effective_margins, inverse_popularity_margins, margin_value
from .pairwise import bpr, cml, sml
from .pointwise import bce, mcl, uib
from .router import LOSS_FAMILIES, LOSS_FUNCTIONS, LossRouter, NegativePlan, compute_loss
from .setwise import bc, ccl, ssm

__all__ = [
    'directau',
    'mawu',
    'LossEvaluation',
    'margin_cosine',
    'uniformity',
    'GradCheckResult',
    'grad_check',
    'MarginModel',
    'effective_margins',
    'inverse_popularity_margins',
    'margin_value',
    'bpr',
    'cml',
    'sml',
    'bce',
    'mcl',
    'uib',
    'LOSS_FAMILIES',
    'LOSS_FUNCTIONS',
    'LossRouter',
    'NegativePlan',
    'compute_loss',
    'bc',
    'ccl',
    'ssm',
]
