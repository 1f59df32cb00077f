from .metrics import CUTOFFS, Evaluator, ndcg_at_n, recall_at_n
from .report import MarginProfile, MetricsReport, compare_reports, group_report, margin_popularity_profile

__all__ = [
    'CUTOFFS',
    'Evaluator',
    'ndcg_at_n',
    'recall_at_n',
    'MarginProfile',
    'MetricsReport',
    'compare_reports',
    'group_report',
    'margin_popularity_profile',
]
