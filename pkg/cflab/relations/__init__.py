from .checks import (
    DEFAULT_RELATIONS,
    RELATIONS,
    RelationReport,
    check_bc_zero_margin,
    check_mawu_directau,
    check_num_neg_limit,
    check_ssm_equals_bpr,
    check_tau_inf_limit,
    check_tau_zero_limit,
    check_rotation_compactness,
    run_relations,
    write_relations,
)

__all__ = [
    'DEFAULT_RELATIONS',
    'RELATIONS',
    'RelationReport',
    'check_bc_zero_margin',
    'check_mawu_directau',
    'check_num_neg_limit',
    'check_ssm_equals_bpr',
    'check_tau_inf_limit',
    'check_tau_zero_limit',
    'check_rotation_compactness',
    'run_relations',
    'write_relations',
]
