"""Desk-scale laboratory for confidence-calibrated adversarial training.

Train small dense classifiers normally, adversarially, or with
confidence calibration; attack them with maximum-confidence PGD and
black-box sampling under L-inf/L2/L1/L0 threat models; and evaluate
robustness with confidence-thresholded rejection metrics.
"""

from .attacks import (
    AttackConfig,
    AttackOutcome,
    distal_attack,
    frame_mask,
    objective_ce,
    objective_conf,
    pgd_attack,
    pgd_attack_batch,
    random_sampling_attack,
    worst_case_merge,
)
from .data import Dataset, load_idx, make_two_gaussians, make_two_point, write_idx
from .evaluation import (
    EvalRecord,
    ThresholdReport,
    build_eval_records,
    conf_thresholded_rte,
    conf_thresholded_te,
    fpr_at_threshold,
    roc_auc,
    select_threshold,
)
from .geometry import (
    ThreatModel,
    init_perturbation,
    lp_norm,
    normalize_gradient,
    project_ball,
    project_box,
)
from .net import (
    DenseLayer,
    Network,
    backward,
    cross_entropy_soft,
    forward,
    load_network,
    make_mlp,
    save_network,
    sgd_step,
    softmax,
)
from .training import (
    CcatConfig,
    TargetDistribution,
    fit,
    make_target,
    onehot_weight,
    train_epoch_at,
    train_epoch_ccat,
    train_epoch_normal,
)
from .twopoint import (
    ToyParams,
    ToyProblem,
    at_optimal_params,
    ccat_optimal_params,
    ccat_zero_error_condition,
    numeric_minimize_expected_loss,
    toy_error,
)

__version__ = "0.1.0"
