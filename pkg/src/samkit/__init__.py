"""samkit: sharpness-aware minimization with adaptive SAM/ERM switching.

The package bundles a small float64 autodiff core, tiny MLPs and analytic
benchmark landscapes, the SAM/ERM optimizer family with the EMA-triggered
adaptive variants, sharpness diagnostics, and a seeded experiment harness
with a CLI.
"""

from samkit.data import (
    LabeledDataset,
    NoiseSpec,
    inject_label_noise,
    load_csv,
    make_dataset,
    minibatch_iter,
    save_csv,
)
from samkit.errors import (
    ConfigurationError,
    DegenerateGradient,
    InsufficientDataError,
    NumericError,
    UsageError,
)
from samkit.estimator import SharpnessAwareClassifier
from samkit.harness import (
    ExperimentConfig,
    RunRecord,
    SweepResult,
    emit_reports,
    lambda_grid,
    load_config,
    noise_robustness_suite,
    run_experiment,
    save_config,
    sweep,
)
from samkit.metrics import (
    BoundCheck,
    QqReport,
    VarianceReport,
    check_gd_bound,
    convergence_trend,
    full_grad_norm,
    gradient_variance,
    qq_points,
    run_full_batch,
    sample_grad_norms,
)
from samkit.models import AnalyticLandscape, Mlp, MlpSpec
from samkit.optim import (
    ALGORITHMS,
    GradNormStats,
    Optimizer,
    StepTrace,
    ThresholdSchedule,
    ema_update,
    looksam_compose,
    looksam_decompose,
    looksam_trigger,
    sam_fraction,
    sam_perturb,
    sam_trigger,
    sam_zeta,
    ss_sam_trigger,
    threshold_at,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "AnalyticLandscape",
    "BoundCheck",
    "ConfigurationError",
    "DegenerateGradient",
    "ExperimentConfig",
    "GradNormStats",
    "InsufficientDataError",
    "LabeledDataset",
    "Mlp",
    "MlpSpec",
    "NoiseSpec",
    "NumericError",
    "Optimizer",
    "QqReport",
    "RunRecord",
    "SharpnessAwareClassifier",
    "StepTrace",
    "SweepResult",
    "ThresholdSchedule",
    "UsageError",
    "VarianceReport",
    "check_gd_bound",
    "convergence_trend",
    "ema_update",
    "emit_reports",
    "full_grad_norm",
    "gradient_variance",
    "inject_label_noise",
    "lambda_grid",
    "load_config",
    "load_csv",
    "looksam_compose",
    "looksam_decompose",
    "looksam_trigger",
    "make_dataset",
    "minibatch_iter",
    "noise_robustness_suite",
    "qq_points",
    "run_experiment",
    "run_full_batch",
    "sam_fraction",
    "sam_perturb",
    "sam_trigger",
    "sam_zeta",
    "sample_grad_norms",
    "save_config",
    "save_csv",
    "ss_sam_trigger",
    "sweep",
    "threshold_at",
    "train",
]
