"""Stein variational gradient descent with virtual-particle and global-batch variants."""

__version__ = "0.1.0"

from .discrepancy import DiscrepancyReport, ksd2_between, ksd2_to_target, mmd2, rkhs_norm_g
from .engines import (
    ConfigurationError,
    DivergenceError,
    Metrics,
    RunConfig,
    RunRecord,
    StepSchedule,
    gb_svgd_run,
    make_schedule,
    svgd_run,
    svgd_step,
    vp_svgd_run,
)
from .kernels import (
    DiagonalSubgradientWarning,
    KernelConstants,
    KernelSpec,
    audit_kernel_assumptions,
    kernel_eval,
    kernel_grad2,
    mixed_partial_trace,
    stein_inner,
)
from .particles import ParticleEnsemble, sample_uniform_ball
from .targets import (
    Dataset,
    TargetModel,
    bayes_logreg_target,
    gaussian_target,
    load_covertype,
    mixture_target,
    recenter,
)
