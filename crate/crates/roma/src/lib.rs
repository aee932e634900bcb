//! Mediation analysis for random objects.
//!
//! Exposures, mediators, and outcomes may live in general metric spaces
//! (Euclidean vectors, univariate distributions under Wasserstein-2,
//! compositions on the sphere, SPD matrices under Frobenius). Outcomes are
//! embedded into a Hilbert space; exposure and mediator enter through
//! reproducing kernels, and the natural direct and indirect effects are
//! estimated in closed form from regularized Gram systems. Pointwise
//! confidence intervals and global tests come from plug-in variance
//! functionals and weighted chi-square null distributions, with no
//! resampling. A simulation harness generates the benchmark scenarios and
//! scores mean squared error, interval coverage, and test size/power.

pub mod cli_io;
pub mod error;
pub mod estimator;
pub mod gram_algebra;
pub mod inference;
pub mod kernels;
pub mod object_spaces;
pub mod simulation;
pub mod tuning;

pub use error::{Result, RomaError};
pub use estimator::{fit, EffectKind, EffectVector, MediationFit, PhiPrediction};
pub use gram_algebra::{center, coord_of, eval_vector, sym_eigs, tikhonov_apply, Basis, CoordVector, GramSystem};
pub use inference::{
    ci_nde, ci_nie, residual_covariances, test_nde, test_nie, variance_functional_x,
    variance_functional_z, weighted_chisq_cdf, CdfMethod, EffectInference, Interval,
    ResidualCovariances, WeightedChiSq,
};
pub use kernels::{bandwidth_grid, gram, joint_gram, kernel_eval, GramMatrix, KernelKind, KernelSpec};
pub use object_spaces::{statrs_normal_quantiles, 
    embed_outcome, metric_distance, wasserstein2_empirical, GridMeta, HilbertVector, MetricKind,
    ObjectPoint, QuantileGridSpec, DEFAULT_QUANTILE_GRID,
};
pub use simulation::{
    generate, run_campaign, run_size_power, true_effects, CampaignConfig, Dataset, EffectChannel,
    KernelMode, ReplicationReport, ScenarioId, ScenarioSpec, SizePowerReport, SizePowerSpec,
    TrueEffects, TuningMode,
};
pub use tuning::{gcv_phi, gcv_outcome, select, GcvCandidate, GcvTrace, KernelFamily, SelectConfig, Selection};
