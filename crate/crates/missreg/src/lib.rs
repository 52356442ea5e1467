//! Sparse multivariate regression with correlated errors and responses
//! missing completely at random.
//!
//! The estimator runs in three stages on bias-corrected moment matrices:
//!
//! 1. column-wise covariance-form lasso for an initial coefficient matrix,
//! 2. graphical lasso on the PSD-projected plug-in error covariance for the
//!    error precision matrix,
//! 3. FISTA with backtracking line search to refine the coefficients using
//!    the estimated precision matrix.
//!
//! Penalties are tuned by a per-stage BIC or by calibrated cross-validation
//! over warm-started regularization paths. The [`simulate`] module generates
//! the synthetic designs used by the benchmark scenarios, and [`io`] handles
//! the CSV/JSON formats shared with the command-line tool.

pub mod data;
pub mod error;
pub mod fista;
pub mod glasso;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod psd;
pub mod reference;
pub mod simulate;
pub mod surrogate;
pub mod tuning;

pub use data::{
    second_moment_mask, CoefficientMatrix, DesignMatrix, MaskedResponse, PrecisionMatrix,
};
pub use error::{Error, Result};
pub use fista::{fit_stage3, prox_l1, smooth_grad, smooth_loss, FistaConfig, LineSearchConfig};
pub use glasso::{fit_precision, fit_stage2, GlassoConfig, GlassoProblem, Stage2Fit};
pub use lasso::{fit_stage1, solve_column, CdConfig, LassoProblem};
pub use psd::{clip_to_psd, project_psd_maxnorm, PsdProjectConfig, PsdProjection};
pub use simulate::{
    evaluate, gen_dataset, run_scenario, MetricsReport, Scenario, ScenarioConfig, ScenarioReport,
    SimulationSpec,
};
pub use surrogate::{plugin_error_cov, surrogate_xy, surrogate_yy, SurrogateMoments};
pub use tuning::{
    bic, cv_score, fit_at, lambda_b_max, lambda_theta_max, tune, BicStage, FitResult, LambdaGrid,
    SelectionRule, TuneConfig, TuneSurface,
};
