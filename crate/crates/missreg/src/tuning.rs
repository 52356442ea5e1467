//! Penalty selection: log-spaced grids anchored at the null-model thresholds,
//! per-stage BIC, calibrated K-fold cross-validation with the
//! one-standard-error rule, and the warm-started sequential tuner.
//!
//! The three penalties are chosen in order: the stage-1 coefficient penalty
//! with the precision fixed at the identity, then the precision penalty given
//! the stage-1 fit, then the stage-3 coefficient penalty given the estimated
//! precision. Paths run from the most to the least regularized value, feeding
//! each solution forward as the next start point.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CoefficientMatrix, DesignMatrix, MaskedResponse, PrecisionMatrix};
use crate::error::{Error, Result};
use crate::fista::{fit_stage3_counted, smooth_loss, FistaConfig};
use crate::glasso::{fit_precision_warm, glasso_objective, GlassoConfig, GlassoProblem, GlassoWarm};
use crate::lasso::{composite_kkt_residual, fit_stage1_counted, CdConfig};
use crate::linalg;
use crate::psd::{project_psd_maxnorm, PsdProjectConfig, PsdProjection};
use crate::surrogate::{plugin_error_cov, SurrogateMoments};

/// Model-selection rule for the penalty grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    Bic,
    CvMin,
    Cv1Se,
}

impl std::str::FromStr for SelectionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bic" => Ok(SelectionRule::Bic),
            "cv.min" => Ok(SelectionRule::CvMin),
            "cv.1se" => Ok(SelectionRule::Cv1Se),
            other => Err(Error::InvalidParameter(format!(
                "unknown selection rule `{other}` (expected bic, cv.min or cv.1se)"
            ))),
        }
    }
}

impl std::fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionRule::Bic => write!(f, "bic"),
            SelectionRule::CvMin => write!(f, "cv.min"),
            SelectionRule::Cv1Se => write!(f, "cv.1se"),
        }
    }
}

/// Descending log-spaced penalty grid from `lambda_max` down to
/// `lambda_max * min_ratio`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
    min_ratio: f64,
}

impl LambdaGrid {
    pub fn new(lambda_max: f64, n_lambda: usize, min_ratio: f64) -> Result<Self> {
        if !(lambda_max > 0.0) || !lambda_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda_max must be positive, got {lambda_max}"
            )));
        }
        if n_lambda == 0 {
            return Err(Error::InvalidParameter("n_lambda must be at least 1".into()));
        }
        if !(0.0 < min_ratio && min_ratio < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "min_ratio must lie in (0, 1), got {min_ratio}"
            )));
        }
        let mut values = Vec::with_capacity(n_lambda);
        if n_lambda == 1 {
            values.push(lambda_max);
        } else {
            let log_max = lambda_max.ln();
            let log_step = min_ratio.ln() / (n_lambda - 1) as f64;
            for i in 0..n_lambda {
                values.push((log_max + log_step * i as f64).exp());
            }
            values[0] = lambda_max;
            values[n_lambda - 1] = lambda_max * min_ratio;
        }
        Ok(LambdaGrid { values, min_ratio })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min_ratio(&self) -> f64 {
        self.min_ratio
    }
}

/// Smallest coefficient penalty that zeroes the stage-1 fit exactly:
/// the maximum entry of `|2 s_xy_hat|`. Returns a tiny positive value when
/// the cross moment is identically zero.
pub fn lambda_b_max(m: &SurrogateMoments) -> f64 {
    let v = 2.0 * linalg::max_abs(m.s_xy_hat());
    if v > 0.0 {
        v
    } else {
        1e-12
    }
}

/// Smallest precision penalty that yields an exactly diagonal estimate: the
/// maximum absolute off-diagonal of the (projected) error covariance.
/// Returns 0 for a 1x1 input.
pub fn lambda_theta_max(s_ee: &Array2<f64>) -> f64 {
    linalg::max_abs_offdiag(s_ee)
}

/// Which stage's information criterion to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BicStage {
    /// Coefficients with the precision fixed at the identity.
    Stage1,
    /// Precision given fixed coefficients.
    Stage2,
    /// Coefficients given a fixed precision.
    Stage3,
}

fn fit_trace(m: &SurrogateMoments, b: &CoefficientMatrix, theta: Option<&PrecisionMatrix>) -> f64 {
    // tr[theta (B' s_xx B / 2 - s_xy' B)]
    let g = m.s_xx().dot(b.values());
    let fit = 0.5 * b.values().t().dot(&g) - m.s_xy_hat().t().dot(b.values());
    match theta {
        None => (0..fit.nrows()).map(|i| fit[[i, i]]).sum(),
        Some(t) => {
            let tv = t.values();
            let mut acc = 0.0;
            for i in 0..fit.nrows() {
                for j in 0..fit.ncols() {
                    acc += tv[[i, j]] * fit[[j, i]];
                }
            }
            acc
        }
    }
}

/// Bayesian information criterion for the given stage.
pub fn bic(
    m: &SurrogateMoments,
    b: &CoefficientMatrix,
    theta: &PrecisionMatrix,
    n: usize,
    stage: BicStage,
) -> Result<f64> {
    let q = m.q() as f64;
    let nf = n as f64;
    let log_n = nf.ln();
    match stage {
        BicStage::Stage1 => {
            let fit = fit_trace(m, b, None);
            Ok(2.0 * nf * fit + log_n * (q + b.nnz() as f64))
        }
        BicStage::Stage2 => {
            let fit = fit_trace(m, b, Some(theta));
            let logdet = theta.logdet()?;
            Ok(2.0 * nf * fit - nf * logdet + log_n * (q + theta.edge_count() as f64))
        }
        BicStage::Stage3 => {
            let fit = fit_trace(m, b, Some(theta));
            Ok(2.0 * nf * fit + log_n * (q + b.nnz() as f64))
        }
    }
}

/// One scored grid point of a tuning run. `stage` is 1, 2 or 3.
#[derive(Debug, Clone, Serialize)]
pub struct TuneCell {
    pub lambda_theta: f64,
    pub lambda_b: f64,
    pub stage: u8,
    pub score: f64,
    pub se: Option<f64>,
}

/// All scored grid points and the selected penalties.
#[derive(Debug, Clone, Serialize)]
pub struct TuneSurface {
    pub grid_b: LambdaGrid,
    pub grid_theta: LambdaGrid,
    pub rule: SelectionRule,
    pub cells: Vec<TuneCell>,
    pub selected_lambda_b1: f64,
    pub selected_lambda_theta: f64,
    pub selected_lambda_b2: f64,
}

impl TuneSurface {
    /// Writes the scored cells as CSV `(lambda_theta, lambda_b, stage, score, se)`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lambda_theta", "lambda_b", "stage", "score", "se"])?;
        for c in &self.cells {
            w.write_record([
                format!("{:.16e}", c.lambda_theta),
                format!("{:.16e}", c.lambda_b),
                c.stage.to_string(),
                format!("{:.16e}", c.score),
                c.se.map(|s| format!("{:.16e}", s)).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tuning options. `min_ratio = None` selects 0.01 when `n > p + q` and 0.1
/// otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneConfig {
    pub rule: SelectionRule,
    pub n_lambda: usize,
    pub min_ratio: Option<f64>,
    pub folds: usize,
    pub seed: u64,
    pub fast: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            rule: SelectionRule::Bic,
            n_lambda: 50,
            min_ratio: None,
            folds: 5,
            seed: 0,
            fast: false,
        }
    }
}

fn auto_min_ratio(n: usize, p: usize, q: usize) -> f64 {
    if n > p + q {
        0.01
    } else {
        0.1
    }
}

/// Solver diagnostics recorded for a completed three-stage fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub stage1_iterations: usize,
    pub stage1_kkt: f64,
    pub stage1_objective: f64,
    pub projection_distance: f64,
    pub projection_clip_distance: f64,
    pub stage2_iterations: usize,
    pub stage2_kkt: f64,
    pub stage2_objective: f64,
    pub stage3_iterations: usize,
    pub stage3_kkt: f64,
    pub stage3_objective: f64,
}

/// A completed three-stage fit. Coefficients are on the standardized
/// predictor scale; use [`FitResult::b1_original`] / [`FitResult::b2_original`]
/// to undo the column scaling.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub b1: CoefficientMatrix,
    pub theta: PrecisionMatrix,
    pub b2: CoefficientMatrix,
    pub lambda_b1: f64,
    pub lambda_theta: f64,
    pub lambda_b2: f64,
    pub rho_hat: Array1<f64>,
    pub x_centers: Array1<f64>,
    pub x_scales: Array1<f64>,
    pub z_centers: Array1<f64>,
    pub n: usize,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    fn rescale(&self, b: &CoefficientMatrix) -> CoefficientMatrix {
        let mut v = b.values().clone();
        for (k, &s) in self.x_scales.iter().enumerate() {
            v.row_mut(k).mapv_inplace(|x| x / s);
        }
        CoefficientMatrix::new(v)
    }

    /// Stage-1 coefficients on the original predictor scale.
    pub fn b1_original(&self) -> CoefficientMatrix {
        self.rescale(&self.b1)
    }

    /// Stage-3 coefficients on the original predictor scale.
    pub fn b2_original(&self) -> CoefficientMatrix {
        self.rescale(&self.b2)
    }
}

struct Stage2Pieces {
    projection: PsdProjection,
    theta: PrecisionMatrix,
    iterations: usize,
    kkt: f64,
}

fn run_stage2(
    m: &SurrogateMoments,
    b1: &CoefficientMatrix,
    lambda_theta: f64,
) -> Result<Stage2Pieces> {
    let s_ee = plugin_error_cov(m, b1)?;
    let projection = project_psd_maxnorm(&s_ee, &PsdProjectConfig::default())?;
    let prob = GlassoProblem {
        cov: projection.matrix.clone(),
        lambda_theta,
        diag_floor: None,
    };
    let fit = fit_precision_warm(&prob, &GlassoConfig::default(), None, None)?;
    Ok(Stage2Pieces {
        projection,
        theta: fit.theta,
        iterations: fit.iterations,
        kkt: fit.kkt_residual,
    })
}

fn assemble_result(
    x: &DesignMatrix,
    z: &MaskedResponse,
    m: &SurrogateMoments,
    b1: CoefficientMatrix,
    stage2: Stage2Pieces,
    b2: CoefficientMatrix,
    stage1_iterations: usize,
    stage3_iterations: usize,
    stage3_kkt: f64,
    lambdas: (f64, f64, f64),
) -> Result<FitResult> {
    let (lambda_b1, lambda_theta, lambda_b2) = lambdas;
    let g1 = (m.s_xx().dot(b1.values()) - m.s_xy_hat()).to_owned();
    let stage1_kkt = composite_kkt_residual(&g1, b1.values(), 0.5 * lambda_b1);
    let ident = PrecisionMatrix::identity(m.q());
    let stage1_objective =
        smooth_loss(b1.values(), m, &ident) + 0.5 * lambda_b1 * b1.values().iter().map(|v| v.abs()).sum::<f64>();
    let stage2_objective = glasso_objective(&stage2.projection.matrix, lambda_theta, &stage2.theta)?;
    let stage3_objective = smooth_loss(b2.values(), m, &stage2.theta)
        + 0.5 * lambda_b2 * b2.values().iter().map(|v| v.abs()).sum::<f64>();
    Ok(FitResult {
        b1,
        theta: stage2.theta,
        b2,
        lambda_b1,
        lambda_theta,
        lambda_b2,
        rho_hat: z.rho_hat().clone(),
        x_centers: x.column_centers().clone(),
        x_scales: x.column_scales().clone(),
        z_centers: z.column_centers().clone(),
        n: x.n(),
        diagnostics: FitDiagnostics {
            stage1_iterations,
            stage1_kkt,
            stage1_objective,
            projection_distance: stage2.projection.distance,
            projection_clip_distance: stage2.projection.clip_distance,
            stage2_iterations: stage2.iterations,
            stage2_kkt: stage2.kkt,
            stage2_objective,
            stage3_iterations,
            stage3_kkt,
            stage3_objective,
        },
    })
}

/// Three-stage fit at a fixed penalty pair: `lambda_b` drives stages 1 and 3,
/// `lambda_theta` drives stage 2.
pub fn fit_at(
    x: &DesignMatrix,
    z: &MaskedResponse,
    lambda_b: f64,
    lambda_theta: f64,
) -> Result<FitResult> {
    let m = SurrogateMoments::from_data(x, z)?;
    let (b1, it1) = fit_stage1_counted(&m, lambda_b, None, &CdConfig::default())?;
    let stage2 = run_stage2(&m, &b1, lambda_theta)?;
    let (b2, it3, kkt3) = fit_stage3_counted(
        &m,
        &stage2.theta,
        lambda_b,
        &b1,
        &FistaConfig::default(),
    )?;
    assemble_result(
        x,
        z,
        &m,
        b1,
        stage2,
        b2,
        it1,
        it3,
        kkt3,
        (lambda_b, lambda_theta, lambda_b),
    )
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Largest penalty whose score is within one standard error of the minimum.
fn one_se_index(means: &[f64], ses: &[f64]) -> usize {
    let idx_min = argmin(means);
    let bar = means[idx_min] + ses[idx_min];
    for i in 0..=idx_min {
        if means[i] <= bar {
            return i;
        }
    }
    idx_min
}

fn fold_row_sets(
    n: usize,
    folds: usize,
    seed: u64,
    observed: &Array2<bool>,
) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidParameter("folds must be at least 2".into()));
    }
    if folds > n {
        return Err(Error::InvalidParameter(format!(
            "cannot split {n} rows into {folds} folds"
        )));
    }
    let q = observed.ncols();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut last_bad = (0usize, 0usize);
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut sets: Vec<Vec<usize>> = vec![Vec::new(); folds];
        for (pos, &row) in perm.iter().enumerate() {
            sets[pos % folds].push(row);
        }
        for s in &mut sets {
            s.sort_unstable();
        }
        let mut ok = true;
        'check: for (f, rows) in sets.iter().enumerate() {
            for j in 0..q {
                let val_obs = rows.iter().any(|&i| observed[[i, j]]);
                let train_obs = (0..n)
                    .filter(|i| !rows.contains(i))
                    .any(|i| observed[[i, j]]);
                if !val_obs || !train_obs {
                    ok = false;
                    last_bad = (f, j);
                    break 'check;
                }
            }
        }
        if ok {
            return Ok(sets);
        }
    }
    Err(Error::BadFold {
        fold: last_bad.0,
        column: last_bad.1,
    })
}

struct FoldMoments {
    train: SurrogateMoments,
    val: SurrogateMoments,
}

fn subset_moments(
    x: &Array2<f64>,
    z_values: &Array2<f64>,
    observed: &Array2<bool>,
    rows: &[usize],
) -> Result<SurrogateMoments> {
    let p = x.ncols();
    let q = z_values.ncols();
    let k = rows.len();
    let mut xs = Array2::zeros((k, p));
    let mut zs = Array2::zeros((k, q));
    let mut miss = vec![0usize; q];
    for (r, &i) in rows.iter().enumerate() {
        xs.row_mut(r).assign(&x.row(i));
        zs.row_mut(r).assign(&z_values.row(i));
        for j in 0..q {
            if !observed[[i, j]] {
                miss[j] += 1;
            }
        }
    }
    let rho = Array1::from_iter(miss.iter().map(|&c| c as f64 / k as f64));
    SurrogateMoments::from_raw(&xs, &zs, &rho)
}

fn build_fold_moments(
    x: &DesignMatrix,
    z: &MaskedResponse,
    sets: &[Vec<usize>],
) -> Result<Vec<FoldMoments>> {
    let n = x.n();
    sets.iter()
        .map(|val_rows| {
            let train_rows: Vec<usize> = (0..n).filter(|i| !val_rows.contains(i)).collect();
            Ok(FoldMoments {
                train: subset_moments(x.values(), z.values(), z.observed(), &train_rows)?,
                val: subset_moments(x.values(), z.values(), z.observed(), val_rows)?,
            })
        })
        .collect()
}

/// Surrogate validation loss
/// `tr[s_yy_hat - 2 s_xy_hat' B + B' s_xx B]` on the given moments.
fn calibrated_loss(vm: &SurrogateMoments, b: &CoefficientMatrix) -> f64 {
    let bv = b.values();
    let t_yy: f64 = (0..vm.q()).map(|i| vm.s_yy_hat()[[i, i]]).sum();
    let t_xy: f64 = vm
        .s_xy_hat()
        .iter()
        .zip(bv.iter())
        .map(|(a, b)| a * b)
        .sum();
    let g = vm.s_xx().dot(bv);
    let t_bb: f64 = bv.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
    t_yy - 2.0 * t_xy + t_bb
}

fn mean_and_se(per_fold: &[f64]) -> (f64, f64) {
    let k = per_fold.len() as f64;
    let mean = per_fold.iter().sum::<f64>() / k;
    if per_fold.len() < 2 {
        return (mean, 0.0);
    }
    let var = per_fold.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Stage-1 lasso path along a descending grid with warm starts.
fn stage1_path(
    m: &SurrogateMoments,
    grid: &[f64],
    cfg: &CdConfig,
) -> Result<Vec<CoefficientMatrix>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut warm = CoefficientMatrix::zeros(m.p(), m.q());
    for &lam in grid {
        let (fit, _) = fit_stage1_counted(m, lam, Some(&warm), cfg)?;
        warm = fit.clone();
        out.push(fit);
    }
    Ok(out)
}

/// Graphical-lasso path along a descending grid with warm starts.
fn stage2_path(
    cov: &Array2<f64>,
    grid: &[f64],
    cfg: &GlassoConfig,
) -> Result<Vec<PrecisionMatrix>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut warm: Option<GlassoWarm> = None;
    for &lam in grid {
        let prob = GlassoProblem {
            cov: cov.clone(),
            lambda_theta: lam,
            diag_floor: None,
        };
        let fit = fit_precision_warm(&prob, cfg, warm.as_ref(), None)
            .map_err(|e| Error::at_grid_point(lam, f64::NAN, e))?;
        warm = Some(fit.warm);
        out.push(fit.theta);
    }
    Ok(out)
}

/// Stage-3 path along a descending grid with warm starts, initialized at the
/// stage-1 estimate.
fn stage3_path(
    m: &SurrogateMoments,
    theta: &PrecisionMatrix,
    grid: &[f64],
    init: &CoefficientMatrix,
    cfg: &FistaConfig,
) -> Result<Vec<CoefficientMatrix>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut warm = init.clone();
    for &lam in grid {
        let (fit, _, _) = fit_stage3_counted(m, theta, lam, &warm, cfg)
            .map_err(|e| Error::at_grid_point(f64::NAN, lam, e))?;
        warm = fit.clone();
        out.push(fit);
    }
    Ok(out)
}

/// Grid indices explored by stage 3: all of them, or a window around the
/// stage-1 selection in fast mode.
fn stage3_indices(n_lambda: usize, idx1: usize, fast: bool) -> Vec<usize> {
    if !fast {
        return (0..n_lambda).collect();
    }
    let w = (n_lambda / 10).max(3);
    let lo = idx1.saturating_sub(w);
    let hi = (idx1 + w).min(n_lambda.saturating_sub(1));
    (lo..=hi).collect()
}

/// Runs the sequential three-stage tuning procedure and returns the scored
/// surface together with the final fit (refit on all data in CV modes).
pub fn tune(x: &DesignMatrix, z: &MaskedResponse, cfg: &TuneConfig) -> Result<(TuneSurface, FitResult)> {
    let m = SurrogateMoments::from_data(x, z)?;
    let n = x.n();
    let min_ratio = cfg.min_ratio.unwrap_or_else(|| auto_min_ratio(n, m.p(), m.q()));
    let grid_b = LambdaGrid::new(lambda_b_max(&m), cfg.n_lambda, min_ratio)?;
    match cfg.rule {
        SelectionRule::Bic => tune_bic(x, z, &m, grid_b, min_ratio, cfg),
        SelectionRule::CvMin | SelectionRule::Cv1Se => {
            tune_cv(x, z, &m, grid_b, min_ratio, cfg)
        }
    }
}

fn tune_bic(
    x: &DesignMatrix,
    z: &MaskedResponse,
    m: &SurrogateMoments,
    grid_b: LambdaGrid,
    min_ratio: f64,
    cfg: &TuneConfig,
) -> Result<(TuneSurface, FitResult)> {
    let n = x.n();
    let cd_cfg = CdConfig::default();
    let ident = PrecisionMatrix::identity(m.q());

    // stage 1
    let path1 = stage1_path(m, grid_b.values(), &cd_cfg)?;
    let mut scores1 = Vec::with_capacity(path1.len());
    for b in &path1 {
        scores1.push(bic(m, b, &ident, n, BicStage::Stage1)?);
    }
    let idx1 = argmin(&scores1);
    let lambda_b1 = grid_b.values()[idx1];
    let b1 = path1[idx1].clone();

    // stage 2
    let s_ee = plugin_error_cov(m, &b1)?;
    let projection = project_psd_maxnorm(&s_ee, &PsdProjectConfig::default())?;
    let lt_max = lambda_theta_max(&projection.matrix).max(1e-12);
    let grid_theta = LambdaGrid::new(lt_max, cfg.n_lambda, min_ratio)?;
    let path2 = stage2_path(&projection.matrix, grid_theta.values(), &GlassoConfig::default())?;
    let mut scores2 = Vec::with_capacity(path2.len());
    for theta in &path2 {
        scores2.push(bic(m, &b1, theta, n, BicStage::Stage2)?);
    }
    let idx2 = argmin(&scores2);
    let lambda_theta = grid_theta.values()[idx2];
    let theta = path2[idx2].clone();

    // stage 3
    let idx3_set = stage3_indices(grid_b.len(), idx1, cfg.fast);
    let grid3: Vec<f64> = idx3_set.iter().map(|&i| grid_b.values()[i]).collect();
    let path3 = stage3_path(m, &theta, &grid3, &b1, &FistaConfig::default())?;
    let mut scores3 = Vec::with_capacity(path3.len());
    for b in &path3 {
        scores3.push(bic(m, b, &theta, n, BicStage::Stage3)?);
    }
    let idx3 = argmin(&scores3);
    let lambda_b2 = grid3[idx3];
    let b2 = path3[idx3].clone();

    let mut cells = Vec::new();
    for (i, &s) in scores1.iter().enumerate() {
        cells.push(TuneCell {
            lambda_theta: lt_max,
            lambda_b: grid_b.values()[i],
            stage: 1,
            score: s,
            se: None,
        });
    }
    for (i, &s) in scores2.iter().enumerate() {
        cells.push(TuneCell {
            lambda_theta: grid_theta.values()[i],
            lambda_b: lambda_b1,
            stage: 2,
            score: s,
            se: None,
        });
    }
    for (i, &s) in scores3.iter().enumerate() {
        cells.push(TuneCell {
            lambda_theta,
            lambda_b: grid3[i],
            stage: 3,
            score: s,
            se: None,
        });
    }

    // diagnostics for the selected triple come from a compact refit of the
    // selected stage-2/3 pieces
    let stage2 = run_stage2(m, &b1, lambda_theta)?;
    let (b2_refit, it3, kkt3) =
        fit_stage3_counted(m, &stage2.theta, lambda_b2, &b2, &FistaConfig::default())?;
    let result = assemble_result(
        x,
        z,
        m,
        b1,
        stage2,
        b2_refit,
        0,
        it3,
        kkt3,
        (lambda_b1, lambda_theta, lambda_b2),
    )?;
    let surface = TuneSurface {
        grid_b,
        grid_theta,
        rule: cfg.rule,
        cells,
        selected_lambda_b1: lambda_b1,
        selected_lambda_theta: lambda_theta,
        selected_lambda_b2: lambda_b2,
    };
    Ok((surface, result))
}

fn tune_cv(
    x: &DesignMatrix,
    z: &MaskedResponse,
    m: &SurrogateMoments,
    grid_b: LambdaGrid,
    min_ratio: f64,
    cfg: &TuneConfig,
) -> Result<(TuneSurface, FitResult)> {
    let n = x.n();
    let cd_cfg = CdConfig::default();
    let sets = fold_row_sets(n, cfg.folds, cfg.seed, z.observed())?;
    let folds = build_fold_moments(x, z, &sets)?;
    let use_1se = cfg.rule == SelectionRule::Cv1Se;

    // stage 1: per-fold paths, calibrated validation loss
    let paths1: Vec<Vec<CoefficientMatrix>> = folds
        .par_iter()
        .map(|f| stage1_path(&f.train, grid_b.values(), &cd_cfg))
        .collect::<Result<_>>()?;
    let (means1, ses1) = score_paths(&folds, &paths1, grid_b.len());
    let idx1 = if use_1se {
        one_se_index(&means1, &ses1)
    } else {
        argmin(&means1)
    };
    let lambda_b1 = grid_b.values()[idx1];
    let (b1, _) = fit_stage1_counted(m, lambda_b1, None, &cd_cfg)?;

    // stage 2: per-fold projected plug-in covariance, glasso paths scored by
    // the validation negative log-likelihood
    let fold_b1: Vec<&CoefficientMatrix> = paths1.iter().map(|p| &p[idx1]).collect();
    let fold_projs: Vec<(Array2<f64>, Array2<f64>)> = folds
        .par_iter()
        .zip(fold_b1.par_iter())
        .map(|(f, b)| {
            let train_cov = plugin_error_cov(&f.train, b)?;
            let val_cov = plugin_error_cov(&f.val, b)?;
            let pt = project_psd_maxnorm(&train_cov, &PsdProjectConfig::default())?;
            let pv = project_psd_maxnorm(&val_cov, &PsdProjectConfig::default())?;
            Ok((pt.matrix, pv.matrix))
        })
        .collect::<Result<_>>()?;
    let lt_max_folds = fold_projs
        .iter()
        .map(|(t, _)| lambda_theta_max(t))
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let grid_theta = LambdaGrid::new(lt_max_folds, cfg.n_lambda, min_ratio)?;
    let theta_paths: Vec<Vec<PrecisionMatrix>> = fold_projs
        .par_iter()
        .map(|(t, _)| stage2_path(t, grid_theta.values(), &GlassoConfig::default()))
        .collect::<Result<_>>()?;
    let mut means2 = Vec::with_capacity(grid_theta.len());
    let mut ses2 = Vec::with_capacity(grid_theta.len());
    for i in 0..grid_theta.len() {
        let per_fold: Vec<f64> = theta_paths
            .iter()
            .zip(fold_projs.iter())
            .map(|(path, (_, val_cov))| {
                let theta = &path[i];
                let tv = theta.values();
                let mut tr = 0.0;
                for a in 0..tv.nrows() {
                    for b in 0..tv.ncols() {
                        tr += tv[[a, b]] * val_cov[[b, a]];
                    }
                }
                Ok(tr - theta.logdet()?)
            })
            .collect::<Result<_>>()?;
        let (mean, se) = mean_and_se(&per_fold);
        means2.push(mean);
        ses2.push(se);
    }
    // the one-standard-error rule applies to the coefficient penalty only
    let idx2 = argmin(&means2);
    let lambda_theta = grid_theta.values()[idx2];
    let stage2 = run_stage2(m, &b1, lambda_theta)?;

    // stage 3: per-fold FISTA paths given the fold precision estimates
    let paths3: Vec<Vec<CoefficientMatrix>> = folds
        .par_iter()
        .zip(theta_paths.par_iter())
        .zip(fold_b1.par_iter())
        .map(|((f, tpath), b)| {
            stage3_path(
                &f.train,
                &tpath[idx2],
                grid_b.values(),
                b,
                &FistaConfig::default(),
            )
        })
        .collect::<Result<_>>()?;
    let (means3, ses3) = score_paths(&folds, &paths3, grid_b.len());
    let idx3 = if use_1se {
        one_se_index(&means3, &ses3)
    } else {
        argmin(&means3)
    };
    let lambda_b2 = grid_b.values()[idx3];
    let (b2, it3, kkt3) =
        fit_stage3_counted(m, &stage2.theta, lambda_b2, &b1, &FistaConfig::default())?;

    let mut cells = Vec::new();
    for (i, (&mean, &se)) in means1.iter().zip(ses1.iter()).enumerate() {
        cells.push(TuneCell {
            lambda_theta: lt_max_folds,
            lambda_b: grid_b.values()[i],
            stage: 1,
            score: mean,
            se: Some(se),
        });
    }
    for (i, (&mean, &se)) in means2.iter().zip(ses2.iter()).enumerate() {
        cells.push(TuneCell {
            lambda_theta: grid_theta.values()[i],
            lambda_b: lambda_b1,
            stage: 2,
            score: mean,
            se: Some(se),
        });
    }
    for (i, (&mean, &se)) in means3.iter().zip(ses3.iter()).enumerate() {
        cells.push(TuneCell {
            lambda_theta,
            lambda_b: grid_b.values()[i],
            stage: 3,
            score: mean,
            se: Some(se),
        });
    }

    let result = assemble_result(
        x,
        z,
        m,
        b1,
        stage2,
        b2,
        0,
        it3,
        kkt3,
        (lambda_b1, lambda_theta, lambda_b2),
    )?;
    let surface = TuneSurface {
        grid_b,
        grid_theta,
        rule: cfg.rule,
        cells,
        selected_lambda_b1: lambda_b1,
        selected_lambda_theta: lambda_theta,
        selected_lambda_b2: lambda_b2,
    };
    Ok((surface, result))
}

fn score_paths(
    folds: &[FoldMoments],
    paths: &[Vec<CoefficientMatrix>],
    n_lambda: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut means = Vec::with_capacity(n_lambda);
    let mut ses = Vec::with_capacity(n_lambda);
    for i in 0..n_lambda {
        let per_fold: Vec<f64> = folds
            .iter()
            .zip(paths.iter())
            .map(|(f, p)| calibrated_loss(&f.val, &p[i]))
            .collect();
        let (mean, se) = mean_and_se(&per_fold);
        means.push(mean);
        ses.push(se);
    }
    (means, ses)
}

/// Calibrated K-fold cross-validation score of the full three-stage pipeline
/// at a fixed penalty pair. Returns the mean and standard error of the
/// validation loss across folds; fold assignment is deterministic in `seed`.
pub fn cv_score(
    x: &DesignMatrix,
    z: &MaskedResponse,
    folds: usize,
    lambda_b: f64,
    lambda_theta: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let sets = fold_row_sets(x.n(), folds, seed, z.observed())?;
    let fm = build_fold_moments(x, z, &sets)?;
    let losses: Vec<f64> = fm
        .par_iter()
        .map(|f| {
            let (b1, _) = fit_stage1_counted(&f.train, lambda_b, None, &CdConfig::default())?;
            let train_cov = plugin_error_cov(&f.train, &b1)?;
            let proj = project_psd_maxnorm(&train_cov, &PsdProjectConfig::default())?;
            let prob = GlassoProblem {
                cov: proj.matrix,
                lambda_theta,
                diag_floor: None,
            };
            let theta = fit_precision_warm(&prob, &GlassoConfig::default(), None, None)?.theta;
            let (b2, _, _) =
                fit_stage3_counted(&f.train, &theta, lambda_b, &b1, &FistaConfig::default())?;
            Ok(calibrated_loss(&f.val, &b2))
        })
        .collect::<Result<_>>()?;
    Ok(mean_and_se(&losses))
}
