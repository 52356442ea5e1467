//! Synthetic data generators for the benchmark scenarios, evaluation metrics,
//! and the scenario runner that reproduces the reference tables at desk scale.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CoefficientMatrix, DesignMatrix, MaskedResponse, PrecisionMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::reference;
use crate::tuning::{tune, FitResult, SelectionRule, TuneConfig};

/// Autoregressive coefficient of the inverse-AR(1) part of the composite
/// (type-2) precision structure.
const TYPE2_AR_COEF: f64 = 0.7;

/// How the sparse coefficient matrix is generated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BScheme {
    /// Exactly `s_max` nonzeros per column, drawn uniformly from [-1, 1].
    ColumnSparse { s_max: usize },
    /// Dense magnitudes in [0.3, 0.7] with random signs, masked elementwise
    /// with probability `s1` and row-wise with probability `s2`.
    BernoulliMask { s1: f64, s2: f64 },
}

/// How the error precision matrix is generated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaScheme {
    /// Inverse AR(1): tridiagonal precision with parameter `rho_eps`.
    Type1 { rho_eps: f64 },
    /// Inverse AR(1) plus a three-block component (independent / weak /
    /// strong complete graphs), diagonally loaded to a minimum eigenvalue
    /// of 0.01.
    Type2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// AR(1) coefficient of the predictor covariance.
    pub x_ar_coef: f64,
    /// Per-column missing probabilities; a single value broadcasts to all
    /// columns.
    pub rho_w: Vec<f64>,
    pub b_scheme: BScheme,
    pub theta_scheme: ThetaScheme,
    pub seed: u64,
}

impl SimulationSpec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.q == 0 {
            return Err(Error::InvalidParameter("n, p, q must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.x_ar_coef) {
            return Err(Error::InvalidParameter(format!(
                "x_ar_coef must lie in [0, 1), got {}",
                self.x_ar_coef
            )));
        }
        if self.rho_w.len() != 1 && self.rho_w.len() != self.q {
            return Err(Error::DimensionMismatch(format!(
                "rho_w has {} entries for q = {}",
                self.rho_w.len(),
                self.q
            )));
        }
        for (j, &r) in self.rho_w.iter().enumerate() {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidRho { index: j, value: r });
            }
        }
        match &self.b_scheme {
            BScheme::ColumnSparse { s_max } => {
                if *s_max > self.p {
                    return Err(Error::InvalidParameter(format!(
                        "s_max = {} exceeds p = {}",
                        s_max, self.p
                    )));
                }
            }
            BScheme::BernoulliMask { s1, s2 } => {
                if !(0.0 < *s1 && *s1 <= 1.0) || !(0.0 < *s2 && *s2 <= 1.0) {
                    return Err(Error::InvalidParameter(
                        "s1 and s2 must lie in (0, 1]".into(),
                    ));
                }
            }
        }
        match &self.theta_scheme {
            ThetaScheme::Type1 { rho_eps } => {
                if !(0.0..1.0).contains(rho_eps) {
                    return Err(Error::InvalidParameter(format!(
                        "rho_eps must lie in [0, 1), got {rho_eps}"
                    )));
                }
            }
            ThetaScheme::Type2 => {
                if self.q < 3 || self.q % 3 != 0 {
                    return Err(Error::InvalidParameter(format!(
                        "type-2 structure needs q divisible by 3, got {}",
                        self.q
                    )));
                }
            }
        }
        Ok(())
    }

    fn rho_w_full(&self) -> Vec<f64> {
        if self.rho_w.len() == 1 {
            vec![self.rho_w[0]; self.q]
        } else {
            self.rho_w.clone()
        }
    }
}

/// True parameters behind a simulated dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub b_star: CoefficientMatrix,
    pub sigma_xx: Array2<f64>,
    pub sigma_ee: Array2<f64>,
    pub theta_star: PrecisionMatrix,
}

/// A generated dataset in raw (uncentered) form plus its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub x_raw: Array2<f64>,
    pub y: Array2<f64>,
    pub observed: Array2<bool>,
    pub truth: GroundTruth,
}

impl SimulatedDataset {
    pub fn design(&self) -> Result<DesignMatrix> {
        DesignMatrix::standardize(self.x_raw.clone())
    }

    pub fn masked_response(&self) -> Result<MaskedResponse> {
        MaskedResponse::from_observations(self.y.clone(), self.observed.clone())
    }
}

fn ar1_matrix(dim: usize, a: f64) -> Array2<f64> {
    Array2::from_shape_fn((dim, dim), |(i, j)| {
        a.powi((i as i32 - j as i32).abs())
    })
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Rows drawn from a zero-mean AR(1) Gaussian with unit marginal variance.
fn ar1_rows(n: usize, dim: usize, a: f64, rng: &mut ChaCha12Rng) -> Array2<f64> {
    let innov = (1.0 - a * a).sqrt();
    let mut out = Array2::zeros((n, dim));
    for i in 0..n {
        let mut prev = standard_normal(rng);
        out[[i, 0]] = prev;
        for j in 1..dim {
            prev = a * prev + innov * standard_normal(rng);
            out[[i, j]] = prev;
        }
    }
    out
}

/// Coefficient matrix with exactly `s_max` nonzeros per column, uniform on
/// [-1, 1].
pub fn gen_b_column_sparse(p: usize, q: usize, s_max: usize, seed: u64) -> Result<CoefficientMatrix> {
    if s_max > p {
        return Err(Error::InvalidParameter(format!(
            "s_max = {s_max} exceeds p = {p}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(gen_b_column_sparse_with(p, q, s_max, &mut rng))
}

fn gen_b_column_sparse_with(
    p: usize,
    q: usize,
    s_max: usize,
    rng: &mut ChaCha12Rng,
) -> CoefficientMatrix {
    let mut b = Array2::zeros((p, q));
    for l in 0..q {
        let rows = rand::seq::index::sample(rng, p, s_max);
        for k in rows.iter() {
            let mut v = 0.0;
            while v == 0.0 {
                v = rng.random_range(-1.0..1.0);
            }
            b[[k, l]] = v;
        }
    }
    CoefficientMatrix::new(b)
}

/// Dense coefficients with magnitudes in [0.3, 0.7] and random signs, masked
/// elementwise (probability `s1` of keeping) and row-wise (probability `s2`).
pub fn gen_b_bernoulli(p: usize, q: usize, s1: f64, s2: f64, seed: u64) -> Result<CoefficientMatrix> {
    if !(0.0 < s1 && s1 <= 1.0) || !(0.0 < s2 && s2 <= 1.0) {
        return Err(Error::InvalidParameter("s1, s2 must lie in (0, 1]".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(gen_b_bernoulli_with(p, q, s1, s2, &mut rng))
}

fn gen_b_bernoulli_with(
    p: usize,
    q: usize,
    s1: f64,
    s2: f64,
    rng: &mut ChaCha12Rng,
) -> CoefficientMatrix {
    let mut b = Array2::zeros((p, q));
    for k in 0..p {
        let row_on = rng.random::<f64>() < s2;
        for l in 0..q {
            let magnitude = rng.random_range(0.3..0.7);
            let sign = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            let keep = rng.random::<f64>() < s1;
            if row_on && keep {
                b[[k, l]] = sign * magnitude;
            }
        }
    }
    CoefficientMatrix::new(b)
}

/// AR(1) error covariance and its closed-form tridiagonal inverse.
pub fn gen_theta_type1(q: usize, r: f64) -> Result<(Array2<f64>, PrecisionMatrix)> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InvalidParameter(format!(
            "autoregressive parameter must lie in [0, 1), got {r}"
        )));
    }
    if q == 0 {
        return Err(Error::InvalidParameter("q must be positive".into()));
    }
    let sigma = ar1_matrix(q, r);
    let mut theta = Array2::zeros((q, q));
    if q == 1 {
        theta[[0, 0]] = 1.0;
    } else {
        let denom = 1.0 - r * r;
        for i in 0..q {
            theta[[i, i]] = if i == 0 || i == q - 1 {
                1.0 / denom
            } else {
                (1.0 + r * r) / denom
            };
            if i + 1 < q {
                theta[[i, i + 1]] = -r / denom;
                theta[[i + 1, i]] = -r / denom;
            }
        }
    }
    Ok((sigma, PrecisionMatrix::new(theta)?))
}

/// The three-block component of the type-2 precision: an empty block, a weak
/// complete graph (weights in [0.1, 0.4]) and a strong complete graph
/// (weights in [0.5, 1]).
fn type2_block_component(q: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    let size = q / 3;
    let mut block = Array2::zeros((q, q));
    for b in 0..3 {
        let start = b * size;
        let end = start + size;
        if b == 0 {
            continue;
        }
        let (lo, hi) = if b == 1 { (0.1, 0.4) } else { (0.5, 1.0) };
        for i in start..end {
            for j in (i + 1)..end {
                let w = rng.random_range(lo..hi);
                block[[i, j]] = w;
                block[[j, i]] = w;
            }
        }
    }
    block
}

/// Smallest diagonal loading that brings the minimum eigenvalue to at least
/// 0.01, located by bisection on Cholesky feasibility.
fn diagonal_loading(theta0: &Array2<f64>, target: f64) -> f64 {
    let q = theta0.nrows();
    let feasible = |c: f64| {
        let mut m = theta0.clone();
        for i in 0..q {
            m[[i, i]] += c - target;
        }
        linalg::is_positive_definite(&m)
    };
    if feasible(0.0) {
        return 0.0;
    }
    let mut hi = target.max(1e-3);
    let mut guard = 0;
    while !feasible(hi) && guard < 60 {
        hi *= 2.0;
        guard += 1;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Composite (type-2) precision structure and its covariance.
pub fn gen_theta_type2(q: usize, seed: u64) -> Result<(Array2<f64>, PrecisionMatrix)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    gen_theta_type2_with(q, &mut rng)
}

fn gen_theta_type2_with(q: usize, rng: &mut ChaCha12Rng) -> Result<(Array2<f64>, PrecisionMatrix)> {
    if q < 3 || q % 3 != 0 {
        return Err(Error::InvalidParameter(format!(
            "type-2 structure needs q divisible by 3, got {q}"
        )));
    }
    let (_, inv_ar1) = gen_theta_type1(q, TYPE2_AR_COEF)?;
    let mut theta0 = inv_ar1.values() + &type2_block_component(q, rng);
    let c = diagonal_loading(&theta0, 0.01);
    for i in 0..q {
        theta0[[i, i]] += c;
    }
    let theta = PrecisionMatrix::new(theta0)?;
    let sigma = theta.inverse()?;
    Ok((sigma, theta))
}

/// Generates a dataset in raw form: predictors, full responses, observation
/// mask and ground truth. Deterministic in the spec's seed.
pub fn gen_dataset_raw(spec: &SimulationSpec) -> Result<SimulatedDataset> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let (sigma_ee, theta_star) = match &spec.theta_scheme {
        ThetaScheme::Type1 { rho_eps } => gen_theta_type1(spec.q, *rho_eps)?,
        ThetaScheme::Type2 => gen_theta_type2_with(spec.q, &mut rng)?,
    };
    let b_star = match &spec.b_scheme {
        BScheme::ColumnSparse { s_max } => {
            gen_b_column_sparse_with(spec.p, spec.q, *s_max, &mut rng)
        }
        BScheme::BernoulliMask { s1, s2 } => {
            gen_b_bernoulli_with(spec.p, spec.q, *s1, *s2, &mut rng)
        }
    };
    let x = ar1_rows(spec.n, spec.p, spec.x_ar_coef, &mut rng);

    let chol = linalg::cholesky(&sigma_ee).ok_or_else(|| {
        Error::NotPositiveDefinite("error covariance is not positive definite".into())
    })?;
    let mut errors = Array2::zeros((spec.n, spec.q));
    let mut z_buf = Array1::zeros(spec.q);
    for i in 0..spec.n {
        for v in z_buf.iter_mut() {
            *v = standard_normal(&mut rng);
        }
        let row = chol.dot(&z_buf);
        errors.row_mut(i).assign(&row);
    }
    let y = x.dot(b_star.values()) + &errors;

    let rho = spec.rho_w_full();
    let mut observed = Array2::from_elem((spec.n, spec.q), true);
    for i in 0..spec.n {
        for j in 0..spec.q {
            if rng.random::<f64>() < rho[j] {
                observed[[i, j]] = false;
            }
        }
    }

    Ok(SimulatedDataset {
        x_raw: x,
        y,
        observed,
        truth: GroundTruth {
            b_star,
            sigma_xx: ar1_matrix(spec.p, spec.x_ar_coef),
            sigma_ee,
            theta_star,
        },
    })
}

/// Generates a dataset and assembles the model-ready containers.
pub fn gen_dataset(spec: &SimulationSpec) -> Result<(DesignMatrix, MaskedResponse, GroundTruth)> {
    let ds = gen_dataset_raw(spec)?;
    let x = ds.design()?;
    let z = ds.masked_response()?;
    Ok((x, z, ds.truth))
}

/// Exact-zero support comparison counts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub tpr: f64,
    pub tnr: f64,
    pub mcc: f64,
}

fn support_metrics(pairs: impl Iterator<Item = (bool, bool)>) -> SupportMetrics {
    let (mut tp, mut tn, mut fp, mut fne) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for (est, truth) in pairs {
        match (est, truth) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fne += 1.0,
        }
    }
    let tpr = if tp + fne > 0.0 { tp / (tp + fne) } else { 1.0 };
    let tnr = if tn + fp > 0.0 { tn / (tn + fp) } else { 1.0 };
    let denom = ((tp + fp) * (tp + fne) * (tn + fp) * (tn + fne)).sqrt();
    let mcc = if denom > 0.0 {
        (tp * tn - fp * fne) / denom
    } else {
        0.0
    };
    SupportMetrics { tpr, tnr, mcc }
}

/// Evaluation metrics of a fit against the ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `tr[(B - B*)' Sigma_xx (B - B*)]` of the final coefficients.
    pub pe: f64,
    /// `tr[Sigma_ee Theta] - logdet(Sigma_ee Theta) - q`.
    pub kll: f64,
    pub frob_b1: f64,
    pub frob_b2: f64,
    /// Mean over columns of the stage-1 per-column l2 error.
    pub l2_col_b1: f64,
    /// `max |Theta - Theta*|` entrywise.
    pub max_norm_theta: f64,
    pub b_support: SupportMetrics,
    pub theta_support: SupportMetrics,
}

/// Computes all evaluation metrics for a completed fit.
pub fn evaluate(fit: &FitResult, truth: &GroundTruth) -> Result<MetricsReport> {
    let b1 = fit.b1_original();
    let b2 = fit.b2_original();
    let bs = truth.b_star.values();
    if b2.p() != truth.b_star.p() || b2.q() != truth.b_star.q() {
        return Err(Error::DimensionMismatch(
            "fit and truth dimensions differ".into(),
        ));
    }

    let d2 = b2.values() - bs;
    let pe = {
        let m = d2.t().dot(&truth.sigma_xx).dot(&d2);
        (0..m.nrows()).map(|i| m[[i, i]]).sum()
    };

    let theta = fit.theta.values();
    let q = theta.nrows();
    let prod = truth.sigma_ee.dot(theta);
    let trace: f64 = (0..q).map(|i| prod[[i, i]]).sum();
    let logdet = fit.theta.logdet()? - truth.theta_star.logdet()?;
    let kll = trace - logdet - q as f64;

    let d1 = b1.values() - bs;
    let frob_b1 = linalg::frob_norm(&d1);
    let frob_b2 = linalg::frob_norm(&d2);
    let l2_col_b1 = (0..b1.q())
        .map(|l| d1.column(l).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / b1.q() as f64;
    let max_norm_theta = linalg::max_abs(&(theta - truth.theta_star.values()));

    let b_support = support_metrics(
        b2.values()
            .iter()
            .zip(bs.iter())
            .map(|(&e, &t)| (e != 0.0, t != 0.0)),
    );
    let mut theta_pairs = Vec::with_capacity(q * (q - 1) / 2);
    for i in 0..q {
        for j in (i + 1)..q {
            theta_pairs.push((
                theta[[i, j]] != 0.0,
                truth.theta_star.values()[[i, j]] != 0.0,
            ));
        }
    }
    let theta_support = support_metrics(theta_pairs.into_iter());

    Ok(MetricsReport {
        pe,
        kll,
        frob_b1,
        frob_b2,
        l2_col_b1,
        max_norm_theta,
        b_support,
        theta_support,
    })
}

impl MetricsReport {
    /// Metric value by the short name used in scenario tables.
    pub fn get(&self, metric: &str) -> Option<f64> {
        Some(match metric {
            "pe" => self.pe,
            "kll" => self.kll,
            "frob_b1" => self.frob_b1,
            "frob_b2" => self.frob_b2,
            "l2_col_b1" => self.l2_col_b1,
            "max_theta" => self.max_norm_theta,
            "tpr_b" => self.b_support.tpr,
            "tnr_b" => self.b_support.tnr,
            "mcc_b" => self.b_support.mcc,
            "tpr_theta" => self.theta_support.tpr,
            "tnr_theta" => self.theta_support.tnr,
            "mcc_theta" => self.theta_support.mcc,
            _ => return None,
        })
    }
}

/// Named benchmark scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    S1A,
    S1B,
    S2A,
    S2B,
    S3A,
    S3B,
    Model1,
    Model2,
    Model3,
    Model4,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::S1A => "S1A",
            Scenario::S1B => "S1B",
            Scenario::S2A => "S2A",
            Scenario::S2B => "S2B",
            Scenario::S3A => "S3A",
            Scenario::S3B => "S3B",
            Scenario::Model1 => "model1",
            Scenario::Model2 => "model2",
            Scenario::Model3 => "model3",
            Scenario::Model4 => "model4",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1a" => Ok(Scenario::S1A),
            "s1b" => Ok(Scenario::S1B),
            "s2a" => Ok(Scenario::S2A),
            "s2b" => Ok(Scenario::S2B),
            "s3a" => Ok(Scenario::S3A),
            "s3b" => Ok(Scenario::S3B),
            "model1" => Ok(Scenario::Model1),
            "model2" => Ok(Scenario::Model2),
            "model3" => Ok(Scenario::Model3),
            "model4" => Ok(Scenario::Model4),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }
}

/// Scenario-runner options; the `*_values` filters restrict the default cell
/// grid so sweeps can run at desk scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub reps: usize,
    pub seed: u64,
    pub rule: SelectionRule,
    pub missing: Option<f64>,
    pub n_values: Option<Vec<usize>>,
    pub p_values: Option<Vec<usize>>,
    pub q_values: Option<Vec<usize>>,
    pub rho_eps_values: Option<Vec<f64>>,
    pub rho_w_values: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub folds: usize,
    pub fast: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            reps: 20,
            seed: 0,
            rule: SelectionRule::Bic,
            missing: None,
            n_values: None,
            p_values: None,
            q_values: None,
            rho_eps_values: None,
            rho_w_values: None,
            n_lambda: 50,
            folds: 5,
            fast: false,
        }
    }
}

/// One simulation cell: the parameters a scenario sweeps over.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioCell {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub rho_eps: f64,
    pub rho_w: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub cell: ScenarioCell,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceCheck {
    pub scenario: String,
    pub cell: ScenarioCell,
    pub metric: String,
    pub observed: f64,
    pub expected: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub rows: Vec<ScenarioRow>,
    pub checks: Vec<ReferenceCheck>,
}

impl ScenarioReport {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "scenario", "n", "p", "q", "rho_eps", "rho_w", "metric", "mean", "se", "reps",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.scenario.clone(),
                r.cell.n.to_string(),
                r.cell.p.to_string(),
                r.cell.q.to_string(),
                format!("{}", r.cell.rho_eps),
                format!("{}", r.cell.rho_w),
                r.metric.clone(),
                format!("{:.16e}", r.mean),
                format!("{:.16e}", r.se),
                r.reps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One line per reference comparison, plus a tally.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for c in &self.checks {
            lines.push(format!(
                "{} {} n={} p={} q={} rho_eps={} rho_w={} {}: observed {:.4}, reference {:.4} (band [{:.4}, {:.4}])",
                if c.pass { "PASS" } else { "FAIL" },
                c.scenario,
                c.cell.n,
                c.cell.p,
                c.cell.q,
                c.cell.rho_eps,
                c.cell.rho_w,
                c.metric,
                c.observed,
                c.expected,
                c.lo,
                c.hi,
            ));
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        if !self.checks.is_empty() {
            lines.push(format!(
                "{passed}/{} reference checks passed",
                self.checks.len()
            ));
        }
        lines
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, cell: u64, rep: u64) -> u64 {
    splitmix64(base ^ splitmix64(cell.wrapping_mul(0x517C_C1B7_2722_0A95) ^ splitmix64(rep)))
}

fn filter_usize(defaults: &[usize], requested: &Option<Vec<usize>>) -> Vec<usize> {
    match requested {
        None => defaults.to_vec(),
        Some(vals) => vals.clone(),
    }
}

fn filter_f64(defaults: &[f64], requested: &Option<Vec<f64>>) -> Vec<f64> {
    match requested {
        None => defaults.to_vec(),
        Some(vals) => vals.clone(),
    }
}

struct CellPlan {
    cell: ScenarioCell,
    spec_template: SimulationSpec,
    metrics: Vec<&'static str>,
}

fn scaling_cells(scenario: Scenario, cfg: &ScenarioConfig) -> Vec<CellPlan> {
    let (vary_n, default_q): (bool, &[usize]) = match scenario {
        Scenario::S1A | Scenario::S3A => (true, &[10, 20]),
        Scenario::S2A => (true, &[10]),
        Scenario::S1B | Scenario::S3B => (false, &[10, 20]),
        Scenario::S2B => (false, &[10, 20, 30, 40, 50]),
        _ => unreachable!(),
    };
    let n_values = if vary_n {
        filter_usize(&[200, 400, 800, 1600, 3200, 6400, 12800], &cfg.n_values)
    } else {
        filter_usize(&[400], &cfg.n_values)
    };
    let p_values = if vary_n {
        filter_usize(&[100], &cfg.p_values)
    } else if scenario == Scenario::S2B {
        filter_usize(&[100], &cfg.p_values)
    } else {
        filter_usize(&[50, 100, 200, 400, 800], &cfg.p_values)
    };
    let q_values = filter_usize(default_q, &cfg.q_values);

    // sweep (a): rho_eps varies at rho_w = 0.05; sweep (b): rho_w varies at
    // rho_eps = 0.7
    let mut combos: Vec<(f64, f64)> = Vec::new();
    for &re in &filter_f64(&[0.0, 0.3, 0.7, 0.9], &cfg.rho_eps_values) {
        for &rw in &filter_f64(&[0.05], &cfg.rho_w_values) {
            combos.push((re, rw));
        }
    }
    if cfg.rho_eps_values.is_none() || cfg.rho_w_values.is_none() {
        let rws = filter_f64(&[0.005, 0.1, 0.2, 0.3], &cfg.rho_w_values);
        for &rw in &rws {
            let res = filter_f64(&[0.7], &cfg.rho_eps_values);
            for &re in &res {
                if !combos
                    .iter()
                    .any(|&(a, b)| (a - re).abs() < 1e-12 && (b - rw).abs() < 1e-12)
                {
                    combos.push((re, rw));
                }
            }
        }
    }

    let metrics: Vec<&'static str> = match scenario {
        Scenario::S1A | Scenario::S1B => vec!["l2_col_b1", "frob_b1"],
        Scenario::S2A | Scenario::S2B => vec!["max_theta"],
        Scenario::S3A | Scenario::S3B => vec!["frob_b1", "frob_b2"],
        _ => unreachable!(),
    };

    let mut plans = Vec::new();
    for &n in &n_values {
        for &p in &p_values {
            for &q in &q_values {
                for &(re, rw) in &combos {
                    plans.push(CellPlan {
                        cell: ScenarioCell {
                            n,
                            p,
                            q,
                            rho_eps: re,
                            rho_w: rw,
                        },
                        spec_template: SimulationSpec {
                            n,
                            p,
                            q,
                            x_ar_coef: 0.7,
                            rho_w: vec![rw],
                            b_scheme: BScheme::ColumnSparse { s_max: 5 },
                            theta_scheme: ThetaScheme::Type1 { rho_eps: re },
                            seed: 0,
                        },
                        metrics: metrics.clone(),
                    });
                }
            }
        }
    }
    plans
}

fn model_cells(scenario: Scenario, cfg: &ScenarioConfig) -> Vec<CellPlan> {
    let (n, p, q, s1, s2, theta_scheme, rho_eps) = match scenario {
        Scenario::Model1 => (
            400,
            30,
            30,
            0.2,
            0.2,
            ThetaScheme::Type1 { rho_eps: 0.7 },
            0.7,
        ),
        Scenario::Model2 => (
            200,
            60,
            60,
            0.1,
            0.1,
            ThetaScheme::Type1 { rho_eps: 0.7 },
            0.7,
        ),
        Scenario::Model3 => (
            200,
            30,
            30,
            0.2,
            0.2,
            ThetaScheme::Type1 { rho_eps: 0.4 },
            0.4,
        ),
        Scenario::Model4 => (200, 30, 30, 0.2, 0.2, ThetaScheme::Type2, 0.0),
        _ => unreachable!(),
    };
    let missing_levels: Vec<f64> = match cfg.missing {
        Some(v) => vec![v],
        None => vec![0.01, 0.10, 0.20],
    };
    let metrics = vec![
        "pe",
        "tpr_b",
        "tnr_b",
        "mcc_b",
        "kll",
        "tpr_theta",
        "tnr_theta",
        "mcc_theta",
        "frob_b1",
        "frob_b2",
    ];
    missing_levels
        .into_iter()
        .map(|rw| CellPlan {
            cell: ScenarioCell {
                n,
                p,
                q,
                rho_eps,
                rho_w: rw,
            },
            spec_template: SimulationSpec {
                n,
                p,
                q,
                x_ar_coef: 0.7,
                rho_w: vec![rw],
                b_scheme: BScheme::BernoulliMask { s1, s2 },
                theta_scheme: theta_scheme.clone(),
                seed: 0,
            },
            metrics: metrics.clone(),
        })
        .collect()
}

/// Runs a named scenario: per cell, `reps` tuned fits on fresh draws, with
/// means and standard errors per metric, compared against the embedded
/// reference values where available.
pub fn run_scenario(scenario: Scenario, cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    let plans = match scenario {
        Scenario::Model1 | Scenario::Model2 | Scenario::Model3 | Scenario::Model4 => {
            model_cells(scenario, cfg)
        }
        _ => scaling_cells(scenario, cfg),
    };
    if cfg.reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (cell_idx, plan) in plans.iter().enumerate() {
        let reports: Vec<MetricsReport> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let mut spec = plan.spec_template.clone();
                spec.seed = derive_seed(cfg.seed, cell_idx as u64, rep as u64);
                let (x, z, truth) = gen_dataset(&spec)?;
                let tc = TuneConfig {
                    rule: cfg.rule,
                    n_lambda: cfg.n_lambda,
                    min_ratio: None,
                    folds: cfg.folds,
                    seed: splitmix64(spec.seed),
                    fast: cfg.fast,
                };
                let (_, fit) = tune(&x, &z, &tc)?;
                evaluate(&fit, &truth)
            })
            .collect::<Result<_>>()?;
        for &metric in &plan.metrics {
            let values: Vec<f64> = reports.iter().filter_map(|r| r.get(metric)).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let se = if values.len() > 1 {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (values.len() - 1) as f64;
                (var / values.len() as f64).sqrt()
            } else {
                0.0
            };
            rows.push(ScenarioRow {
                scenario: scenario.name().to_string(),
                cell: plan.cell.clone(),
                metric: metric.to_string(),
                mean,
                se,
                reps: cfg.reps,
            });
            if let Some(reference) = reference::lookup(
                scenario.name(),
                plan.cell.n,
                plan.cell.p,
                plan.cell.q,
                plan.cell.rho_eps,
                plan.cell.rho_w,
                &cfg.rule.to_string(),
                metric,
            ) {
                let (lo, hi) = reference::tolerance_band(metric, reference.value);
                checks.push(ReferenceCheck {
                    scenario: scenario.name().to_string(),
                    cell: plan.cell.clone(),
                    metric: metric.to_string(),
                    observed: mean,
                    expected: reference.value,
                    lo,
                    hi,
                    pass: lo <= mean && mean <= hi,
                });
            }
        }
    }
    Ok(ScenarioReport { rows, checks })
}
