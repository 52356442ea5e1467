//! Covariance-form lasso by cyclic coordinate descent, and the stage-1
//! column-by-column coefficient fit.
//!
//! Each column solves `min_b 0.5 b'Gb - c'b + lambda * ||b||_1` where `G` is
//! the predictor Gram matrix and `c` a column of the corrected cross-moment.
//! The same kernel is reused for the graphical-lasso column subproblems.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::data::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::surrogate::SurrogateMoments;

/// One covariance-form lasso instance.
#[derive(Debug, Clone)]
pub struct LassoProblem<'a> {
    pub gram: &'a Array2<f64>,
    pub linear: ArrayView1<'a, f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct CdConfig {
    /// Maximum coefficient change per sweep required for convergence.
    pub tol: f64,
    /// Subgradient optimality residual required for convergence.
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig {
            tol: 1e-7,
            kkt_tol: 1e-5,
            max_sweeps: 10_000,
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Subgradient optimality residual of the current iterate.
/// `o` must hold `gram . beta`.
fn kkt_residual(o: &Array1<f64>, linear: &ArrayView1<f64>, beta: &Array1<f64>, lambda: f64) -> f64 {
    let mut worst = 0.0_f64;
    for k in 0..beta.len() {
        let g = o[k] - linear[k];
        let r = if beta[k] == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g + lambda * beta[k].signum()).abs()
        };
        worst = worst.max(r);
    }
    worst
}

/// Entrywise stationarity residual of an l1-penalized smooth loss given its
/// smooth gradient. Shared by the solvers and the fit diagnostics.
pub(crate) fn composite_kkt_residual(grad: &Array2<f64>, b: &Array2<f64>, lambda: f64) -> f64 {
    grad.iter().zip(b.iter()).fold(0.0_f64, |m, (&g, &x)| {
        let r = if x == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g + lambda * x.signum()).abs()
        };
        m.max(r)
    })
}

fn objective(o: &Array1<f64>, linear: &ArrayView1<f64>, beta: &Array1<f64>, lambda: f64) -> f64 {
    let mut f = 0.0;
    for k in 0..beta.len() {
        f += 0.5 * beta[k] * o[k] - linear[k] * beta[k] + lambda * beta[k].abs();
    }
    f
}

struct SweepOutcome {
    max_change: f64,
}

fn sweep(
    gram: &Array2<f64>,
    linear: &ArrayView1<f64>,
    lambda: f64,
    beta: &mut Array1<f64>,
    o: &mut Array1<f64>,
    active_only: bool,
) -> Result<SweepOutcome> {
    let p = beta.len();
    let mut max_change = 0.0_f64;
    for k in 0..p {
        if active_only && beta[k] == 0.0 {
            continue;
        }
        let g_kk = gram[[k, k]];
        if g_kk <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gram diagonal entry {k} is not positive"
            )));
        }
        let old = beta[k];
        let partial = linear[k] - (o[k] - g_kk * old);
        let new = soft_threshold(partial, lambda) / g_kk;
        if new != old {
            let delta = new - old;
            let col = gram.column(k);
            for (ov, gv) in o.iter_mut().zip(col.iter()) {
                *ov += delta * gv;
            }
            beta[k] = new;
            max_change = max_change.max(delta.abs());
        }
    }
    Ok(SweepOutcome { max_change })
}

pub(crate) fn cd_solve(
    gram: &Array2<f64>,
    linear: &ArrayView1<f64>,
    lambda: f64,
    beta: &mut Array1<f64>,
    cfg: &CdConfig,
    mut objective_trace: Option<&mut Vec<f64>>,
) -> Result<usize> {
    let mut o = gram.dot(&*beta);
    let mut sweeps = 0usize;
    loop {
        // one full pass, then iterate on the active set until stable
        let full = sweep(gram, linear, lambda, beta, &mut o, false)?;
        sweeps += 1;
        if let Some(trace) = objective_trace.as_deref_mut() {
            trace.push(objective(&o, linear, beta, lambda));
        }
        let mut inner_change = full.max_change;
        while inner_change > cfg.tol && sweeps < cfg.max_sweeps {
            let inner = sweep(gram, linear, lambda, beta, &mut o, true)?;
            sweeps += 1;
            if let Some(trace) = objective_trace.as_deref_mut() {
                trace.push(objective(&o, linear, beta, lambda));
            }
            inner_change = inner.max_change;
        }
        let residual = kkt_residual(&o, linear, beta, lambda);
        if full.max_change < cfg.tol && residual < cfg.kkt_tol {
            return Ok(sweeps);
        }
        if sweeps >= cfg.max_sweeps {
            return Err(Error::NotConverged {
                iterations: sweeps,
                residual,
            });
        }
    }
}

/// Solves one covariance-form lasso problem from the given start point.
pub fn solve_column(prob: &LassoProblem, init: &Array1<f64>, cfg: &CdConfig) -> Result<Array1<f64>> {
    if prob.lambda < 0.0 {
        return Err(Error::InvalidParameter("negative lambda".into()));
    }
    if prob.gram.nrows() != prob.linear.len() || prob.gram.ncols() != prob.linear.len() {
        return Err(Error::DimensionMismatch(
            "gram and linear term do not conform".into(),
        ));
    }
    if init.len() != prob.linear.len() || init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("invalid start point".into()));
    }
    let mut beta = init.clone();
    cd_solve(prob.gram, &prob.linear, prob.lambda, &mut beta, cfg, None)?;
    Ok(beta)
}

/// Stage-1 estimate: independent lasso fits per response column with a shared
/// penalty. `lambda_b` is on the scale of [`crate::tuning::lambda_b_max`],
/// which is the exact null-model threshold; each column subproblem is solved
/// at `lambda_b / 2`.
pub fn fit_stage1(
    m: &SurrogateMoments,
    lambda_b: f64,
    warm: Option<&CoefficientMatrix>,
    cfg: &CdConfig,
) -> Result<CoefficientMatrix> {
    fit_stage1_per_column(m, &vec![lambda_b; m.q()], warm, cfg).map(|(b, _)| b)
}

/// Same as [`fit_stage1`], also reporting the total coordinate-descent sweep
/// count across columns.
pub(crate) fn fit_stage1_counted(
    m: &SurrogateMoments,
    lambda_b: f64,
    warm: Option<&CoefficientMatrix>,
    cfg: &CdConfig,
) -> Result<(CoefficientMatrix, usize)> {
    fit_stage1_per_column(m, &vec![lambda_b; m.q()], warm, cfg)
}

/// Stage-1 fit with one penalty per response column (expert option).
pub fn fit_stage1_per_column(
    m: &SurrogateMoments,
    lambda_b: &[f64],
    warm: Option<&CoefficientMatrix>,
    cfg: &CdConfig,
) -> Result<(CoefficientMatrix, usize)> {
    let p = m.p();
    let q = m.q();
    if lambda_b.len() != q {
        return Err(Error::DimensionMismatch(
            "per-column lambda vector does not match response count".into(),
        ));
    }
    if let Some(w) = warm {
        if w.p() != p || w.q() != q {
            return Err(Error::DimensionMismatch(
                "warm start does not conform".into(),
            ));
        }
    }
    let columns: Vec<Result<(Array1<f64>, usize)>> = (0..q)
        .into_par_iter()
        .map(|l| {
            let lambda = lambda_b[l];
            if lambda < 0.0 {
                return Err(Error::in_column(
                    l,
                    Error::InvalidParameter("negative lambda".into()),
                ));
            }
            let mut beta = match warm {
                Some(w) => w.values().column(l).to_owned(),
                None => Array1::zeros(p),
            };
            let sweeps = cd_solve(
                m.s_xx(),
                &m.s_xy_hat().column(l),
                0.5 * lambda,
                &mut beta,
                cfg,
                None,
            )
            .map_err(|e| Error::in_column(l, e))?;
            Ok((beta, sweeps))
        })
        .collect();
    let mut values = Array2::zeros((p, q));
    let mut total_sweeps = 0usize;
    for (l, col) in columns.into_iter().enumerate() {
        let (beta, sweeps) = col?;
        values.column_mut(l).assign(&beta);
        total_sweeps += sweeps;
    }
    Ok((CoefficientMatrix::new(values), total_sweeps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use ndarray::{arr1, arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_spd(p: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
        let f = Array2::from_shape_fn((p, p), |_| rng.random_range(-1.0..1.0));
        f.t().dot(&f) / p as f64 + Array2::<f64>::eye(p) * 0.5
    }

    #[test]
    fn large_lambda_gives_zero() {
        let gram = arr2(&[[1.0, 0.2], [0.2, 1.0]]);
        let linear = arr1(&[0.4, -0.6]);
        let prob = LassoProblem {
            gram: &gram,
            linear: linear.view(),
            lambda: 0.6,
        };
        let beta = solve_column(&prob, &Array1::zeros(2), &CdConfig::default()).unwrap();
        assert!(beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_lambda_solves_normal_equations() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let gram = random_spd(4, &mut rng);
        let linear = arr1(&[0.3, -0.1, 0.7, 0.2]);
        let prob = LassoProblem {
            gram: &gram,
            linear: linear.view(),
            lambda: 0.0,
        };
        let beta = solve_column(&prob, &Array1::zeros(4), &CdConfig::default()).unwrap();
        let direct = linalg::spd_solve(&gram, &linear).unwrap();
        for (a, b) in beta.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_gram_soft_thresholds() {
        let gram = Array2::eye(3);
        let linear = arr1(&[0.9, -0.1, 0.5]);
        let prob = LassoProblem {
            gram: &gram,
            linear: linear.view(),
            lambda: 0.3,
        };
        let beta = solve_column(&prob, &Array1::zeros(3), &CdConfig::default()).unwrap();
        assert!((beta[0] - 0.6).abs() < 1e-12);
        assert_eq!(beta[1], 0.0);
        assert!((beta[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn kkt_conditions_hold_at_solution() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..10 {
            let p = 6;
            let gram = random_spd(p, &mut rng);
            let linear = Array1::from_shape_fn(p, |_| rng.random_range(-1.0..1.0));
            let lambda = rng.random_range(0.01..0.5);
            let prob = LassoProblem {
                gram: &gram,
                linear: linear.view(),
                lambda,
            };
            let beta = solve_column(&prob, &Array1::zeros(p), &CdConfig::default()).unwrap();
            let o = gram.dot(&beta);
            for k in 0..p {
                let g = o[k] - linear[k];
                if beta[k] == 0.0 {
                    assert!(g.abs() <= lambda + 1e-5);
                } else {
                    assert!((g + lambda * beta[k].signum()).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn objective_is_non_increasing_per_sweep() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let p = 8;
        let gram = random_spd(p, &mut rng);
        let linear = Array1::from_shape_fn(p, |_| rng.random_range(-1.0..1.0));
        let mut beta = Array1::zeros(p);
        let mut trace = Vec::new();
        cd_solve(
            &gram,
            &linear.view(),
            0.05,
            &mut beta,
            &CdConfig::default(),
            Some(&mut trace),
        )
        .unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased: {w:?}");
        }
    }

    #[test]
    fn matches_residual_form_oracle_on_full_data() {
        // Residual-form coordinate descent on (X, y), independent code path.
        fn residual_lasso(x: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Array1<f64> {
            let n = x.nrows() as f64;
            let p = x.ncols();
            let mut beta = Array1::<f64>::zeros(p);
            let mut resid = y.clone();
            for _ in 0..200_000 {
                let mut change = 0.0_f64;
                for k in 0..p {
                    let xk = x.column(k);
                    let gram_kk = xk.dot(&xk) / n;
                    let rho = xk.dot(&resid) / n + gram_kk * beta[k];
                    let new = soft_threshold(rho, lambda) / gram_kk;
                    if new != beta[k] {
                        let delta = new - beta[k];
                        for (r, &xv) in resid.iter_mut().zip(xk.iter()) {
                            *r -= delta * xv;
                        }
                        beta[k] = new;
                        change = change.max(delta.abs());
                    }
                }
                if change < 1e-10 {
                    break;
                }
            }
            beta
        }

        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let n = 60;
        let p = 5;
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let lambda = 0.05;

        let gram = x.t().dot(&x) / n as f64;
        let linear = x.t().dot(&y) / n as f64;
        let prob = LassoProblem {
            gram: &gram,
            linear: linear.view(),
            lambda,
        };
        let tight = CdConfig {
            tol: 1e-10,
            kkt_tol: 1e-9,
            ..CdConfig::default()
        };
        let beta = solve_column(&prob, &Array1::zeros(p), &tight).unwrap();
        let oracle = residual_lasso(&x, &y, lambda);
        for (a, b) in beta.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn stage1_solution_is_order_invariant_and_column_consistent() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 40;
        let p = 6;
        let q = 3;
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let z = Array2::from_shape_fn((n, q), |_| rng.random_range(-1.0..1.0));
        let rho = Array1::zeros(q);
        let m = SurrogateMoments::from_raw(&x, &z, &rho).unwrap();
        let lambda_b = 0.2;
        let fit = fit_stage1(&m, lambda_b, None, &CdConfig::default()).unwrap();
        // each column equals an independent single-column solve at lambda_b/2
        for l in 0..q {
            let prob = LassoProblem {
                gram: m.s_xx(),
                linear: m.s_xy_hat().column(l),
                lambda: 0.5 * lambda_b,
            };
            let solo = solve_column(&prob, &Array1::zeros(p), &CdConfig::default()).unwrap();
            for k in 0..p {
                assert!((fit.values()[[k, l]] - solo[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let p = 7;
        let gram = random_spd(p, &mut rng);
        let linear = Array1::from_shape_fn(p, |_| rng.random_range(-1.0..1.0));
        let prob = LassoProblem {
            gram: &gram,
            linear: linear.view(),
            lambda: 0.1,
        };
        let cfg = CdConfig {
            tol: 1e-10,
            kkt_tol: 1e-8,
            ..CdConfig::default()
        };
        let cold = solve_column(&prob, &Array1::zeros(p), &cfg).unwrap();
        let warm_init = Array1::from_shape_fn(p, |_| rng.random_range(-0.5..0.5));
        let warm = solve_column(&prob, &warm_init, &cfg).unwrap();
        for (a, b) in cold.iter().zip(warm.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
