//! Graphical lasso for the error precision matrix: block coordinate descent
//! over columns of the working covariance, each column solved by the
//! covariance-form lasso kernel. The diagonal is unpenalized, so at the
//! optimum `inv(theta)` matches the input covariance on the diagonal.

use ndarray::{Array1, Array2};

use crate::data::{CoefficientMatrix, PrecisionMatrix};
use crate::error::{Error, Result};
use crate::lasso::{cd_solve, CdConfig};
use crate::linalg;
use crate::psd::{project_psd_maxnorm, PsdProjectConfig, PsdProjection};
use crate::surrogate::{plugin_error_cov, SurrogateMoments};

#[derive(Debug, Clone)]
pub struct GlassoProblem {
    pub cov: Array2<f64>,
    pub lambda_theta: f64,
    /// Ridge added to the covariance diagonal when its Cholesky fails.
    /// `None` selects `1e-8 * trace(cov) / q`.
    pub diag_floor: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GlassoConfig {
    /// Mean absolute off-diagonal change of the working covariance required
    /// before checking optimality.
    pub tol: f64,
    /// Stationarity residual (against the exact inverse) required at exit.
    pub kkt_tol: f64,
    /// Maximum outer sweeps.
    pub max_iter: usize,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        GlassoConfig {
            tol: 1e-6,
            kkt_tol: 1e-5,
            max_iter: 200,
        }
    }
}

/// Warm-start state carried along a regularization path.
#[derive(Debug, Clone)]
pub struct GlassoWarm {
    w: Array2<f64>,
    betas: Vec<Array1<f64>>,
}

/// Converged graphical-lasso solve with its warm-start state and diagnostics.
#[derive(Debug, Clone)]
pub(crate) struct GlassoFit {
    pub theta: PrecisionMatrix,
    pub warm: GlassoWarm,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Stationarity residual of `theta` for the penalized objective on `cov`.
pub fn glasso_kkt_residual(
    cov: &Array2<f64>,
    lambda_theta: f64,
    theta: &PrecisionMatrix,
) -> Result<f64> {
    let w = theta.inverse()?;
    let q = cov.nrows();
    let mut worst = 0.0_f64;
    for i in 0..q {
        for j in 0..q {
            let d = w[[i, j]] - cov[[i, j]];
            let r = if i == j {
                d.abs()
            } else if theta.values()[[i, j]] != 0.0 {
                (d - lambda_theta * theta.values()[[i, j]].signum()).abs()
            } else {
                (d.abs() - lambda_theta).max(0.0)
            };
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

/// Penalized negative log-likelihood `tr(theta cov) - logdet(theta)
/// + lambda * ||theta||_{1,off}`.
pub fn glasso_objective(cov: &Array2<f64>, lambda_theta: f64, theta: &PrecisionMatrix) -> Result<f64> {
    let q = cov.nrows();
    let tv = theta.values();
    let mut trace = 0.0;
    let mut l1_off = 0.0;
    for i in 0..q {
        for j in 0..q {
            trace += tv[[i, j]] * cov[[j, i]];
            if i != j {
                l1_off += tv[[i, j]].abs();
            }
        }
    }
    Ok(trace - theta.logdet()? + lambda_theta * l1_off)
}

fn floored_cov(prob: &GlassoProblem) -> Result<Array2<f64>> {
    let q = prob.cov.nrows();
    if prob.cov.ncols() != q {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    if !linalg::is_symmetric(&prob.cov, 1e-8) {
        return Err(Error::InvalidParameter(
            "covariance must be symmetric".into(),
        ));
    }
    let trace: f64 = (0..q).map(|i| prob.cov[[i, i]]).sum();
    if (0..q).any(|i| prob.cov[[i, i]] <= 0.0) {
        return Err(Error::NotPositiveDefinite(
            "covariance has a nonpositive diagonal entry".into(),
        ));
    }
    if linalg::is_positive_definite(&prob.cov) {
        return Ok(prob.cov.clone());
    }
    let mut floor = prob.diag_floor.unwrap_or(1e-8 * trace / q as f64);
    for _ in 0..20 {
        let mut s = prob.cov.clone();
        for i in 0..q {
            s[[i, i]] += floor;
        }
        if linalg::is_positive_definite(&s) {
            return Ok(s);
        }
        floor *= 10.0;
    }
    Err(Error::NotPositiveDefinite(
        "covariance could not be regularized to positive definite".into(),
    ))
}

fn recover_theta(
    s: &Array2<f64>,
    w: &Array2<f64>,
    betas: &[Array1<f64>],
) -> Result<PrecisionMatrix> {
    let q = s.nrows();
    let mut theta = Array2::zeros((q, q));
    for j in 0..q {
        let beta = &betas[j];
        let mut dot = 0.0;
        for (r, i) in (0..q).filter(|&i| i != j).enumerate() {
            dot += w[[i, j]] * beta[r];
        }
        let denom = w[[j, j]] - dot;
        if denom <= 0.0 {
            return Err(Error::NotPositiveDefinite(
                "nonpositive partial variance during recovery".into(),
            ));
        }
        let t_jj = 1.0 / denom;
        theta[[j, j]] = t_jj;
        for (r, i) in (0..q).filter(|&i| i != j).enumerate() {
            theta[[i, j]] = -beta[r] * t_jj;
        }
    }
    PrecisionMatrix::new(linalg::symmetrize(&theta))
}

pub(crate) fn fit_precision_warm(
    prob: &GlassoProblem,
    cfg: &GlassoConfig,
    warm: Option<&GlassoWarm>,
    mut objective_trace: Option<&mut Vec<f64>>,
) -> Result<GlassoFit> {
    if prob.lambda_theta < 0.0 {
        return Err(Error::InvalidParameter("negative lambda_theta".into()));
    }
    let s = floored_cov(prob)?;
    let q = s.nrows();
    if q == 1 {
        let theta = PrecisionMatrix::new(Array2::from_elem((1, 1), 1.0 / s[[0, 0]]))?;
        let warm = GlassoWarm {
            w: s,
            betas: vec![Array1::zeros(0)],
        };
        return Ok(GlassoFit {
            theta,
            warm,
            iterations: 0,
            kkt_residual: 0.0,
        });
    }

    let (mut w, mut betas) = match warm {
        Some(ws) if ws.w.nrows() == q => (ws.w.clone(), ws.betas.clone()),
        _ => (s.clone(), vec![Array1::zeros(q - 1); q]),
    };
    // unpenalized diagonal: w_ii = s_ii throughout
    for i in 0..q {
        w[[i, i]] = s[[i, i]];
    }

    let mut cd_cfg = CdConfig {
        tol: 1e-11,
        kkt_tol: 0.1 * cfg.kkt_tol,
        max_sweeps: 20_000,
    };
    let mut w11 = Array2::zeros((q - 1, q - 1));
    let mut s12 = Array1::zeros(q - 1);
    let mut iterations = 0usize;
    let mut last_residual = f64::INFINITY;
    while iterations < cfg.max_iter {
        let mut change_sum = 0.0;
        for j in 0..q {
            let keep: Vec<usize> = (0..q).filter(|&i| i != j).collect();
            for (r, &i) in keep.iter().enumerate() {
                s12[r] = s[[i, j]];
                for (c, &k) in keep.iter().enumerate() {
                    w11[[r, c]] = w[[i, k]];
                }
            }
            cd_solve(
                &w11,
                &s12.view(),
                prob.lambda_theta,
                &mut betas[j],
                &cd_cfg,
                None,
            )
            .map_err(|e| Error::in_column(j, e))?;
            let w12 = w11.dot(&betas[j]);
            for (r, &i) in keep.iter().enumerate() {
                change_sum += (w[[i, j]] - w12[r]).abs();
                w[[i, j]] = w12[r];
                w[[j, i]] = w12[r];
            }
        }
        iterations += 1;
        if let Some(trace) = objective_trace.as_deref_mut() {
            let theta = recover_theta(&s, &w, &betas)?;
            trace.push(glasso_objective(&s, prob.lambda_theta, &theta)?);
        }
        let mean_change = change_sum / (q * (q - 1)) as f64;
        if mean_change < cfg.tol {
            let theta = recover_theta(&s, &w, &betas)?;
            last_residual = glasso_kkt_residual(&s, prob.lambda_theta, &theta)?;
            if last_residual <= cfg.kkt_tol {
                return Ok(GlassoFit {
                    theta,
                    warm: GlassoWarm { w, betas },
                    iterations,
                    kkt_residual: last_residual,
                });
            }
            // the working covariance has settled but stationarity is loose:
            // tighten the column solves and keep sweeping
            cd_cfg.tol *= 0.1;
            cd_cfg.kkt_tol *= 0.1;
        }
    }
    Err(Error::NotConverged {
        iterations,
        residual: last_residual,
    })
}

/// Estimates a sparse precision matrix from a PSD covariance.
pub fn fit_precision(prob: &GlassoProblem, cfg: &GlassoConfig) -> Result<PrecisionMatrix> {
    fit_precision_warm(prob, cfg, None, None).map(|fit| fit.theta)
}

/// Result of the stage-2 pipeline: the precision estimate together with the
/// PSD projection diagnostics of the plug-in covariance.
#[derive(Debug, Clone)]
pub struct Stage2Fit {
    pub precision: PrecisionMatrix,
    pub projection: PsdProjection,
}

/// Full stage-2 composition: plug-in error covariance from the stage-1
/// coefficients, PSD projection, then graphical lasso.
pub fn fit_stage2(
    m: &SurrogateMoments,
    b1: &CoefficientMatrix,
    lambda_theta: f64,
    psd_cfg: &PsdProjectConfig,
    cfg: &GlassoConfig,
) -> Result<Stage2Fit> {
    let s_ee = plugin_error_cov(m, b1)?;
    let projection = project_psd_maxnorm(&s_ee, psd_cfg)?;
    let prob = GlassoProblem {
        cov: projection.matrix.clone(),
        lambda_theta,
        diag_floor: None,
    };
    let precision = fit_precision(&prob, cfg)?;
    Ok(Stage2Fit {
        precision,
        projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_pd(q: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
        let f = Array2::from_shape_fn((q, q), |_| rng.random_range(-1.0..1.0));
        f.t().dot(&f) / q as f64 + Array2::<f64>::eye(q)
    }

    #[test]
    fn zero_lambda_inverts_the_covariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let cov = random_pd(4, &mut rng);
        let prob = GlassoProblem {
            cov: cov.clone(),
            lambda_theta: 0.0,
            diag_floor: None,
        };
        let theta = fit_precision(&prob, &GlassoConfig::default()).unwrap();
        let direct = linalg::spd_inverse(&cov).unwrap();
        for (a, b) in theta.values().iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn large_lambda_gives_exactly_diagonal_estimate() {
        let cov = arr2(&[
            [2.0, 0.3, -0.1],
            [0.3, 1.5, 0.2],
            [-0.1, 0.2, 1.0],
        ]);
        let prob = GlassoProblem {
            cov: cov.clone(),
            lambda_theta: 0.3,
            diag_floor: None,
        };
        let theta = fit_precision(&prob, &GlassoConfig::default()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert!((theta.values()[[i, i]] - 1.0 / cov[[i, i]]).abs() < 1e-8);
                } else {
                    assert_eq!(theta.values()[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn scalar_case_inverts() {
        let prob = GlassoProblem {
            cov: arr2(&[[4.0]]),
            lambda_theta: 0.5,
            diag_floor: None,
        };
        let theta = fit_precision(&prob, &GlassoConfig::default()).unwrap();
        assert!((theta.values()[[0, 0]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn kkt_holds_at_solution() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..5 {
            let cov = random_pd(5, &mut rng);
            for &lambda in &[0.02, 0.1] {
                let prob = GlassoProblem {
                    cov: cov.clone(),
                    lambda_theta: lambda,
                    diag_floor: None,
                };
                let theta = fit_precision(&prob, &GlassoConfig::default()).unwrap();
                let r = glasso_kkt_residual(&cov, lambda, &theta).unwrap();
                assert!(r <= 1e-5, "kkt residual {r}");
            }
        }
    }

    #[test]
    fn zero_pattern_is_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let cov = random_pd(6, &mut rng);
        let prob = GlassoProblem {
            cov,
            lambda_theta: 0.08,
            diag_floor: None,
        };
        let theta = fit_precision(&prob, &GlassoConfig::default()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(
                    theta.values()[[i, j]] == 0.0,
                    theta.values()[[j, i]] == 0.0
                );
            }
        }
    }

    #[test]
    fn objective_is_non_increasing_across_sweeps() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let cov = random_pd(6, &mut rng);
        let prob = GlassoProblem {
            cov,
            lambda_theta: 0.05,
            diag_floor: None,
        };
        let mut trace = Vec::new();
        fit_precision_warm(&prob, &GlassoConfig::default(), None, Some(&mut trace)).unwrap();
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-8 * (1.0 + w[0].abs()),
                "objective increased: {w:?}"
            );
        }
    }

    #[test]
    fn independent_errors_shrink_offdiagonals_to_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 2000;
        let q = 5;
        let e = Array2::from_shape_fn((n, q), |_| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let cov = e.t().dot(&e) / n as f64;
        let prob = GlassoProblem {
            cov,
            lambda_theta: 0.3,
            diag_floor: None,
        };
        let theta = fit_precision(&prob, &GlassoConfig::default()).unwrap();
        for i in 0..q {
            for j in 0..q {
                if i != j {
                    assert_eq!(theta.values()[[i, j]], 0.0);
                }
            }
        }
    }
}
