//! Bias-corrected cross-moment estimators under response missingness, and the
//! plug-in error covariance they induce.
//!
//! With `Z = Y ⊙ W` and per-column missing rates `rho`, dividing the raw
//! cross-products elementwise by the observation-process moments makes the
//! estimators unbiased for the complete-data moments.

use ndarray::{Array1, Array2};

use crate::data::{second_moment_mask, CoefficientMatrix, DesignMatrix, MaskedResponse};
use crate::error::{Error, Result};
use crate::linalg;

/// The moment matrices every stage of the estimator consumes:
/// `s_xx = (1/n) X'X`, plus the missingness-corrected `s_xy_hat`, `s_yy_hat`.
#[derive(Debug, Clone)]
pub struct SurrogateMoments {
    s_xx: Array2<f64>,
    s_xy_hat: Array2<f64>,
    s_yy_hat: Array2<f64>,
    n: usize,
}

impl SurrogateMoments {
    pub fn from_data(x: &DesignMatrix, z: &MaskedResponse) -> Result<Self> {
        if x.n() != z.n() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response has {}",
                x.n(),
                z.n()
            )));
        }
        Self::from_raw(x.values(), z.values(), z.rho_hat())
    }

    /// Builds moments from raw (already centered) matrices and an explicit
    /// missing-rate vector. Used directly by cross-validation folds.
    pub fn from_raw(x: &Array2<f64>, z: &Array2<f64>, rho: &Array1<f64>) -> Result<Self> {
        if x.nrows() != z.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        let n = x.nrows();
        let s_xx = x.t().dot(x) / n as f64;
        let s_xy_hat = surrogate_xy_raw(x, z, rho)?;
        let s_yy_hat = surrogate_yy_raw(z, rho)?;
        Ok(SurrogateMoments {
            s_xx,
            s_xy_hat,
            s_yy_hat,
            n,
        })
    }

    pub fn s_xx(&self) -> &Array2<f64> {
        &self.s_xx
    }

    pub fn s_xy_hat(&self) -> &Array2<f64> {
        &self.s_xy_hat
    }

    pub fn s_yy_hat(&self) -> &Array2<f64> {
        &self.s_yy_hat
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.s_xx.nrows()
    }

    pub fn q(&self) -> usize {
        self.s_yy_hat.nrows()
    }
}

/// `(1/n) X'Z` with column `j` divided by `1 - rho[j]`.
pub fn surrogate_xy(x: &DesignMatrix, z: &MaskedResponse) -> Result<Array2<f64>> {
    surrogate_xy_raw(x.values(), z.values(), z.rho_hat())
}

pub fn surrogate_xy_raw(x: &Array2<f64>, z: &Array2<f64>, rho: &Array1<f64>) -> Result<Array2<f64>> {
    if x.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            z.nrows()
        )));
    }
    if rho.len() != z.ncols() {
        return Err(Error::DimensionMismatch(
            "rho length does not match response columns".into(),
        ));
    }
    for (j, &r) in rho.iter().enumerate() {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidRho { index: j, value: r });
        }
    }
    let n = x.nrows() as f64;
    let mut s = x.t().dot(z) / n;
    for (j, &r) in rho.iter().enumerate() {
        let scale = 1.0 / (1.0 - r);
        s.column_mut(j).mapv_inplace(|v| v * scale);
    }
    Ok(s)
}

/// `(1/n) Z'Z` divided elementwise by the mask second moment.
pub fn surrogate_yy(z: &MaskedResponse) -> Result<Array2<f64>> {
    surrogate_yy_raw(z.values(), z.rho_hat())
}

pub fn surrogate_yy_raw(z: &Array2<f64>, rho: &Array1<f64>) -> Result<Array2<f64>> {
    if rho.len() != z.ncols() {
        return Err(Error::DimensionMismatch(
            "rho length does not match response columns".into(),
        ));
    }
    let n = z.nrows() as f64;
    let mask = second_moment_mask(rho)?;
    let mut s = z.t().dot(z) / n;
    s.zip_mut_with(&mask, |v, &m| *v /= m);
    Ok(s)
}

/// Plug-in estimate of the error covariance, `s_yy_hat - B' s_xx B`,
/// symmetrized to absorb floating-point asymmetry.
pub fn plugin_error_cov(m: &SurrogateMoments, b1: &CoefficientMatrix) -> Result<Array2<f64>> {
    if b1.p() != m.p() || b1.q() != m.q() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {}x{} but moments are {}x{}",
            b1.p(),
            b1.q(),
            m.p(),
            m.q()
        )));
    }
    let b = b1.values();
    let fitted = b.t().dot(m.s_xx()).dot(b);
    let raw = m.s_yy_hat() - &fitted;
    Ok(linalg::symmetrize(&raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn xy_without_missingness_is_plain_cross_moment() {
        let x = arr2(&[[1.0, 0.5], [-1.0, 2.0], [0.0, -0.5]]);
        let z = arr2(&[[2.0], [0.0], [1.0]]);
        let rho = arr1(&[0.0]);
        let s = surrogate_xy_raw(&x, &z, &rho).unwrap();
        let expect = x.t().dot(&z) / 3.0;
        assert_eq!(s, expect);
    }

    #[test]
    fn xy_hand_example_with_half_missing() {
        // n=2, p=1, q=1; second response missing, rho=0.5.
        let x = arr2(&[[1.0], [1.0]]);
        let z = arr2(&[[2.0], [0.0]]);
        let rho = arr1(&[0.5]);
        let s = surrogate_xy_raw(&x, &z, &rho).unwrap();
        assert!((s[[0, 0]] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn xy_zero_response_gives_zero() {
        let x = arr2(&[[1.0], [2.0]]);
        let z = arr2(&[[0.0], [0.0]]);
        let rho = arr1(&[0.25]);
        let s = surrogate_xy_raw(&x, &z, &rho).unwrap();
        assert_eq!(s[[0, 0]], 0.0);
    }

    #[test]
    fn yy_hand_example() {
        let z = arr2(&[[2.0], [4.0]]);
        let rho = arr1(&[0.5]);
        let s = surrogate_yy_raw(&z, &rho).unwrap();
        assert!((s[[0, 0]] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn yy_without_missingness() {
        let z = arr2(&[[1.0, -1.0], [0.5, 2.0]]);
        let rho = arr1(&[0.0, 0.0]);
        let s = surrogate_yy_raw(&z, &rho).unwrap();
        let expect = z.t().dot(&z) / 2.0;
        assert_eq!(s, expect);
    }

    #[test]
    fn yy_monte_carlo_mean_matches_complete_data_moment() {
        // Fixed Y; average the corrected estimator over independent masks.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 40;
        let q = 3;
        let rho = 0.3;
        let y = Array2::from_shape_fn((n, q), |_| rng.random_range(-1.0..1.0));
        let truth = y.t().dot(&y) / n as f64;
        let reps = 10_000;
        let mut acc = Array2::<f64>::zeros((q, q));
        let mut used = 0usize;
        for _ in 0..reps {
            let mut z = y.clone();
            let mut miss_counts = vec![0usize; q];
            for i in 0..n {
                for j in 0..q {
                    if rng.random::<f64>() < rho {
                        z[[i, j]] = 0.0;
                        miss_counts[j] += 1;
                    }
                }
            }
            if miss_counts.iter().any(|&c| c == n) {
                continue;
            }
            let rho_hat = arr1(
                &miss_counts
                    .iter()
                    .map(|&c| c as f64 / n as f64)
                    .collect::<Vec<_>>(),
            );
            acc += &surrogate_yy_raw(&z, &rho_hat).unwrap();
            used += 1;
        }
        acc /= used as f64;
        for i in 0..q {
            for j in 0..q {
                let rel = (acc[[i, j]] - truth[[i, j]]).abs() / truth[[i, j]].abs().max(1e-12);
                assert!(
                    rel < 0.02,
                    "entry ({i},{j}): mean {} vs truth {}",
                    acc[[i, j]],
                    truth[[i, j]]
                );
            }
        }
    }

    #[test]
    fn plugin_with_zero_coefficients_returns_s_yy() {
        let x = arr2(&[[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]]);
        let z = arr2(&[[0.5], [1.0], [-0.5]]);
        let rho = arr1(&[0.0]);
        let m = SurrogateMoments::from_raw(&x, &z, &rho).unwrap();
        let b = CoefficientMatrix::zeros(2, 1);
        let s = plugin_error_cov(&m, &b).unwrap();
        assert_eq!(s, m.s_yy_hat().clone());
    }

    #[test]
    fn plugin_hand_arithmetic() {
        // q=1, s_yy=5, s_xx=I2, b=(1,2)' -> 5 - 5 = 0.
        let m = SurrogateMoments {
            s_xx: Array2::eye(2),
            s_xy_hat: arr2(&[[1.0], [2.0]]),
            s_yy_hat: arr2(&[[5.0]]),
            n: 1,
        };
        let b = CoefficientMatrix::new(arr2(&[[1.0], [2.0]]));
        let s = plugin_error_cov(&m, &b).unwrap();
        assert!(s[[0, 0]].abs() < 1e-15);
    }

    #[test]
    fn plugin_matches_residual_moment_for_ols() {
        // Fully observed, b = OLS solution: plug-in equals (1/n) e'e.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 50;
        let p = 3;
        let q = 2;
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((n, q), |_| rng.random_range(-1.0..1.0));
        let rho = Array1::zeros(q);
        let m = SurrogateMoments::from_raw(&x, &y, &rho).unwrap();
        // OLS: (X'X)^{-1} X'Y = s_xx^{-1} s_xy.
        let sxx_inv = crate::linalg::spd_inverse(m.s_xx()).unwrap();
        let b_ols = sxx_inv.dot(m.s_xy_hat());
        let resid = &y - &x.dot(&b_ols);
        let expect = resid.t().dot(&resid) / n as f64;
        let s = plugin_error_cov(&m, &CoefficientMatrix::new(b_ols)).unwrap();
        for i in 0..q {
            for j in 0..q {
                assert!((s[[i, j]] - expect[[i, j]]).abs() < 1e-10);
            }
        }
    }
}
