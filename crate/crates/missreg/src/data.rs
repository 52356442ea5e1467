//! Data containers: the standardized design matrix, the masked response with
//! per-column missingness estimates, and the fitted-parameter matrices.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;

/// Predictor matrix, centered and column-normalized so that
/// `(1/n) * sum_i x[i][j]^2 == 1` for every column.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: Array2<f64>,
    column_centers: Array1<f64>,
    column_scales: Array1<f64>,
}

impl DesignMatrix {
    /// Centers and scales a raw predictor matrix.
    pub fn standardize(raw: Array2<f64>) -> Result<Self> {
        let (n, p) = raw.dim();
        if n == 0 || p == 0 {
            return Err(Error::DimensionMismatch("empty design matrix".into()));
        }
        for ((i, j), v) in raw.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
        let mut values = raw;
        let mut centers = Array1::zeros(p);
        let mut scales = Array1::zeros(p);
        for j in 0..p {
            let mut col = values.column_mut(j);
            let mean = col.sum() / n as f64;
            col.mapv_inplace(|v| v - mean);
            let scale = (col.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            if scale <= 0.0 {
                return Err(Error::ConstantColumn { index: j });
            }
            col.mapv_inplace(|v| v / scale);
            centers[j] = mean;
            scales[j] = scale;
        }
        Ok(DesignMatrix {
            values,
            column_centers: centers,
            column_scales: scales,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn column_centers(&self) -> &Array1<f64> {
        &self.column_centers
    }

    pub fn column_scales(&self) -> &Array1<f64> {
        &self.column_scales
    }
}

/// Observed response matrix with missing entries stored as exact zeros, the
/// boolean observation mask, and the empirical per-column missing rates.
#[derive(Debug, Clone)]
pub struct MaskedResponse {
    values: Array2<f64>,
    observed: Array2<bool>,
    rho_hat: Array1<f64>,
    column_centers: Array1<f64>,
}

impl MaskedResponse {
    /// Builds the masked response from raw observations.
    ///
    /// Observed entries are centered with the per-column mean of observed
    /// values; unobserved entries are zero-filled so dense cross-products can
    /// be used downstream. Fails if any column has no observed entry.
    pub fn from_observations(raw: Array2<f64>, observed: Array2<bool>) -> Result<Self> {
        let (n, q) = raw.dim();
        if observed.dim() != (n, q) {
            return Err(Error::DimensionMismatch(format!(
                "mask is {:?} but response is {:?}",
                observed.dim(),
                raw.dim()
            )));
        }
        let mut values = raw;
        let mut rho_hat = Array1::zeros(q);
        let mut centers = Array1::zeros(q);
        for j in 0..q {
            let mut count = 0usize;
            let mut sum = 0.0;
            for i in 0..n {
                if observed[[i, j]] {
                    let v = values[[i, j]];
                    if !v.is_finite() {
                        return Err(Error::NonFinite { row: i, col: j });
                    }
                    count += 1;
                    sum += v;
                }
            }
            if count == 0 {
                return Err(Error::AllMissingColumn { index: j });
            }
            let mean = sum / count as f64;
            for i in 0..n {
                values[[i, j]] = if observed[[i, j]] {
                    values[[i, j]] - mean
                } else {
                    0.0
                };
            }
            rho_hat[j] = (n - count) as f64 / n as f64;
            centers[j] = mean;
        }
        Ok(MaskedResponse {
            values,
            observed,
            rho_hat,
            column_centers: centers,
        })
    }

    /// Assembles a masked response from already-centered parts without
    /// recomputing missing rates. Intended for tests and resampling
    /// experiments that impose a hypothetical `rho`.
    pub fn from_parts(
        values: Array2<f64>,
        observed: Array2<bool>,
        rho_hat: Array1<f64>,
    ) -> Result<Self> {
        let (n, q) = values.dim();
        if observed.dim() != (n, q) || rho_hat.len() != q {
            return Err(Error::DimensionMismatch(
                "masked response parts do not conform".into(),
            ));
        }
        for (j, &r) in rho_hat.iter().enumerate() {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidRho { index: j, value: r });
            }
        }
        let mut values = values;
        for ((i, j), v) in values.indexed_iter_mut() {
            if !observed[[i, j]] {
                *v = 0.0;
            }
        }
        Ok(MaskedResponse {
            values,
            observed,
            rho_hat,
            column_centers: Array1::zeros(q),
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn rho_hat(&self) -> &Array1<f64> {
        &self.rho_hat
    }

    pub fn column_centers(&self) -> &Array1<f64> {
        &self.column_centers
    }
}

/// Regression coefficient matrix (p x q).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    values: Array2<f64>,
}

impl CoefficientMatrix {
    pub fn new(values: Array2<f64>) -> Self {
        CoefficientMatrix { values }
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        CoefficientMatrix {
            values: Array2::zeros((p, q)),
        }
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Indices of nonzero entries.
    pub fn support(&self) -> Vec<(usize, usize)> {
        self.values
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|(idx, _)| idx)
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Symmetric positive-definite precision matrix (q x q).
#[derive(Debug, Clone)]
pub struct PrecisionMatrix {
    values: Array2<f64>,
}

impl PrecisionMatrix {
    /// Validates symmetry (within 1e-10) and positive definiteness via a
    /// Cholesky factorization.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&values, 1e-10) {
            return Err(Error::NotPositiveDefinite(
                "precision matrix is not symmetric".into(),
            ));
        }
        if !linalg::is_positive_definite(&values) {
            return Err(Error::NotPositiveDefinite(
                "precision matrix failed Cholesky".into(),
            ));
        }
        Ok(PrecisionMatrix { values })
    }

    pub fn identity(q: usize) -> Self {
        PrecisionMatrix {
            values: Array2::eye(q),
        }
    }

    pub fn q(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn logdet(&self) -> Result<f64> {
        linalg::spd_logdet(&self.values)
    }

    pub fn inverse(&self) -> Result<Array2<f64>> {
        linalg::spd_inverse(&self.values)
    }

    /// Count of nonzero off-diagonal pairs (i < j).
    pub fn edge_count(&self) -> usize {
        let q = self.q();
        let mut count = 0;
        for i in 0..q {
            for j in (i + 1)..q {
                if self.values[[i, j]] != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Second moment `E[W W^T]` of the Bernoulli observation process:
/// `(1-rho_i)(1-rho_j)` off the diagonal and `1-rho_i` on it.
pub fn second_moment_mask(rho_hat: &Array1<f64>) -> Result<Array2<f64>> {
    let q = rho_hat.len();
    for (j, &r) in rho_hat.iter().enumerate() {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidRho { index: j, value: r });
        }
    }
    let mut m = Array2::zeros((q, q));
    for i in 0..q {
        for j in 0..q {
            m[[i, j]] = if i == j {
                1.0 - rho_hat[i]
            } else {
                (1.0 - rho_hat[i]) * (1.0 - rho_hat[j])
            };
        }
    }
    Ok(m)
}
