//! Nearest positive semi-definite projection in the elementwise maximum norm.
//!
//! The projection `argmin_{K >= 0} ||S - K||_max` has no closed form, so it is
//! solved by bisection on the radius `r` of the box `{K : ||K - S||_max <= r}`
//! combined with Dykstra alternating projections between that box and the PSD
//! cone. A radius is feasible when the alternating sequence produces a PSD
//! iterate whose box violation is below a small tolerance. The eigenvalue
//! clipping projection provides the initial (always feasible) upper bound, so
//! the result is never worse than clipping.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct PsdProjectConfig {
    /// Eigenvalue floor tolerance: the output is guaranteed `K >= -tol * I`.
    pub eig_tol: f64,
    /// Cap on Dykstra alternations per bisection step.
    pub max_alternations: usize,
    /// Bisection stops when the radius bracket is below
    /// `bracket_rtol * ||S||_max`.
    pub bracket_rtol: f64,
    /// Box-violation threshold that declares a radius feasible.
    pub feas_tol: f64,
    /// Fall back to the eigenvalue-clipping projection instead of erroring
    /// when no radius below the clipping distance can be certified.
    pub accept_clip_fallback: bool,
}

impl Default for PsdProjectConfig {
    fn default() -> Self {
        PsdProjectConfig {
            eig_tol: 1e-7,
            max_alternations: 5000,
            bracket_rtol: 1e-6,
            feas_tol: 1e-8,
            accept_clip_fallback: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsdProjection {
    /// The projected matrix (symmetric, eigenvalues >= -eig_tol).
    pub matrix: Array2<f64>,
    /// Achieved maximum-norm distance `||matrix - S||_max`.
    pub distance: f64,
    /// Distance of the eigenvalue-clipping projection (upper bound).
    pub clip_distance: f64,
    /// Number of bisection steps performed.
    pub bisection_steps: usize,
    /// False when the returned matrix is the clipping fallback because no
    /// smaller radius could be certified within the alternation cap.
    pub improved_over_clip: bool,
}

/// Projects eigenvalues onto `[0, inf)`.
pub fn clip_to_psd(s: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = linalg::sym_eigen(s);
    let clipped = vals.mapv(|v| v.max(0.0));
    let scaled = &vecs * &clipped; // scales columns
    linalg::symmetrize(&scaled.dot(&vecs.t()))
}

fn box_clamp(u: &Array2<f64>, s: &Array2<f64>, r: f64) -> Array2<f64> {
    let mut out = u.clone();
    out.zip_mut_with(s, |v, &c| *v = v.clamp(c - r, c + r));
    out
}

fn box_excess(k: &Array2<f64>, s: &Array2<f64>, r: f64) -> f64 {
    k.iter()
        .zip(s.iter())
        .fold(0.0_f64, |m, (&a, &b)| m.max((a - b).abs() - r))
        .max(0.0)
}

/// Dykstra alternation between the PSD cone and the max-norm box of radius
/// `r` around `s`. Returns a PSD witness when the intersection is certified
/// nonempty within the alternation cap.
fn dykstra_witness(s: &Array2<f64>, r: f64, cfg: &PsdProjectConfig) -> Option<Array2<f64>> {
    let dim = s.dim();
    let mut y = s.clone();
    let mut p = Array2::zeros(dim);
    let mut q = Array2::zeros(dim);
    let mut best_excess = f64::INFINITY;
    let mut best: Option<Array2<f64>> = None;
    for _ in 0..cfg.max_alternations {
        let x = clip_to_psd(&(&y + &p));
        p = &y + &p - &x;
        let excess = box_excess(&x, s, r);
        if excess < best_excess {
            best_excess = excess;
            best = Some(x.clone());
            if best_excess <= cfg.feas_tol {
                break;
            }
        }
        y = box_clamp(&(&x + &q), s, r);
        q = &x + &q - &y;
    }
    if best_excess <= cfg.feas_tol {
        best
    } else {
        None
    }
}

/// Nearest-PSD projection in the maximum norm.
pub fn project_psd_maxnorm(s: &Array2<f64>, cfg: &PsdProjectConfig) -> Result<PsdProjection> {
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch(
            "projection input must be square".into(),
        ));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "projection input has non-finite entries".into(),
        ));
    }
    if !linalg::is_symmetric(s, 1e-10) {
        return Err(Error::InvalidParameter(
            "projection input must be symmetric".into(),
        ));
    }

    let clip = clip_to_psd(s);
    let clip_distance = max_dist(&clip, s);
    // Already PSD (clipping changed nothing beyond the feasibility slack).
    if clip_distance <= cfg.feas_tol {
        return Ok(PsdProjection {
            matrix: s.clone(),
            distance: 0.0,
            clip_distance,
            bisection_steps: 0,
            improved_over_clip: true,
        });
    }

    let scale = linalg::max_abs(s).max(1.0);
    let bracket_tol = cfg.bracket_rtol * linalg::max_abs(s);
    let mut lo = 0.0_f64;
    let mut hi = clip_distance;
    let mut best = clip.clone();
    let mut improved = false;
    let mut steps = 0usize;
    while hi - lo > bracket_tol && steps < 80 {
        let mid = 0.5 * (lo + hi);
        match dykstra_witness(s, mid, cfg) {
            Some(w) => {
                hi = mid;
                best = w;
                improved = true;
            }
            None => {
                lo = mid;
            }
        }
        steps += 1;
        if hi / scale < 1e-15 {
            break;
        }
    }
    // Polish the witness at the final radius so the reported distance is
    // tight against the certified bracket.
    if improved {
        let polish = PsdProjectConfig {
            max_alternations: 4 * cfg.max_alternations,
            feas_tol: cfg.feas_tol.min(1e-10),
            ..cfg.clone()
        };
        if let Some(w) = dykstra_witness(s, hi, &polish) {
            best = w;
        }
    }

    let distance = max_dist(&best, s);
    if distance > clip_distance {
        if cfg.accept_clip_fallback {
            return Ok(PsdProjection {
                matrix: clip,
                distance: clip_distance,
                clip_distance,
                bisection_steps: steps,
                improved_over_clip: false,
            });
        }
        return Err(Error::NotConverged {
            iterations: cfg.max_alternations,
            residual: distance - clip_distance,
        });
    }
    Ok(PsdProjection {
        matrix: best,
        distance,
        clip_distance,
        bisection_steps: steps,
        improved_over_clip: improved,
    })
}

fn max_dist(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (&x, &y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Brute-force oracle: minimum max-norm distance from `s` to a PSD 2x2
    /// symmetric matrix, searched on a grid of the given resolution.
    fn grid_oracle_2x2(s: &Array2<f64>, resolution: f64) -> f64 {
        let span = 3.0 * linalg::max_abs(s).max(1.0);
        let steps = (2.0 * span / resolution).ceil() as i64;
        let mut best = f64::INFINITY;
        for ia in 0..=steps {
            let a = -span + ia as f64 * resolution;
            if a < 0.0 {
                continue;
            }
            // prune on the diagonal distance alone
            let da = (a - s[[0, 0]]).abs();
            if da >= best {
                continue;
            }
            for ib in 0..=steps {
                let b = -span + ib as f64 * resolution;
                if b < 0.0 {
                    continue;
                }
                let db = (b - s[[1, 1]]).abs().max(da);
                if db >= best {
                    continue;
                }
                let cmax = (a * b).sqrt();
                // closest feasible off-diagonal to s01 given the diagonal
                let c = s[[0, 1]].clamp(-cmax, cmax);
                let d = db.max((c - s[[0, 1]]).abs());
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    #[test]
    fn psd_input_is_unchanged() {
        let s = Array2::eye(3);
        let proj = project_psd_maxnorm(&s, &PsdProjectConfig::default()).unwrap();
        assert_eq!(proj.matrix, s);
        assert_eq!(proj.distance, 0.0);
    }

    #[test]
    fn flip_matrix_has_analytic_projection() {
        let s = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let proj = project_psd_maxnorm(&s, &PsdProjectConfig::default()).unwrap();
        assert!((proj.distance - 0.5).abs() < 1e-6, "{}", proj.distance);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (proj.matrix[[i, j]] - 0.5).abs() < 1e-5,
                    "entry ({i},{j}) = {}",
                    proj.matrix[[i, j]]
                );
            }
        }
    }

    #[test]
    fn indefinite_diagonal_matches_grid_oracle() {
        let s = arr2(&[[-1.0, 0.0], [0.0, 2.0]]);
        let proj = project_psd_maxnorm(&s, &PsdProjectConfig::default()).unwrap();
        let oracle = grid_oracle_2x2(&s, 1e-3);
        assert!(
            (proj.distance - oracle).abs() < 2e-3,
            "distance {} vs oracle {}",
            proj.distance,
            oracle
        );
        assert!((proj.distance - 1.0).abs() < 1e-5);
    }

    #[test]
    fn random_2x2_against_grid_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = rng.random_range(-1.0..1.0);
            let b = rng.random_range(-1.0..1.0);
            let c = rng.random_range(-1.0..1.0);
            let s = arr2(&[[a, c], [c, b]]);
            let proj = project_psd_maxnorm(&s, &PsdProjectConfig::default()).unwrap();
            let oracle = grid_oracle_2x2(&s, 1e-3);
            assert!(
                proj.distance <= oracle + 2e-3,
                "distance {} vs oracle {} for {s:?}",
                proj.distance,
                oracle
            );
        }
    }

    #[test]
    fn projection_beats_clipping_and_stays_psd() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..10 {
            let raw = Array2::from_shape_fn((5, 5), |_| rng.random_range(-1.0..1.0));
            let s = linalg::symmetrize(&raw);
            let proj = project_psd_maxnorm(&s, &PsdProjectConfig::default()).unwrap();
            assert!(proj.distance <= proj.clip_distance + 1e-9);
            assert!(linalg::min_eigenvalue(&proj.matrix) >= -1e-8);
            assert!(linalg::is_symmetric(&proj.matrix, 1e-9));
        }
    }

    #[test]
    fn optimality_inequality_against_supplied_psd_matrices() {
        // The projection is at least as close as any PSD matrix.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let raw = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
        let s = linalg::symmetrize(&raw);
        let proj = project_psd_maxnorm(&s, &PsdProjectConfig::default()).unwrap();
        for _ in 0..20 {
            let f = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
            let sigma = f.t().dot(&f);
            let dist = max_dist(&sigma, &s);
            assert!(proj.distance <= dist + 1e-5);
        }
    }

    #[test]
    fn idempotent_on_psd_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..5 {
            let f = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
            let s = linalg::symmetrize(&f.t().dot(&f));
            let proj = project_psd_maxnorm(&s, &PsdProjectConfig::default()).unwrap();
            assert_eq!(proj.matrix, s);
            assert_eq!(proj.distance, 0.0);
        }
    }
}
