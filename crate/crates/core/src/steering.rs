//! Angle/TDOA grid, PHAT normalization gains and the steering matrix.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::GccParams;

/// Uniform grid of candidate directions over [-π/2, π/2] and their TDOAs.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    /// Angles in radians, strictly increasing.
    pub thetas: Vec<f64>,
    /// Far-field TDOA of each angle, in samples.
    pub taus: Vec<f64>,
}

impl AngularGrid {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// Builds the angle grid and the matching TDOAs `τ = (fS/c)·d·sin θ`.
pub fn theta_grid(params: &GccParams) -> Result<AngularGrid> {
    params.validate()?;
    let q = params.q;
    let span = (q - 1) as f64;
    // (2q - (Q-1)) / (2(Q-1)) keeps mirrored entries exact negatives of each other.
    let thetas: Vec<f64> = (0..q)
        .map(|i| (2.0 * i as f64 - span) / (2.0 * span) * PI)
        .collect();
    let scale = params.max_tdoa();
    let taus = thetas.iter().map(|t| scale * t.sin()).collect();
    Ok(AngularGrid { thetas, taus })
}

/// PHAT normalization gains `g[k]`, `k = 0..=N/2`, with `Σ g² = 1`.
pub fn normalization_gains(n: usize) -> Result<Vec<f64>> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "frame size must be even and at least 4, got {n}"
        )));
    }
    let edge = 1.0 / (n as f64).sqrt();
    let inner = (2.0 / n as f64).sqrt();
    Ok((0..=n / 2)
        .map(|k| if k == 0 || k == n / 2 { edge } else { inner })
        .collect())
}

/// Complex `Q × (N/2+1)` steering matrix with rows `g[k]·exp(j2πk·τ_q/N)`.
///
/// Every row has unit Euclidean norm, so `diag{W Wᴴ} = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringMatrix {
    n: usize,
    gains: Vec<f64>,
    taus: Vec<f64>,
    entries: Vec<Complex64>,
}

impl SteeringMatrix {
    /// Builds the matrix for arbitrary TDOAs. Used directly when a grid does
    /// not come from [`theta_grid`].
    pub fn from_taus(n: usize, taus: &[f64]) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::dim("steering matrix rows", 1, 0));
        }
        let gains = normalization_gains(n)?;
        let bins = gains.len();
        let mut entries = Vec::with_capacity(taus.len() * bins);
        for &tau in taus {
            let omega = 2.0 * PI * tau / n as f64;
            entries.extend(
                gains
                    .iter()
                    .enumerate()
                    .map(|(k, &g)| Complex64::from_polar(g, omega * k as f64)),
            );
        }
        Ok(Self {
            n,
            gains,
            taus: taus.to_vec(),
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.taus.len()
    }

    pub fn cols(&self) -> usize {
        self.gains.len()
    }

    pub fn frame_size(&self) -> usize {
        self.n
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn row(&self, q: usize) -> &[Complex64] {
        let b = self.cols();
        &self.entries[q * b..(q + 1) * b]
    }

    pub fn get(&self, q: usize, k: usize) -> Complex64 {
        self.entries[q * self.cols() + k]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }
}

/// Builds `W` for a grid produced from the same parameters.
pub fn steering_matrix(params: &GccParams, grid: &AngularGrid) -> Result<SteeringMatrix> {
    params.validate()?;
    if grid.taus.len() != params.q || grid.thetas.len() != params.q {
        return Err(Error::Config(format!(
            "grid has {} angles but Q = {}",
            grid.taus.len(),
            params.q
        )));
    }
    SteeringMatrix::from_taus(params.n, &grid.taus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_grid_center_and_edge() {
        let grid = theta_grid(&GccParams::default()).unwrap();
        assert_eq!(grid.len(), 181);
        assert_eq!(grid.thetas[90], 0.0);
        assert_eq!(grid.taus[90], 0.0);
        assert_eq!(grid.thetas[0], -PI / 2.0);
        assert_eq!(grid.thetas[180], PI / 2.0);
        // 16000 * 0.05 / 343
        assert_abs_diff_eq!(grid.taus[180], 2.332_361_516_034_985, epsilon = 1e-12);
    }

    #[test]
    fn three_point_grid() {
        let p = GccParams {
            q: 3,
            ..GccParams::default()
        };
        let grid = theta_grid(&p).unwrap();
        assert_eq!(grid.thetas, vec![-PI / 2.0, 0.0, PI / 2.0]);
    }

    #[test]
    fn grid_is_monotone_and_odd() {
        for q in [2, 3, 10, 181, 360] {
            let p = GccParams {
                q,
                ..GccParams::default()
            };
            let g = theta_grid(&p).unwrap();
            let step = PI / (q - 1) as f64;
            for i in 1..q {
                assert!(g.thetas[i] > g.thetas[i - 1]);
                assert!(g.taus[i] > g.taus[i - 1]);
                assert_abs_diff_eq!(g.thetas[i] - g.thetas[i - 1], step, epsilon = 1e-12);
            }
            for i in 0..q {
                assert_eq!(g.taus[i], -g.taus[q - 1 - i]);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let p = GccParams {
            q: 1,
            ..GccParams::default()
        };
        assert!(matches!(theta_grid(&p), Err(Error::Config(_))));
    }

    #[test]
    fn gains_reference_values() {
        let g = normalization_gains(512).unwrap();
        assert_eq!(g.len(), 257);
        assert_abs_diff_eq!(g[0], 0.044_194_173_824_159_22, epsilon = 1e-15);
        assert_eq!(g[256], g[0]);
        assert_eq!(g[100], 0.0625);
        for n in [4, 6, 16, 512, 1024] {
            let s: f64 = normalization_gains(n).unwrap().iter().map(|x| x * x).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
        assert!(normalization_gains(511).is_err());
        assert!(normalization_gains(2).is_err());
    }

    #[test]
    fn steering_rows_unit_norm_and_gain_modulus() {
        let p = GccParams::default();
        let grid = theta_grid(&p).unwrap();
        let w = steering_matrix(&p, &grid).unwrap();
        assert_eq!((w.rows(), w.cols()), (181, 257));
        for q in 0..w.rows() {
            let norm: f64 = w.row(q).iter().map(|z| z.norm_sqr()).sum();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
            for k in 0..w.cols() {
                assert_abs_diff_eq!(w.get(q, k).norm(), w.gains()[k], epsilon = 1e-15);
            }
            assert_eq!(w.get(q, 0), Complex64::new(w.gains()[0], 0.0));
        }
        // zero-TDOA row is the real gain vector
        for (k, z) in w.row(90).iter().enumerate() {
            assert_eq!(*z, Complex64::new(w.gains()[k], 0.0));
        }
    }

    #[test]
    fn mirrored_rows_are_conjugates() {
        let p = GccParams::default();
        let grid = theta_grid(&p).unwrap();
        let w = steering_matrix(&p, &grid).unwrap();
        for q in 0..p.q {
            let mirror = w.row(p.q - 1 - q);
            for (a, b) in w.row(q).iter().zip(mirror) {
                assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-15);
                assert_abs_diff_eq!(a.im, -b.im, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn grid_size_mismatch_is_config_error() {
        let p = GccParams::default();
        let mut grid = theta_grid(&p).unwrap();
        grid.taus.pop();
        grid.thetas.pop();
        assert!(matches!(steering_matrix(&p, &grid), Err(Error::Config(_))));
    }
}
