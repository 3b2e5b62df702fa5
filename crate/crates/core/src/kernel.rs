//! Squared-exponential kernel on planar inputs.
//!
//! `k(z, z*) = σ_f² exp(-‖z - z*‖² / (2 l²))`, its gradient with respect to the
//! first argument, and the Gram/cross-covariance assembly used by the inducing
//! point field.

use nalgebra::{Cholesky, DMatrix, Dyn, RowDVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = Vector2<f64>;

/// Relative jitter added to Gram diagonals when none is given explicitly.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-9;

/// Kernel values below this fraction of `σ_f²` are dropped when truncation is on.
pub const TRUNCATION_RATIO: f64 = 1e-12;

/// Hyperparameters of the squared-exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Signal variance σ_f², in (m/s²)².
    pub sigma_f_sq: f64,
    /// Characteristic length scale l, in metres.
    pub length_scale: f64,
    /// Added to Gram diagonals only.
    pub jitter: f64,
    /// Zero out values below `TRUNCATION_RATIO · σ_f²`. Off by default.
    #[serde(default)]
    pub truncate: bool,
}

impl KernelParams {
    /// Parameters with the default jitter floor `1e-9 · σ_f²`.
    pub fn new(sigma_f_sq: f64, length_scale: f64) -> Result<Self> {
        Self::with_jitter(sigma_f_sq, length_scale, DEFAULT_RELATIVE_JITTER * sigma_f_sq)
    }

    pub fn with_jitter(sigma_f_sq: f64, length_scale: f64, jitter: f64) -> Result<Self> {
        let params = KernelParams {
            sigma_f_sq,
            length_scale,
            jitter,
            truncate: false,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f_sq.is_finite() && self.sigma_f_sq > 0.0) {
            return Err(Error::invalid(format!(
                "sigma_f_sq must be positive and finite, got {}",
                self.sigma_f_sq
            )));
        }
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(Error::invalid(format!(
                "length_scale must be positive and finite, got {}",
                self.length_scale
            )));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::invalid(format!(
                "jitter must be non-negative, got {}",
                self.jitter
            )));
        }
        Ok(())
    }

    /// Kernel value without input validation; the hot-path variant of [`kernel_eval`].
    #[inline]
    pub fn k(&self, z: &Point2, z_star: &Point2) -> f64 {
        let d2 = (z - z_star).norm_squared();
        let value = self.sigma_f_sq * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp();
        if self.truncate && value < TRUNCATION_RATIO * self.sigma_f_sq {
            0.0
        } else {
            value
        }
    }

    /// Gradient `∂k/∂z` without input validation.
    #[inline]
    pub fn dk(&self, z: &Point2, z_star: &Point2) -> Point2 {
        let diff = z - z_star;
        let l2 = self.length_scale * self.length_scale;
        -(self.k(z, z_star) / l2) * diff
    }
}

fn check_point(p: &Point2) -> Result<()> {
    if p.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite point ({}, {})", p.x, p.y)))
    }
}

pub fn kernel_eval(params: &KernelParams, z: &Point2, z_star: &Point2) -> Result<f64> {
    check_point(z)?;
    check_point(z_star)?;
    Ok(params.k(z, z_star))
}

pub fn kernel_grad(params: &KernelParams, z: &Point2, z_star: &Point2) -> Result<Point2> {
    check_point(z)?;
    check_point(z_star)?;
    Ok(params.dk(z, z_star))
}

/// `K(ξ, ξ) + jitter·I`.
pub fn gram_matrix(params: &KernelParams, points: &[Point2]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::invalid("gram_matrix needs at least one point"));
    }
    points.iter().try_for_each(check_point)?;
    let n = points.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        gram[(i, i)] = params.k(&points[i], &points[i]) + params.jitter;
        for j in 0..i {
            let v = params.k(&points[i], &points[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}

/// Cholesky factor of a Gram matrix, with diagnostics when it fails.
pub fn factorize(gram: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    gram.clone().cholesky().ok_or_else(|| {
        let diag = gram.diagonal();
        let (min, max) = diag.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
        let sv = gram.clone().singular_values();
        let cond = sv.max() / sv.min();
        Error::numerical(format!(
            "Gram matrix ({n}x{n}) is not positive definite: diagonal in [{min:.3e}, {max:.3e}], \
             condition number {cond:.3e}; increase jitter",
            n = gram.nrows()
        ))
    })
}

/// Row `K(z, ξ)`; no jitter.
pub fn cross_covariance(params: &KernelParams, z: &Point2, points: &[Point2]) -> Result<RowDVector<f64>> {
    if points.is_empty() {
        return Err(Error::invalid("cross_covariance needs at least one point"));
    }
    check_point(z)?;
    Ok(RowDVector::from_iterator(
        points.len(),
        points.iter().map(|p| params.k(z, p)),
    ))
}
