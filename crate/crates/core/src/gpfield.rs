//! Sparse inducing-point representation of the planar acceleration field.
//!
//! The field has two independent output components sharing one kernel, so
//! every 2L-dimensional quantity is the L-dimensional one Kronecker-multiplied
//! with `I₂`. Blocks are interleaved: entry `2l + j` is component `j` of
//! inducing point `l`.
//!
//! The state kept for the field is the whitened vector `ū' = K̃uu⁻¹ ū`, whose
//! prior covariance is `K̃uu⁻¹`. The input at a location `z` is then the linear
//! combination `(K(z, ξ) ⊗ I₂) ū'`, and the FIC residual variance is
//! `λ(z) = k(z, z) - K(z, ξ) Kuu⁻¹ K(z, ξ)ᵀ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{factorize, gram_matrix, KernelParams, Point2};

/// Number of field components (planar acceleration).
pub const INPUT_DIM: usize = 2;

/// Tolerance, relative to `σ_f²`, below which a negative FIC variance is clamped.
const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Rect {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn is_empty(&self) -> bool {
        !(self.x_max >= self.x_min && self.y_max >= self.y_min)
    }

    fn contains(&self, p: &Point2) -> bool {
        const EPS: f64 = 1e-9;
        p.x >= self.x_min - EPS && p.x <= self.x_max + EPS && p.y >= self.y_min - EPS && p.y <= self.y_max + EPS
    }
}

/// Union of axis-aligned rectangles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Region {
    pub rects: Vec<Rect>,
}

impl Region {
    pub fn new(rects: Vec<Rect>) -> Self {
        Region { rects }
    }

    pub fn contains(&self, p: &Point2) -> bool {
        self.rects.iter().any(|r| r.contains(p))
    }

    fn bounds(&self) -> Option<Rect> {
        let mut it = self.rects.iter().filter(|r| !r.is_empty());
        let first = *it.next()?;
        Some(it.fold(first, |acc, r| Rect {
            x_min: acc.x_min.min(r.x_min),
            x_max: acc.x_max.max(r.x_max),
            y_min: acc.y_min.min(r.y_min),
            y_max: acc.y_max.max(r.y_max),
        }))
    }
}

/// Fixed inducing inputs and the cached factorization of their Gram matrix.
#[derive(Debug, Clone)]
pub struct InducingGrid {
    points: Vec<Point2>,
    spacing: f64,
    params: KernelParams,
    /// `K(ξ, ξ)` without jitter.
    kernel: DMatrix<f64>,
    /// `K(ξ, ξ) + jitter·I`.
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    gram_inv: DMatrix<f64>,
}

impl InducingGrid {
    /// Grid from explicit points. `spacing` is informational only.
    pub fn from_points(params: KernelParams, points: Vec<Point2>, spacing: f64) -> Result<Self> {
        params.validate()?;
        if points.is_empty() {
            return Err(Error::invalid("inducing grid needs at least one point"));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(Error::invalid(format!(
                        "duplicate inducing point ({}, {})",
                        points[i].x, points[i].y
                    )));
                }
            }
        }
        let gram = gram_matrix(&params, &points)?;
        let chol = factorize(&gram)?;
        let mut gram_inv = chol.inverse();
        symmetrize(&mut gram_inv);
        let mut kernel = gram.clone();
        for i in 0..points.len() {
            kernel[(i, i)] -= params.jitter;
        }
        Ok(InducingGrid {
            points,
            spacing,
            params,
            kernel,
            gram,
            chol,
            gram_inv,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Dimension of the whitened field state, `2L`.
    pub fn state_dim(&self) -> usize {
        INPUT_DIM * self.points.len()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// `K(z, ξ)` as a column vector; no validation.
    pub fn cross_row(&self, z: &Point2) -> DVector<f64> {
        DVector::from_iterator(self.points.len(), self.points.iter().map(|p| self.params.k(z, p)))
    }

    /// `λ(z)` given a precomputed `K(z, ξ)`.
    pub(crate) fn fic_variance_with(&self, cross: &DVector<f64>) -> Result<f64> {
        let mut v = cross.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let sf2 = self.params.sigma_f_sq;
        let lambda = sf2 - v.norm_squared();
        if lambda < -NEGATIVE_VARIANCE_TOLERANCE * sf2 {
            return Err(Error::numerical(format!(
                "FIC variance is negative ({lambda:.3e}); the inducing Gram matrix is ill conditioned"
            )));
        }
        Ok(lambda.max(0.0))
    }
}

/// Lattice of multiples of `spacing`, clipped to `region`, ordered by y then x.
pub fn build_grid(params: KernelParams, region: &Region, spacing: f64) -> Result<InducingGrid> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::invalid(format!("grid spacing must be positive, got {spacing}")));
    }
    let bounds = region.bounds().ok_or_else(|| Error::invalid("grid region is empty"))?;
    let ix0 = (bounds.x_min / spacing - 1e-9).ceil() as i64;
    let ix1 = (bounds.x_max / spacing + 1e-9).floor() as i64;
    let iy0 = (bounds.y_min / spacing - 1e-9).ceil() as i64;
    let iy1 = (bounds.y_max / spacing + 1e-9).floor() as i64;
    let points: Vec<Point2> = (iy0..=iy1)
        .flat_map(|iy| (ix0..=ix1).map(move |ix| Point2::new(ix as f64 * spacing, iy as f64 * spacing)))
        .filter(|p| region.contains(p))
        .collect();
    if points.is_empty() {
        return Err(Error::invalid("grid region contains no lattice points"));
    }
    InducingGrid::from_points(params, points, spacing)
}

/// Gaussian belief over the whitened inducing state `ū'`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Random-walk variance per step; the drift covariance is `drift_var · I`.
    pub drift_var: f64,
}

impl FieldBelief {
    pub fn with_drift(mut self, drift_var: f64) -> Self {
        self.drift_var = drift_var;
        self
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `N(0, K̃uu⁻¹)` with no drift.
pub fn prior_belief(grid: &InducingGrid) -> FieldBelief {
    FieldBelief {
        mean: DVector::zeros(grid.state_dim()),
        covariance: kron_i2(grid.gram_inverse()),
        drift_var: 0.0,
    }
}

/// `A ⊗ I₂` with interleaved blocks.
pub fn kron_i2(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut out = DMatrix::zeros(INPUT_DIM * r, INPUT_DIM * c);
    for i in 0..r {
        for j in 0..c {
            let v = a[(i, j)];
            for d in 0..INPUT_DIM {
                out[(INPUT_DIM * i + d, INPUT_DIM * j + d)] = v;
            }
        }
    }
    out
}

/// `(K(z, ξ) ⊗ I₂) m` for an interleaved 2L vector.
pub(crate) fn combine(cross: &DVector<f64>, whitened: impl Fn(usize) -> f64) -> Vector2<f64> {
    let mut acc = Vector2::zeros();
    for (l, &k) in cross.iter().enumerate() {
        if k != 0.0 {
            acc.x += k * whitened(INPUT_DIM * l);
            acc.y += k * whitened(INPUT_DIM * l + 1);
        }
    }
    acc
}

/// `(K(z, ξ) ⊗ I₂)` as a dense 2×2L matrix.
pub(crate) fn cross_kron(cross: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(INPUT_DIM, INPUT_DIM * cross.len());
    for (l, &k) in cross.iter().enumerate() {
        out[(0, INPUT_DIM * l)] = k;
        out[(1, INPUT_DIM * l + 1)] = k;
    }
    out
}

/// Mean input at `z`: `Σ_l k(z, ξ_l) ū'_l`.
pub fn input_mean(grid: &InducingGrid, belief: &FieldBelief, z: &Point2) -> Vector2<f64> {
    let cross = grid.cross_row(z);
    combine(&cross, |i| belief.mean[i])
}

/// FIC residual variance `λ(z)`; the input noise covariance is `λ(z) I₂`.
pub fn fic_variance(grid: &InducingGrid, z: &Point2) -> Result<f64> {
    if !z.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid("non-finite location"));
    }
    grid.fic_variance_with(&grid.cross_row(z))
}

/// Random-walk step: mean unchanged, covariance grows by `drift_var · I`.
pub fn drift(belief: &FieldBelief) -> FieldBelief {
    let mut out = belief.clone();
    if belief.drift_var != 0.0 {
        for i in 0..out.dim() {
            out.covariance[(i, i)] += belief.drift_var;
        }
    }
    out
}

/// Linear-Gaussian update from a direct, noisy observation of the input at `z`.
pub fn condition_on_input_observation(
    grid: &InducingGrid,
    belief: &FieldBelief,
    z: &Point2,
    u_obs: &Vector2<f64>,
    noise_var: f64,
) -> Result<FieldBelief> {
    if !(noise_var.is_finite() && noise_var > 0.0) {
        return Err(Error::invalid(format!("noise_var must be positive, got {noise_var}")));
    }
    let cross = grid.cross_row(z);
    let lambda = grid.fic_variance_with(&cross)?;
    let h = cross_kron(&cross);
    let pht = &belief.covariance * h.transpose();
    let s: Matrix2<f64> = {
        let hph = &h * &pht;
        Matrix2::new(hph[(0, 0)], hph[(0, 1)], hph[(1, 0)], hph[(1, 1)]) + Matrix2::identity() * (lambda + noise_var)
    };
    let s_inv = s
        .cholesky()
        .ok_or_else(|| Error::numerical("input innovation covariance is not positive definite"))?
        .inverse();
    let gain = &pht * nalgebra::convert_ref::<Matrix2<f64>, DMatrix<f64>>(&s_inv);
    let predicted = combine(&cross, |i| belief.mean[i]);
    let innovation = DVector::from_column_slice((u_obs - predicted).as_slice());
    let mean = &belief.mean + &gain * innovation;
    let mut covariance = &belief.covariance - &gain * pht.transpose();
    symmetrize(&mut covariance);
    Ok(FieldBelief {
        mean,
        covariance,
        drift_var: belief.drift_var,
    })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// One exported row per inducing point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub xi_x: f64,
    pub xi_y: f64,
    pub mean_ax: f64,
    pub mean_ay: f64,
    /// Posterior input variance at the inducing point, averaged over both components.
    pub var: f64,
}

/// Mean input at every inducing point, `K(ξ, ξ) ū'` per component.
pub fn means_at_inducing_points(grid: &InducingGrid, mean: &DVector<f64>) -> Vec<Vector2<f64>> {
    let l = grid.len();
    (0..l)
        .map(|i| {
            let mut acc = Vector2::zeros();
            for j in 0..l {
                let k = grid.kernel[(i, j)];
                acc.x += k * mean[INPUT_DIM * j];
                acc.y += k * mean[INPUT_DIM * j + 1];
            }
            acc
        })
        .collect()
}

/// Tabulate the field posterior at the inducing points.
pub fn field_rows(grid: &InducingGrid, belief: &FieldBelief) -> Result<Vec<FieldRow>> {
    let l = grid.len();
    let means = means_at_inducing_points(grid, &belief.mean);
    let mut rows = Vec::with_capacity(l);
    // Per component: diag(K P_jj K) where P_jj is the component's L×L block.
    let mut comp_var = [DVector::zeros(l), DVector::zeros(l)];
    for (d, out) in comp_var.iter_mut().enumerate() {
        let block = DMatrix::from_fn(l, l, |i, j| belief.covariance[(INPUT_DIM * i + d, INPUT_DIM * j + d)]);
        let kp = &grid.kernel * block;
        for i in 0..l {
            out[i] = kp.row(i).dot(&grid.kernel.row(i));
        }
    }
    for (i, p) in grid.points.iter().enumerate() {
        let lambda = grid.fic_variance_with(&grid.kernel.column(i).into_owned())?;
        rows.push(FieldRow {
            xi_x: p.x,
            xi_y: p.y,
            mean_ax: means[i].x,
            mean_ay: means[i].y,
            var: lambda + 0.5 * (comp_var[0][i] + comp_var[1][i]),
        });
    }
    Ok(rows)
}
