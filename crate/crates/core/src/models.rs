//! Model matrices: constant-velocity dynamics, position measurements, and the
//! augmented transition over `[x; ū']`.
//!
//! State ordering is `(p_x, p_y, v_x, v_y)`. The augmented transition is
//!
//! ```text
//! x⁺  = F x + G (K(D x, ξ) ⊗ I₂) ū'
//! ū'⁺ = ū'
//! ```
//!
//! with the FIC residual `λ(Dx) I₂` and random-walk drift entering only the
//! process noise.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::gpfield::{combine, cross_kron, InducingGrid, INPUT_DIM};
use crate::kernel::Point2;

/// Kinematic state dimension.
pub const KIN_DIM: usize = 4;
/// Measurement dimension.
pub const OBS_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub transition: Matrix4<f64>,
    pub input_gain: Matrix4x2<f64>,
    pub sampling_interval: f64,
}

/// Constant-velocity model: `F = [[1, T], [0, 1]] ⊗ I₂`, `G = [T²/2, T]ᵀ ⊗ I₂`.
pub fn cv_matrices(dt: f64) -> Result<MotionModel> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("sampling interval must be positive, got {dt}")));
    }
    #[rustfmt::skip]
    let transition = Matrix4::new(
        1.0, 0.0, dt,  0.0,
        0.0, 1.0, 0.0, dt,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let half = 0.5 * dt * dt;
    #[rustfmt::skip]
    let input_gain = Matrix4x2::new(
        half, 0.0,
        0.0,  half,
        dt,   0.0,
        0.0,  dt,
    );
    Ok(MotionModel {
        transition,
        input_gain,
        sampling_interval: dt,
    })
}

impl MotionModel {
    /// `G Q Gᵀ` for an isotropic input covariance `q I₂`.
    pub fn input_noise(&self, q: f64) -> Matrix4<f64> {
        self.input_gain * self.input_gain.transpose() * q
    }
}

/// Linear position measurement `y = H x + e`, `e ~ N(0, R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationModel {
    pub noise: Matrix2<f64>,
}

impl ObservationModel {
    pub fn isotropic(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid(format!("measurement noise must be positive, got {r}")));
        }
        Ok(ObservationModel {
            noise: Matrix2::identity() * r,
        })
    }

    /// `H = [I₂ 0]` for a state of dimension `dim`.
    pub fn h_matrix(dim: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(OBS_DIM, dim);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        h
    }
}

/// `D = [I₂ 0]`: the position that drives the input.
pub fn input_selector() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

pub fn position(x: &Vector4<f64>) -> Point2 {
    Point2::new(x[0], x[1])
}

/// Everything the filter needs about the transition at one linearization point.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// Location `z = D x` where the field is evaluated.
    pub z: Point2,
    /// `K(z, ξ)`.
    pub cross: DVector<f64>,
    /// Mean input at `z`.
    pub input: Vector2<f64>,
    /// `∂u/∂z` (row: input component, column: coordinate).
    pub input_jacobian: Matrix2<f64>,
    /// FIC residual variance `λ(z)`.
    pub fic_var: f64,
}

impl Linearization {
    pub fn at(grid: &InducingGrid, kin: &Vector4<f64>, field_mean: impl Fn(usize) -> f64) -> Result<Self> {
        let z = position(kin);
        if !z.iter().all(|c| c.is_finite()) {
            return Err(Error::numerical("non-finite position in transition"));
        }
        let params = grid.params();
        let cross = grid.cross_row(&z);
        let mut input_jacobian = Matrix2::zeros();
        for (l, xi) in grid.points().iter().enumerate() {
            if cross[l] == 0.0 {
                continue;
            }
            let grad = params.dk(&z, xi);
            let w = Vector2::new(field_mean(INPUT_DIM * l), field_mean(INPUT_DIM * l + 1));
            input_jacobian += w * grad.transpose();
        }
        let input = combine(&cross, &field_mean);
        let fic_var = grid.fic_variance_with(&cross)?;
        Ok(Linearization {
            z,
            cross,
            input,
            input_jacobian,
            fic_var,
        })
    }

    /// Top-left Jacobian block `F + G (∂u/∂z) D`.
    pub fn kinematic_jacobian(&self, model: &MotionModel) -> Matrix4<f64> {
        model.transition + model.input_gain * self.input_jacobian * input_selector()
    }

    /// Top-right Jacobian block `G (K(z, ξ) ⊗ I₂)`, 4×2L.
    pub fn coupling(&self, model: &MotionModel) -> DMatrix<f64> {
        let g = nalgebra::convert_ref::<Matrix4x2<f64>, DMatrix<f64>>(&model.input_gain);
        g * cross_kron(&self.cross)
    }
}

fn check_aug_dim(grid: &InducingGrid, aug_mean: &DVector<f64>) -> Result<()> {
    let expected = KIN_DIM + grid.state_dim();
    if aug_mean.len() != expected {
        return Err(Error::invalid(format!(
            "augmented state has dimension {}, expected {expected}",
            aug_mean.len()
        )));
    }
    Ok(())
}

fn kinematic_part(aug: &DVector<f64>) -> Vector4<f64> {
    Vector4::new(aug[0], aug[1], aug[2], aug[3])
}

pub fn augmented_transition_mean(
    model: &MotionModel,
    grid: &InducingGrid,
    aug_mean: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_aug_dim(grid, aug_mean)?;
    let x = kinematic_part(aug_mean);
    let cross = grid.cross_row(&position(&x));
    let u = combine(&cross, |i| aug_mean[KIN_DIM + i]);
    let next = model.transition * x + model.input_gain * u;
    let mut out = aug_mean.clone();
    out.fixed_rows_mut::<KIN_DIM>(0).copy_from(&next);
    Ok(out)
}

/// Dense Jacobian `[[F + G (∂u/∂z) D, G (K(z, ξ) ⊗ I₂)], [0, I]]`.
pub fn augmented_transition_jacobian(
    model: &MotionModel,
    grid: &InducingGrid,
    aug_mean: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_aug_dim(grid, aug_mean)?;
    let lin = Linearization::at(grid, &kinematic_part(aug_mean), |i| aug_mean[KIN_DIM + i])?;
    let n = aug_mean.len();
    let mut jac = DMatrix::identity(n, n);
    jac.fixed_view_mut::<KIN_DIM, KIN_DIM>(0, 0)
        .copy_from(&lin.kinematic_jacobian(model));
    jac.view_mut((0, KIN_DIM), (KIN_DIM, n - KIN_DIM))
        .copy_from(&lin.coupling(model));
    Ok(jac)
}

/// `blockdiag(G λ(z) Gᵀ, drift_var · I)`.
pub fn augmented_process_noise(
    model: &MotionModel,
    grid: &InducingGrid,
    drift_var: f64,
    z: &Point2,
) -> Result<DMatrix<f64>> {
    let lambda = crate::gpfield::fic_variance(grid, z)?;
    let n = KIN_DIM + grid.state_dim();
    let mut q = DMatrix::zeros(n, n);
    q.fixed_view_mut::<KIN_DIM, KIN_DIM>(0, 0)
        .copy_from(&model.input_noise(lambda));
    for i in KIN_DIM..n {
        q[(i, i)] = drift_var;
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpfield::{build_grid, Rect, Region};
    use crate::kernel::KernelParams;
    use approx::assert_relative_eq;

    fn grid(params: KernelParams) -> InducingGrid {
        let region = Region::new(vec![Rect::new(0.0, 3.0, 0.0, 2.0)]);
        build_grid(params, &region, 1.0).unwrap()
    }

    #[test]
    fn cv_matrices_at_two_hertz() {
        let m = cv_matrices(0.5).unwrap();
        #[rustfmt::skip]
        let f = Matrix4::new(
            1.0, 0.0, 0.5, 0.0,
            0.0, 1.0, 0.0, 0.5,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        let g = Matrix4x2::new(0.125, 0.0, 0.0, 0.125, 0.5, 0.0, 0.0, 0.5);
        assert_eq!(m.transition, f);
        assert_eq!(m.input_gain, g);
        assert!(cv_matrices(0.0).is_err());
        assert!(cv_matrices(-0.5).is_err());
    }

    #[test]
    fn cv_prediction_moves_position() {
        let m = cv_matrices(1.0).unwrap();
        let next = m.transition * Vector4::new(0.0, 0.0, 1.0, 0.0);
        assert_eq!((next[0], next[1]), (1.0, 0.0));
        for dt in [0.1, 0.5, 3.0] {
            let m = cv_matrices(dt).unwrap();
            assert_eq!(m.transition.fixed_view::<2, 2>(2, 2).into_owned(), Matrix2::identity());
        }
    }

    #[test]
    fn zero_field_is_plain_cv() {
        let g = grid(KernelParams::new(0.05, 0.5).unwrap());
        let m = cv_matrices(0.5).unwrap();
        let mut aug = DVector::zeros(4 + g.state_dim());
        aug.fixed_rows_mut::<4>(0).copy_from(&Vector4::new(1.2, 0.7, 2.0, -1.0));
        let next = augmented_transition_mean(&m, &g, &aug).unwrap();
        let cv = m.transition * Vector4::new(1.2, 0.7, 2.0, -1.0);
        assert_eq!(next.fixed_rows::<4>(0).into_owned(), cv);
        assert!(next.rows(4, g.state_dim()).iter().all(|&v| v == 0.0));

        let jac = augmented_transition_jacobian(&m, &g, &aug).unwrap();
        assert_eq!(jac.fixed_view::<4, 4>(0, 0).into_owned(), m.transition);
        let z = Point2::new(1.2, 0.7);
        let coupling = jac.view((0, 4), (4, g.state_dim()));
        for (l, xi) in g.points().iter().enumerate() {
            let k = g.params().k(&z, xi);
            assert_relative_eq!(coupling[(0, 2 * l)], 0.125 * k);
            assert_relative_eq!(coupling[(3, 2 * l + 1)], 0.5 * k);
            assert_eq!(coupling[(0, 2 * l + 1)], 0.0);
        }
        let bottom = jac.view((4, 0), (g.state_dim(), 4 + g.state_dim()));
        assert_eq!(bottom.columns(0, 4).amax(), 0.0);
        assert_eq!(
            bottom.columns(4, g.state_dim()).into_owned(),
            DMatrix::identity(g.state_dim(), g.state_dim())
        );
    }

    #[test]
    fn single_point_input_under_vehicle() {
        let params = KernelParams::new(0.05, 0.5).unwrap();
        let g = InducingGrid::from_points(params, vec![Point2::new(2.0, 3.0)], 1.0).unwrap();
        let m = cv_matrices(0.5).unwrap();
        let aug = DVector::from_vec(vec![2.0, 3.0, 1.0, 0.5, 1.0, 0.0]);
        let next = augmented_transition_mean(&m, &g, &aug).unwrap();
        let expected = m.transition * Vector4::new(2.0, 3.0, 1.0, 0.5) + m.input_gain * Vector2::new(0.05, 0.0);
        assert_relative_eq!(next.fixed_rows::<4>(0).into_owned(), expected, max_relative = 1e-15);
        assert_eq!((next[4], next[5]), (1.0, 0.0));
    }

    #[test]
    fn process_noise_limits() {
        let params = KernelParams::with_jitter(0.05, 0.5, 0.0).unwrap();
        let g = grid(params);
        let m = cv_matrices(0.5).unwrap();
        let at_point = augmented_process_noise(&m, &g, 0.0, &g.points()[3]).unwrap();
        assert!(at_point.amax() < 1e-10);

        let far = augmented_process_noise(&m, &g, 0.0, &Point2::new(100.0, 100.0)).unwrap();
        let expected = m.input_noise(0.05);
        assert_relative_eq!(
            far.fixed_view::<4, 4>(0, 0).into_owned(),
            expected,
            max_relative = 1e-10
        );

        let with_drift = augmented_process_noise(&m, &g, 0.3, &Point2::new(0.4, 0.4)).unwrap();
        assert_eq!(with_drift, with_drift.transpose());
        let eig = with_drift.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > -1e-14));
        let kin_rank = with_drift
            .fixed_view::<4, 4>(0, 0)
            .into_owned()
            .symmetric_eigenvalues()
            .iter()
            .filter(|&&e| e.abs() > 1e-12)
            .count();
        assert!(kin_rank <= 2);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = grid(KernelParams::new(0.05, 0.5).unwrap());
        let m = cv_matrices(0.5).unwrap();
        let bad = DVector::zeros(5);
        assert!(augmented_transition_mean(&m, &g, &bad).is_err());
        assert!(augmented_transition_jacobian(&m, &g, &bad).is_err());
    }
}
