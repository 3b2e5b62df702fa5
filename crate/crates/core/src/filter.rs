//! Extended Kalman filter over the augmented belief `[x; ū']`, plus the plain
//! constant-velocity filter used as a baseline.
//!
//! The Jacobian has the block form `[[A, B], [0, I]]`, so the time update only
//! touches the kinematic rows and columns:
//!
//! ```text
//! P_xu ← A P_xu + B P_uu
//! P_xx ← (A P_xx + B P_ux) Aᵀ + P_xu Bᵀ + G λ Gᵀ
//! P_uu ← P_uu + Σ
//! ```
//!
//! The measurement selects position only, so the Joseph update reduces to a few
//! rank-2 corrections.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::gpfield::{symmetrize, FieldBelief, InducingGrid};
use crate::models::{Linearization, MotionModel, ObservationModel, KIN_DIM, OBS_DIM};

/// Gaussian belief over the vehicle state jointly with the whitened field.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Steps taken since the last reinitialization.
    pub step: usize,
}

impl AugmentedBelief {
    /// Field belief with a zero kinematic block.
    pub fn from_field(field: &FieldBelief) -> Self {
        let n = KIN_DIM + field.dim();
        let mut mean = DVector::zeros(n);
        mean.rows_mut(KIN_DIM, field.dim()).copy_from(&field.mean);
        let mut covariance = DMatrix::zeros(n, n);
        covariance
            .view_mut((KIN_DIM, KIN_DIM), (field.dim(), field.dim()))
            .copy_from(&field.covariance);
        AugmentedBelief {
            mean,
            covariance,
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn field_dim(&self) -> usize {
        self.mean.len() - KIN_DIM
    }

    pub fn kinematic_mean(&self) -> Vector4<f64> {
        self.mean.fixed_rows::<KIN_DIM>(0).into_owned()
    }

    pub fn kinematic_covariance(&self) -> Matrix4<f64> {
        self.covariance.fixed_view::<KIN_DIM, KIN_DIM>(0, 0).into_owned()
    }

    pub fn field_mean(&self) -> DVector<f64> {
        self.mean.rows(KIN_DIM, self.field_dim()).into_owned()
    }

    pub fn field(&self, drift_var: f64) -> FieldBelief {
        let f = self.field_dim();
        FieldBelief {
            mean: self.field_mean(),
            covariance: self.covariance.view((KIN_DIM, KIN_DIM), (f, f)).into_owned(),
            drift_var,
        }
    }

    /// Overwrite the field block (mean and covariance) and clear the cross terms.
    pub fn set_field(&mut self, field: &FieldBelief) {
        let f = self.field_dim();
        assert_eq!(f, field.dim(), "field dimension mismatch");
        self.mean.rows_mut(KIN_DIM, f).copy_from(&field.mean);
        self.covariance
            .view_mut((KIN_DIM, KIN_DIM), (f, f))
            .copy_from(&field.covariance);
        self.clear_cross_covariance();
    }

    fn clear_cross_covariance(&mut self) {
        let f = self.field_dim();
        self.covariance.view_mut((0, KIN_DIM), (KIN_DIM, f)).fill(0.0);
        self.covariance.view_mut((KIN_DIM, 0), (f, KIN_DIM)).fill(0.0);
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self.mean.iter().all(|v| v.is_finite())
            && self.covariance.columns(0, KIN_DIM).iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::FilterStep {
                run: None,
                vehicle: None,
                step: self.step,
                message: "non-finite belief".into(),
            })
        }
    }
}

fn step_error(step: usize, err: Error) -> Error {
    match err {
        Error::Numerical(message) => Error::FilterStep {
            run: None,
            vehicle: None,
            step,
            message,
        },
        other => other,
    }
}

/// EKF time update, linearized at the current mean (`z = D x̂`).
pub fn predict(belief: &mut AugmentedBelief, model: &MotionModel, grid: &InducingGrid, drift_var: f64) -> Result<()> {
    let f = belief.field_dim();
    if f != grid.state_dim() {
        return Err(Error::invalid(format!(
            "belief field dimension {f} does not match grid ({})",
            grid.state_dim()
        )));
    }
    let step = belief.step + 1;
    let kin = belief.kinematic_mean();
    let lin = Linearization::at(grid, &kin, |i| belief.mean[KIN_DIM + i]).map_err(|e| step_error(step, e))?;
    let a = lin.kinematic_jacobian(model);
    let b = lin.coupling(model);
    let a_dyn: DMatrix<f64> = nalgebra::convert(a);

    let next_kin = model.transition * kin + model.input_gain * lin.input;
    belief.mean.fixed_rows_mut::<KIN_DIM>(0).copy_from(&next_kin);

    let p = &belief.covariance;
    let pxx = p.view((0, 0), (KIN_DIM, KIN_DIM));
    let pxu = p.view((0, KIN_DIM), (KIN_DIM, f));
    let puu = p.view((KIN_DIM, KIN_DIM), (f, f));

    // B P_uu = G ((K ⊗ I₂) P_uu), column by column.
    let mut kp = DMatrix::zeros(2, f);
    for (c, col) in puu.column_iter().enumerate() {
        let (mut s0, mut s1) = (0.0, 0.0);
        for (l, &k) in lin.cross.iter().enumerate() {
            s0 += k * col[2 * l];
            s1 += k * col[2 * l + 1];
        }
        kp[(0, c)] = s0;
        kp[(1, c)] = s1;
    }
    let g: DMatrix<f64> = nalgebra::convert(model.input_gain);
    let new_pxu = &a_dyn * pxu + g * kp;
    let new_pxx = (&a_dyn * pxx + &b * pxu.transpose()) * a_dyn.transpose()
        + &new_pxu * b.transpose()
        + nalgebra::convert::<_, DMatrix<f64>>(model.input_noise(lin.fic_var));

    let p = &mut belief.covariance;
    p.view_mut((0, 0), (KIN_DIM, KIN_DIM)).copy_from(&new_pxx);
    p.view_mut((0, KIN_DIM), (KIN_DIM, f)).copy_from(&new_pxu);
    p.view_mut((KIN_DIM, 0), (f, KIN_DIM)).copy_from(&new_pxu.transpose());
    if drift_var != 0.0 {
        for i in KIN_DIM..KIN_DIM + f {
            p[(i, i)] += drift_var;
        }
    }
    let mut pxx = p.view_mut((0, 0), (KIN_DIM, KIN_DIM)).into_owned();
    symmetrize(&mut pxx);
    p.view_mut((0, 0), (KIN_DIM, KIN_DIM)).copy_from(&pxx);
    belief.step = step;
    belief.check_finite()
}

/// Measurement update with `H = [I₂ 0]`, Joseph form.
pub fn update(belief: &mut AugmentedBelief, obs: &ObservationModel, y: &Vector2<f64>) -> Result<()> {
    let n = belief.dim();
    // C = P Hᵀ
    let c = belief.covariance.columns(0, OBS_DIM).into_owned();
    let hph = Matrix2::new(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]);
    let s = hph + obs.noise;
    let s_inv = s
        .cholesky()
        .ok_or_else(|| Error::FilterStep {
            run: None,
            vehicle: None,
            step: belief.step,
            message: "innovation covariance is not positive definite".into(),
        })?
        .inverse();
    let s_inv: DMatrix<f64> = nalgebra::convert(s_inv);
    let gain = &c * &s_inv;
    let innovation = y - Vector2::new(belief.mean[0], belief.mean[1]);
    belief.mean += &gain * DVector::from_column_slice(innovation.as_slice());

    // Joseph form with H = [I₂ 0] expands to P - K Cᵀ - C Kᵀ + K S Kᵀ, where
    // S = H P Hᵀ + R. Evaluated on the upper triangle and mirrored.
    let ks = &gain * nalgebra::convert::<_, DMatrix<f64>>(s);
    let p = &mut belief.covariance;
    for j in 0..n {
        let (kj0, kj1) = (gain[(j, 0)], gain[(j, 1)]);
        let (cj0, cj1) = (c[(j, 0)], c[(j, 1)]);
        for i in 0..=j {
            let v = p[(i, j)] - gain[(i, 0)] * cj0 - gain[(i, 1)] * cj1 - c[(i, 0)] * kj0 - c[(i, 1)] * kj1
                + ks[(i, 0)] * kj0
                + ks[(i, 1)] * kj1;
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    debug_assert_eq!(p.nrows(), n);
    belief.check_finite()
}

/// Start a new vehicle: kinematic block ← `(x0, P0)`, cross terms ← 0, field kept.
pub fn reinitialize_vehicle(belief: &mut AugmentedBelief, x0: &Vector4<f64>, p0: &Matrix4<f64>) {
    belief.mean.fixed_rows_mut::<KIN_DIM>(0).copy_from(x0);
    belief.covariance.fixed_view_mut::<KIN_DIM, KIN_DIM>(0, 0).copy_from(p0);
    belief.clear_cross_covariance();
    belief.step = 0;
}

/// Plain constant-velocity Kalman filter on the kinematic state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvFilter {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub process_noise: Matrix4<f64>,
}

impl CvFilter {
    /// Baseline with process noise `q · G Gᵀ`.
    pub fn new(model: &MotionModel, q: f64, x0: Vector4<f64>, p0: Matrix4<f64>) -> Self {
        CvFilter {
            mean: x0,
            covariance: p0,
            process_noise: model.input_noise(q),
        }
    }

    pub fn predict(&mut self, model: &MotionModel) {
        let f = model.transition;
        self.mean = f * self.mean;
        let p = f * self.covariance * f.transpose() + self.process_noise;
        self.covariance = 0.5 * (p + p.transpose());
    }

    pub fn update(&mut self, obs: &ObservationModel, y: &Vector2<f64>) -> Result<()> {
        let h = nalgebra::Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        let s = h * self.covariance * h.transpose() + obs.noise;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::numerical("baseline innovation covariance is singular"))?;
        let k = self.covariance * h.transpose() * s_inv;
        self.mean += k * (y - h * self.mean);
        let ikh = Matrix4::identity() - k * h;
        let p = ikh * self.covariance * ikh.transpose() + k * obs.noise * k.transpose();
        self.covariance = 0.5 * (p + p.transpose());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpfield::{build_grid, prior_belief, Rect, Region};
    use crate::kernel::KernelParams;
    use crate::models::cv_matrices;
    use approx::assert_relative_eq;

    fn grid(params: KernelParams) -> InducingGrid {
        build_grid(params, &Region::new(vec![Rect::new(0.0, 2.0, 0.0, 1.0)]), 1.0).unwrap()
    }

    fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
        (m - m.transpose()).amax()
    }

    #[test]
    fn predict_keeps_field_mean() {
        let g = grid(KernelParams::new(0.05, 0.5).unwrap());
        let model = cv_matrices(0.5).unwrap();
        let mut b = AugmentedBelief::from_field(&prior_belief(&g));
        for i in 0..b.field_dim() {
            b.mean[4 + i] = (i as f64).sin() * 20.0;
        }
        reinitialize_vehicle(&mut b, &Vector4::new(0.5, 0.2, 1.0, 0.0), &(Matrix4::identity() * 0.1));
        let before = b.field_mean();
        predict(&mut b, &model, &g, 0.0).unwrap();
        assert_eq!(b.field_mean(), before);
        assert_eq!(b.step, 1);
        assert!(max_asymmetry(&b.covariance) <= 1e-12);
    }

    #[test]
    fn noiseless_deterministic_predict() {
        let params = KernelParams::with_jitter(0.05, 0.5, 0.0).unwrap();
        let g = grid(params);
        let model = cv_matrices(0.5).unwrap();
        let mut b = AugmentedBelief::from_field(&prior_belief(&g));
        b.covariance.fill(0.0);
        let at_point = g.points()[1];
        reinitialize_vehicle(
            &mut b,
            &Vector4::new(at_point.x, at_point.y, 1.0, 1.0),
            &Matrix4::zeros(),
        );
        predict(&mut b, &model, &g, 0.0).unwrap();
        assert!(b.covariance.amax() < 1e-12);
    }

    #[test]
    fn scalar_analogue_update() {
        // Only the x position is uncertain; everything else is pinned.
        let g = grid(KernelParams::new(0.05, 0.5).unwrap());
        let mut b = AugmentedBelief::from_field(&prior_belief(&g));
        let mut p0 = Matrix4::zeros();
        p0[(0, 0)] = 1.0;
        reinitialize_vehicle(&mut b, &Vector4::zeros(), &p0);
        let obs = ObservationModel::isotropic(1.0).unwrap();
        update(&mut b, &obs, &Vector2::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(b.mean[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(b.covariance[(0, 0)], 0.5, max_relative = 1e-14);
        assert_eq!(b.mean[1], 0.0);
    }

    #[test]
    fn huge_measurement_noise_leaves_belief_unchanged() {
        let g = grid(KernelParams::new(0.05, 0.5).unwrap());
        let model = cv_matrices(0.5).unwrap();
        let mut b = AugmentedBelief::from_field(&prior_belief(&g));
        reinitialize_vehicle(&mut b, &Vector4::new(0.3, 0.4, 1.0, 0.0), &(Matrix4::identity() * 0.2));
        predict(&mut b, &model, &g, 0.0).unwrap();
        let before = b.clone();
        let obs = ObservationModel::isotropic(1e14).unwrap();
        update(&mut b, &obs, &Vector2::new(10.0, -10.0)).unwrap();
        assert!((&b.mean - &before.mean).amax() < 1e-10);
        assert!((&b.covariance - &before.covariance).amax() < 1e-10);
    }

    #[test]
    fn update_leaves_uncorrelated_blocks_alone() {
        let g = grid(KernelParams::new(0.05, 0.5).unwrap());
        let mut b = AugmentedBelief::from_field(&prior_belief(&g));
        reinitialize_vehicle(&mut b, &Vector4::new(0.3, 0.4, 1.0, 0.0), &(Matrix4::identity() * 0.2));
        // No position/field correlation after reinitialization.
        let before = b.clone();
        update(
            &mut b,
            &ObservationModel::isotropic(1.0).unwrap(),
            &Vector2::new(1.0, 1.0),
        )
        .unwrap();
        let f = b.field_dim();
        assert_eq!(b.field_mean(), before.field_mean());
        assert_eq!(
            b.covariance.view((4, 4), (f, f)).into_owned(),
            before.covariance.view((4, 4), (f, f)).into_owned()
        );
        assert!(b.covariance.view((0, 4), (4, f)).amax() == 0.0);
    }

    #[test]
    fn reinitialization_preserves_field() {
        let g = grid(KernelParams::new(0.05, 0.5).unwrap());
        let model = cv_matrices(0.5).unwrap();
        let obs = ObservationModel::isotropic(1.0).unwrap();
        let mut b = AugmentedBelief::from_field(&prior_belief(&g));
        reinitialize_vehicle(&mut b, &Vector4::new(0.0, 0.0, 2.0, 1.0), &(Matrix4::identity() * 0.2));
        for k in 0..4 {
            predict(&mut b, &model, &g, 0.0).unwrap();
            update(&mut b, &obs, &Vector2::new(1.1 * k as f64, 0.4 * k as f64)).unwrap();
        }
        let field = b.field(0.0);
        reinitialize_vehicle(&mut b, &Vector4::new(5.0, 5.0, 0.0, 1.0), &Matrix4::identity());
        assert_eq!(b.field(0.0), field);
        reinitialize_vehicle(&mut b, &Vector4::new(1.0, 1.0, 0.0, 1.0), &Matrix4::identity());
        assert_eq!(b.field(0.0), field);
        assert_eq!(b.step, 0);
        assert_eq!(b.covariance.view((0, 4), (4, b.field_dim())).amax(), 0.0);
    }

    #[test]
    fn decoupled_field_matches_plain_kalman_filter() {
        // Inducing points far away: the field cannot reach the vehicle, so the
        // augmented filter is a linear KF with process noise σ_f² G Gᵀ.
        let params = KernelParams::new(0.05, 0.5).unwrap();
        let far = InducingGrid::from_points(params, vec![nalgebra::Vector2::new(1e4, 1e4)], 1.0).unwrap();
        let model = cv_matrices(0.5).unwrap();
        let obs = ObservationModel::isotropic(1.0).unwrap();
        let x0 = Vector4::new(0.0, 0.0, 1.0, 0.5);
        let p0 = Matrix4::from_diagonal(&Vector4::new(0.2, 0.2, 0.25, 0.25));
        let mut aug = AugmentedBelief::from_field(&prior_belief(&far));
        reinitialize_vehicle(&mut aug, &x0, &p0);
        let mut cv = CvFilter::new(&model, 0.05, x0, p0);
        for k in 0..30 {
            let y = Vector2::new(0.5 * k as f64 + (k as f64).sin(), 0.25 * k as f64);
            predict(&mut aug, &model, &far, 0.0).unwrap();
            update(&mut aug, &obs, &y).unwrap();
            cv.predict(&model);
            cv.update(&obs, &y).unwrap();
            assert!((aug.kinematic_mean() - cv.mean).amax() < 1e-10);
            assert!((aug.kinematic_covariance() - cv.covariance).amax() < 1e-10);
        }
    }

    #[test]
    fn predict_rejects_mismatched_grid() {
        let g = grid(KernelParams::new(0.05, 0.5).unwrap());
        let other = InducingGrid::from_points(*g.params(), vec![nalgebra::Vector2::zeros()], 1.0).unwrap();
        let mut b = AugmentedBelief::from_field(&prior_belief(&g));
        assert!(predict(&mut b, &cv_matrices(0.5).unwrap(), &other, 0.0).is_err());
    }
}
