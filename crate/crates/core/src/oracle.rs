//! Independent reference computations used to cross-check the production path.
//!
//! Everything here is written against dense matrices and closed-form kernel
//! expressions, without the block structure, Cholesky caching, or Kronecker
//! shortcuts the production code relies on. The checks are small (L ≤ 6 for
//! the dense ones) and exposed so that both the test-suite and the CLI can run
//! them.

use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::filter::{predict, reinitialize_vehicle, update, AugmentedBelief};
use crate::gpfield::{condition_on_input_observation, prior_belief, InducingGrid};
use crate::kernel::{KernelParams, Point2};
use crate::models::{
    augmented_transition_jacobian, augmented_transition_mean, cv_matrices, MotionModel, ObservationModel,
};

/// Outcome of one cross-check.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error < self.tolerance
    }
}

/// `|a - b| / max(|b|, floor)`, maximised over entries.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn se(sf2: f64, ell: f64, a: &Point2, b: &Point2) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    sf2 * (-(dx * dx + dy * dy) / (2.0 * ell * ell)).exp()
}

/// Dense restatement of the augmented model for small grids.
#[derive(Debug, Clone)]
pub struct DenseModel {
    pub points: Vec<Point2>,
    pub sf2: f64,
    pub ell: f64,
    pub jitter: f64,
    pub dt: f64,
    pub r: f64,
    pub drift_var: f64,
}

impl DenseModel {
    pub fn new(params: &KernelParams, points: &[Point2], dt: f64, r: f64, drift_var: f64) -> Self {
        DenseModel {
            points: points.to_vec(),
            sf2: params.sigma_f_sq,
            ell: params.length_scale,
            jitter: params.jitter,
            dt,
            r,
            drift_var,
        }
    }

    fn l(&self) -> usize {
        self.points.len()
    }

    pub fn n(&self) -> usize {
        4 + 2 * self.l()
    }

    pub fn f(&self) -> DMatrix<f64> {
        let mut f = DMatrix::identity(4, 4);
        f[(0, 2)] = self.dt;
        f[(1, 3)] = self.dt;
        f
    }

    pub fn g(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(4, 2);
        g[(0, 0)] = 0.5 * self.dt * self.dt;
        g[(1, 1)] = 0.5 * self.dt * self.dt;
        g[(2, 0)] = self.dt;
        g[(3, 1)] = self.dt;
        g
    }

    pub fn kuu(&self) -> DMatrix<f64> {
        let l = self.l();
        DMatrix::from_fn(l, l, |i, j| {
            se(self.sf2, self.ell, &self.points[i], &self.points[j]) + if i == j { self.jitter } else { 0.0 }
        })
    }

    /// `K(z, ξ) ⊗ I₂` built entry by entry.
    pub fn kt(&self, z: &Point2) -> DMatrix<f64> {
        let l = self.l();
        DMatrix::from_fn(2, 2 * l, |row, col| {
            if col % 2 == row {
                se(self.sf2, self.ell, z, &self.points[col / 2])
            } else {
                0.0
            }
        })
    }

    pub fn lambda(&self, z: &Point2) -> f64 {
        let kz = DMatrix::from_fn(1, self.l(), |_, j| se(self.sf2, self.ell, z, &self.points[j]));
        let inv = self.kuu().try_inverse().expect("Kuu invertible");
        (self.sf2 - (&kz * inv * kz.transpose())[(0, 0)]).max(0.0)
    }

    pub fn transition(&self, aug: &DVector<f64>) -> DVector<f64> {
        let x = aug.rows(0, 4).into_owned();
        let w = aug.rows(4, 2 * self.l()).into_owned();
        let z = Point2::new(aug[0], aug[1]);
        let next = self.f() * x + self.g() * (self.kt(&z) * w);
        let mut out = aug.clone();
        out.rows_mut(0, 4).copy_from(&next);
        out
    }

    /// Analytic Jacobian assembled from scratch.
    pub fn jacobian(&self, aug: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let z = Point2::new(aug[0], aug[1]);
        // ∂u_j/∂z_i = Σ_l w_{l,j} k(z, ξ_l) (ξ_l - z)_i / ℓ²
        let mut du = DMatrix::zeros(2, 4);
        for (l, xi) in self.points.iter().enumerate() {
            let k = se(self.sf2, self.ell, &z, xi);
            for j in 0..2 {
                let w = aug[4 + 2 * l + j];
                du[(j, 0)] += w * k * (xi.x - z.x) / (self.ell * self.ell);
                du[(j, 1)] += w * k * (xi.y - z.y) / (self.ell * self.ell);
            }
        }
        let mut jac = DMatrix::identity(n, n);
        let top_left = self.f() + self.g() * du;
        jac.view_mut((0, 0), (4, 4)).copy_from(&top_left);
        let top_right = self.g() * self.kt(&z);
        jac.view_mut((0, 4), (4, n - 4)).copy_from(&top_right);
        jac
    }

    pub fn process_noise(&self, z: &Point2) -> DMatrix<f64> {
        let n = self.n();
        let g = self.g();
        let mut q = DMatrix::zeros(n, n);
        q.view_mut((0, 0), (4, 4))
            .copy_from(&(&g * g.transpose() * self.lambda(z)));
        for i in 4..n {
            q[(i, i)] = self.drift_var;
        }
        q
    }

    pub fn predict(&self, mean: &mut DVector<f64>, cov: &mut DMatrix<f64>) {
        let z = Point2::new(mean[0], mean[1]);
        let jac = self.jacobian(mean);
        *mean = self.transition(mean);
        *cov = &jac * &*cov * jac.transpose() + self.process_noise(&z);
    }

    /// Textbook Joseph-form update with an explicit `H`.
    pub fn update(&self, mean: &mut DVector<f64>, cov: &mut DMatrix<f64>, y: &Vector2<f64>) {
        let n = self.n();
        let mut h = DMatrix::zeros(2, n);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        let r = DMatrix::identity(2, 2) * self.r;
        let s = &h * &*cov * h.transpose() + &r;
        let k = &*cov * h.transpose() * s.try_inverse().expect("S invertible");
        let innov = DVector::from_column_slice(y.as_slice()) - &h * &*mean;
        *mean += &k * innov;
        let ikh = DMatrix::identity(n, n) - &k * &h;
        *cov = &ikh * &*cov * ikh.transpose() + &k * r * k.transpose();
    }
}

/// Central differences of `f` around `x`.
pub fn finite_difference_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    step: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + step;
        let fp = f(&xp);
        xp[j] = orig - step;
        let fm = f(&xp);
        xp[j] = orig;
        jac.set_column(j, &((fp - fm) / (2.0 * step)));
    }
    jac
}

/// Random augmented state over the grid's bounding box.
pub fn random_augmented_state(grid: &InducingGrid, rng: &mut impl Rng) -> DVector<f64> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in grid.points() {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let mut aug = DVector::zeros(4 + grid.state_dim());
    aug[0] = x0 + (x1 - x0) * rng.random::<f64>();
    aug[1] = y0 + (y1 - y0) * rng.random::<f64>();
    for i in 2..4 {
        aug[i] = 3.0 * normal(rng);
    }
    // whitened values around 1/σ_f² give inputs of order one
    let scale = 1.0 / grid.params().sigma_f_sq;
    for i in 4..aug.len() {
        let v: f64 = StandardNormal.sample(rng);
        aug[i] = scale * v;
    }
    aug
}

/// Analytic Jacobian against central differences of the transition mean.
pub fn check_jacobian_fd(model: &MotionModel, grid: &InducingGrid, n_states: usize, seed: u64) -> Result<OracleCheck> {
    const STEP: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_states {
        let aug = random_augmented_state(grid, &mut rng);
        let analytic = augmented_transition_jacobian(model, grid, &aug)?;
        let fd = finite_difference_jacobian(
            |x| augmented_transition_mean(model, grid, x).expect("dimension checked"),
            &aug,
            STEP,
        );
        worst = worst.max(max_relative_error(&fd, &analytic, 1e-3));
    }
    Ok(OracleCheck {
        name: "jacobian matches central finite differences",
        max_error: worst,
        tolerance: 1e-5,
    })
}

/// Small grid used by the dense checks: a 3×2 lattice at 0.8 m spacing.
pub fn toy_points() -> Vec<Point2> {
    let mut pts = Vec::new();
    for j in 0..2 {
        for i in 0..3 {
            pts.push(Point2::new(0.8 * i as f64, 0.8 * j as f64));
        }
    }
    pts
}

/// One filter pass with production code versus [`DenseModel`].
pub fn check_dense_filter(points: &[Point2], steps: usize, seed: u64) -> Result<OracleCheck> {
    let params = KernelParams::new(0.05, 0.5)?;
    let grid = InducingGrid::from_points(params, points.to_vec(), 0.8)?;
    let dt = 0.5;
    let r = 1.0;
    let drift_var = 1e-3;
    let model = cv_matrices(dt)?;
    let obs = ObservationModel::isotropic(r)?;
    let dense = DenseModel::new(&params, points, dt, r, drift_var);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = prior_belief(&grid).with_drift(drift_var);
    for i in 0..field.dim() {
        let v: f64 = StandardNormal.sample(&mut rng);
        field.mean[i] = 10.0 * v;
    }
    let mut belief = AugmentedBelief::from_field(&field);
    let x0 = Vector4::new(-0.5, -0.2, 0.9, 0.4);
    let p0 = nalgebra::Matrix4::from_diagonal(&Vector4::new(0.2, 0.2, 0.25, 0.25));
    reinitialize_vehicle(&mut belief, &x0, &p0);

    let mut mean = belief.mean.clone();
    let mut cov = belief.covariance.clone();

    let mut worst: f64 = 0.0;
    for k in 0..steps {
        // a gently curving path through the toy grid
        let t = k as f64 * dt;
        let y = Vector2::new(
            -0.5 + 0.9 * t - 0.05 * t * t + 0.3 * normal(&mut rng),
            -0.2 + 0.4 * t + 0.3 * normal(&mut rng),
        );
        if k > 0 {
            predict(&mut belief, &model, &grid, drift_var)?;
            dense.predict(&mut mean, &mut cov);
        }
        update(&mut belief, &obs, &y)?;
        dense.update(&mut mean, &mut cov, &y);
        let m_err = max_relative_error(
            &DMatrix::from_column_slice(mean.len(), 1, belief.mean.as_slice()),
            &DMatrix::from_column_slice(mean.len(), 1, mean.as_slice()),
            1.0,
        );
        let c_err = max_relative_error(&belief.covariance, &cov, 1.0);
        worst = worst.max(m_err).max(c_err);
    }
    Ok(OracleCheck {
        name: "block EKF matches dense EKF",
        max_error: worst,
        tolerance: 1e-8,
    })
}

/// Batch FIC posterior over the whitened inducing state, per output component:
/// `Q = Kuu + Kuf Λ⁻¹ Kfu`, mean `Q⁻¹ Kuf Λ⁻¹ y`, covariance `Q⁻¹`, with
/// `Λ = diag(k(z,z) - K(z,ξ) Kuu⁻¹ K(ξ,z)) + σ² I`.
pub fn batch_fic_posterior(
    params: &KernelParams,
    points: &[Point2],
    observations: &[(Point2, Vector2<f64>)],
    noise_var: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let l = points.len();
    let m = observations.len();
    let sf2 = params.sigma_f_sq;
    let ell = params.length_scale;
    let kuu = DMatrix::from_fn(l, l, |i, j| {
        se(sf2, ell, &points[i], &points[j]) + if i == j { params.jitter } else { 0.0 }
    });
    let kuu_inv = kuu.clone().try_inverse().expect("Kuu invertible");
    let kfu = DMatrix::from_fn(m, l, |i, j| se(sf2, ell, &observations[i].0, &points[j]));
    let qff_diag = (&kfu * &kuu_inv * kfu.transpose()).diagonal();
    let lambda_inv = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0 / ((sf2 - qff_diag[i]).max(0.0) + noise_var)
        } else {
            0.0
        }
    });
    let q = &kuu + kfu.transpose() * &lambda_inv * &kfu;
    let q_inv = q.try_inverse().expect("Q invertible");
    let mut mean = DVector::zeros(2 * l);
    for j in 0..2 {
        let y = DVector::from_fn(m, |i, _| observations[i].1[j]);
        let w = &q_inv * kfu.transpose() * &lambda_inv * y;
        for i in 0..l {
            mean[2 * i + j] = w[i];
        }
    }
    let mut cov = DMatrix::zeros(2 * l, 2 * l);
    for i in 0..l {
        for k in 0..l {
            cov[(2 * i, 2 * k)] = q_inv[(i, k)];
            cov[(2 * i + 1, 2 * k + 1)] = q_inv[(i, k)];
        }
    }
    (mean, cov)
}

/// Sequential conditioning versus the batch FIC posterior.
pub fn check_batch_fic(points: &[Point2], n_obs: usize, seed: u64) -> Result<OracleCheck> {
    let params = KernelParams::new(0.05, 0.5)?;
    let grid = InducingGrid::from_points(params, points.to_vec(), 1.0)?;
    let noise_var = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let obs: Vec<(Point2, Vector2<f64>)> = (0..n_obs)
        .map(|_| {
            let z = Point2::new(
                x0 - 0.5 + (x1 - x0 + 1.0) * rng.random::<f64>(),
                y0 - 0.5 + (y1 - y0 + 1.0) * rng.random::<f64>(),
            );
            let u = Vector2::new(0.3 * normal(&mut rng), 0.3 * normal(&mut rng));
            (z, u)
        })
        .collect();
    let mut belief = prior_belief(&grid);
    for (z, u) in &obs {
        belief = condition_on_input_observation(&grid, &belief, z, u, noise_var)?;
    }
    let (mean, cov) = batch_fic_posterior(&params, points, &obs, noise_var);
    let m_err = max_relative_error(
        &DMatrix::from_column_slice(mean.len(), 1, belief.mean.as_slice()),
        &DMatrix::from_column_slice(mean.len(), 1, mean.as_slice()),
        1.0,
    );
    let c_err = max_relative_error(&belief.covariance, &cov, 1.0);
    Ok(OracleCheck {
        name: "sequential FIC conditioning matches batch posterior",
        max_error: m_err.max(c_err),
        tolerance: 1e-6,
    })
}

/// The three toy-size checks (L ≤ 6).
pub fn run_toy_checks(seed: u64) -> Result<Vec<OracleCheck>> {
    let points = toy_points();
    let params = KernelParams::new(0.05, 0.5)?;
    let grid = InducingGrid::from_points(params, points.clone(), 0.8)?;
    let model = cv_matrices(0.5)?;
    Ok(vec![
        check_jacobian_fd(&model, &grid, 50, seed)?,
        check_dense_filter(&points, 20, seed)?,
        check_batch_fic(&points, 15, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_checks_pass() {
        for check in run_toy_checks(17).unwrap() {
            assert!(check.passed(), "{check:?}");
        }
    }

    #[test]
    fn dense_model_agrees_with_itself_via_fd() {
        // the dense analytic Jacobian must itself be right
        let points = toy_points();
        let params = KernelParams::new(0.05, 0.5).unwrap();
        let dense = DenseModel::new(&params, &points, 0.5, 1.0, 0.0);
        let grid = InducingGrid::from_points(params, points, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let aug = random_augmented_state(&grid, &mut rng);
        let fd = finite_difference_jacobian(|x| dense.transition(x), &aug, 1e-6);
        assert!(max_relative_error(&fd, &dense.jacobian(&aug), 1e-3) < 1e-5);
    }

    #[test]
    fn a_broken_jacobian_is_caught() {
        let points = toy_points();
        let params = KernelParams::new(0.05, 0.5).unwrap();
        let dense = DenseModel::new(&params, &points, 0.5, 1.0, 0.0);
        let grid = InducingGrid::from_points(params, points, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let aug = random_augmented_state(&grid, &mut rng);
        let mut wrong = dense.jacobian(&aug);
        // drop the state-coupling term
        let f = dense.f();
        wrong.view_mut((0, 0), (4, 4)).copy_from(&f);
        let fd = finite_difference_jacobian(|x| dense.transition(x), &aug, 1e-6);
        assert!(max_relative_error(&fd, &wrong, 1e-3) > 1e-3);
    }
}
