//! Three-way intersection: geometry, ground truth, and noisy measurements.
//!
//! Vehicles enter along the middle road heading `+y` and reach the split point
//! at the origin, where they turn left or right onto the crossing road through
//! a circular arc. The crossing road runs along `y = turn_radius`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::Path;

use nalgebra::{Vector2, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpfield::{Rect, Region};
use crate::kernel::{KernelParams, Point2, DEFAULT_RELATIVE_JITTER};

/// Every experiment setting. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Hz.
    pub sampling_rate: f64,
    /// Variance of the simulated position noise, m².
    pub meas_noise_var: f64,
    pub sigma_f_sq: f64,
    pub length_scale: f64,
    /// Measurement noise variance assumed by both filters, m².
    pub filter_r: f64,
    pub grid_spacing: f64,
    pub n_vehicles: usize,
    pub n_runs: usize,
    /// m/s.
    pub speed: f64,
    pub approach_length: f64,
    pub turn_radius: f64,
    pub exit_length: f64,
    /// Nominal road half-width; vehicles follow the centreline.
    pub road_half_width: f64,
    /// Half-width of the road rectangles that bound the inducing grid. The
    /// default of 2.5 m gives 320 grid points at 1 m spacing.
    pub mask_half_width: f64,
    pub rng_seed: u64,
    /// Random-walk variance of the whitened field per step.
    pub drift_var: f64,
    /// Gram jitter relative to `sigma_f_sq`.
    pub relative_jitter: f64,
    /// Initial kinematic covariance, position part (m²).
    pub init_pos_var: f64,
    /// Initial kinematic covariance, velocity part ((m/s)²).
    pub init_vel_var: f64,
    /// Start each vehicle at a uniformly random fraction of one sampling step
    /// along its path, so successive vehicles sample the road at different points.
    pub random_entry_phase: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            sampling_rate: 2.0,
            meas_noise_var: 0.2,
            sigma_f_sq: 0.05,
            length_scale: 0.5,
            filter_r: 1.0,
            grid_spacing: 1.0,
            n_vehicles: 30,
            n_runs: 100,
            speed: 5.0,
            approach_length: 20.0,
            turn_radius: 5.0,
            exit_length: 15.0,
            road_half_width: 3.5,
            mask_half_width: 2.5,
            rng_seed: 2020,
            drift_var: 0.0,
            relative_jitter: DEFAULT_RELATIVE_JITTER,
            init_pos_var: 0.2,
            init_vel_var: 0.25,
            random_entry_phase: true,
        }
    }
}

impl ScenarioConfig {
    pub fn sampling_interval(&self) -> f64 {
        1.0 / self.sampling_rate
    }

    pub fn kernel_params(&self) -> Result<KernelParams> {
        KernelParams::with_jitter(
            self.sigma_f_sq,
            self.length_scale,
            self.relative_jitter * self.sigma_f_sq,
        )
    }

    /// Check every field; the message names the offending key.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        }
        fn non_negative(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be non-negative, got {v}")))
            }
        }
        positive("sampling_rate", self.sampling_rate)?;
        non_negative("meas_noise_var", self.meas_noise_var)?;
        positive("sigma_f_sq", self.sigma_f_sq)?;
        positive("length_scale", self.length_scale)?;
        positive("filter_r", self.filter_r)?;
        positive("grid_spacing", self.grid_spacing)?;
        positive("speed", self.speed)?;
        positive("approach_length", self.approach_length)?;
        positive("turn_radius", self.turn_radius)?;
        non_negative("exit_length", self.exit_length)?;
        positive("road_half_width", self.road_half_width)?;
        positive("mask_half_width", self.mask_half_width)?;
        non_negative("drift_var", self.drift_var)?;
        non_negative("relative_jitter", self.relative_jitter)?;
        non_negative("init_pos_var", self.init_pos_var)?;
        non_negative("init_vel_var", self.init_vel_var)?;
        if self.n_vehicles == 0 {
            return Err(Error::Config("n_vehicles must be at least 1".into()));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathLabel {
    Left,
    Right,
}

impl PathLabel {
    pub const ALL: [PathLabel; 2] = [PathLabel::Left, PathLabel::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            PathLabel::Left => "left",
            PathLabel::Right => "right",
        }
    }
}

impl fmt::Display for PathLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Straight,
    Turn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Line {
        start: Point2,
        direction: Vector2<f64>,
        length: f64,
    },
    /// Circular arc; positive `sweep` is counter-clockwise.
    Arc {
        center: Point2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Line { length, .. } => length,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn kind(&self) -> SegmentKind {
        match self {
            Segment::Line { .. } => SegmentKind::Straight,
            Segment::Arc { .. } => SegmentKind::Turn,
        }
    }

    /// Position, unit tangent, and curvature vector (acceleration per v²) at
    /// local arc length `s`.
    fn eval(&self, s: f64) -> (Point2, Vector2<f64>, Vector2<f64>) {
        match *self {
            Segment::Line { start, direction, .. } => (start + direction * s, direction, Vector2::zeros()),
            Segment::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let dir = sweep.signum();
                let theta = start_angle + dir * s / radius;
                let radial = Vector2::new(theta.cos(), theta.sin());
                let tangent = Vector2::new(-theta.sin(), theta.cos()) * dir;
                (center + radial * radius, tangent, -radial / radius)
            }
        }
    }
}

/// Straight approach, quarter-circle turn, straight exit.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub label: PathLabel,
    pub segments: Vec<Segment>,
}

/// A point on a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub position: Point2,
    pub tangent: Vector2<f64>,
    /// Acceleration divided by speed squared.
    pub curvature: Vector2<f64>,
    pub kind: SegmentKind,
}

impl PathSpec {
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Sample at arc length `s`, clamped to the path.
    pub fn sample(&self, s: f64) -> PathSample {
        let mut rest = s.max(0.0);
        let last = self.segments.len() - 1;
        for (i, seg) in self.segments.iter().enumerate() {
            let len = seg.length();
            if rest < len || i == last {
                let (position, tangent, curvature) = seg.eval(rest.min(len));
                return PathSample {
                    position,
                    tangent,
                    curvature,
                    kind: seg.kind(),
                };
            }
            rest -= len;
        }
        unreachable!("path has at least one segment")
    }

    pub fn arc_center(&self) -> Option<(Point2, f64)> {
        self.segments.iter().find_map(|s| match *s {
            Segment::Arc { center, radius, .. } => Some((center, radius)),
            _ => None,
        })
    }

    /// Arc length and distance of the closest point on the path to `p`.
    pub fn closest(&self, p: &Point2) -> (f64, f64) {
        let mut offset = 0.0;
        let mut best = (0.0, f64::INFINITY);
        for seg in &self.segments {
            let len = seg.length();
            let local = match *seg {
                Segment::Line { start, direction, .. } => (p - start).dot(&direction).clamp(0.0, len),
                Segment::Arc {
                    center,
                    radius,
                    start_angle,
                    sweep,
                } => {
                    let rel = p - center;
                    let angle = rel.y.atan2(rel.x);
                    let mut delta = (angle - start_angle) * sweep.signum();
                    delta = delta.rem_euclid(2.0 * std::f64::consts::PI);
                    // Angles beyond the sweep snap to whichever end is nearer.
                    let span = sweep.abs();
                    let t = if delta <= span {
                        delta
                    } else if delta - span < 2.0 * std::f64::consts::PI - delta {
                        span
                    } else {
                        0.0
                    };
                    t * radius
                }
            };
            let d = (seg.eval(local).0 - p).norm();
            if d < best.1 {
                best = (offset + local, d);
            }
            offset += len;
        }
        best
    }

    /// Signed distance from the turn's centreline, positive on the outside.
    pub fn turn_offset(&self, p: &Point2) -> Option<f64> {
        self.arc_center().map(|(center, radius)| (p - center).norm() - radius)
    }
}

/// Left and right paths sharing the approach.
pub fn build_paths(config: &ScenarioConfig) -> Result<(PathSpec, PathSpec)> {
    let radius = config.turn_radius;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("turn_radius must be positive, got {radius}")));
    }
    if !(config.approach_length > 0.0 && config.exit_length >= 0.0) {
        return Err(Error::invalid("approach and exit lengths must be positive"));
    }
    let approach = Segment::Line {
        start: Point2::new(0.0, -config.approach_length),
        direction: Vector2::new(0.0, 1.0),
        length: config.approach_length,
    };
    let left = PathSpec {
        label: PathLabel::Left,
        segments: vec![
            approach,
            Segment::Arc {
                center: Point2::new(-radius, 0.0),
                radius,
                start_angle: 0.0,
                sweep: FRAC_PI_2,
            },
            Segment::Line {
                start: Point2::new(-radius, radius),
                direction: Vector2::new(-1.0, 0.0),
                length: config.exit_length,
            },
        ],
    };
    let right = PathSpec {
        label: PathLabel::Right,
        segments: vec![
            approach,
            Segment::Arc {
                center: Point2::new(radius, 0.0),
                radius,
                start_angle: std::f64::consts::PI,
                sweep: -FRAC_PI_2,
            },
            Segment::Line {
                start: Point2::new(radius, radius),
                direction: Vector2::new(1.0, 0.0),
                length: config.exit_length,
            },
        ],
    };
    Ok((left, right))
}

/// Where the two paths separate.
pub fn split_point() -> Point2 {
    Point2::zeros()
}

/// Middle road plus the crossing road, as rectangles.
pub fn road_region(config: &ScenarioConfig) -> Region {
    let hw = config.mask_half_width;
    let r = config.turn_radius;
    let reach = r + config.exit_length;
    Region::new(vec![
        Rect::new(-hw, hw, -config.approach_length, r + hw),
        Rect::new(-reach, reach, r - hw, r + hw),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub label: PathLabel,
    /// `(p_x, p_y, v_x, v_y)` per step.
    pub states: Vec<Vector4<f64>>,
    pub accelerations: Vec<Vector2<f64>>,
    pub kinds: Vec<SegmentKind>,
    pub arc_lengths: Vec<f64>,
}

impl TruthTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn position(&self, k: usize) -> Point2 {
        Point2::new(self.states[k][0], self.states[k][1])
    }
}

/// Sample a path at arc-length steps `v T`, starting from a fraction `phase`
/// of one step.
pub fn truth_along(path: &PathSpec, config: &ScenarioConfig, phase: f64) -> TruthTrajectory {
    let v = config.speed;
    let step = v * config.sampling_interval();
    let total = path.total_length();
    let mut out = TruthTrajectory {
        label: path.label,
        states: Vec::new(),
        accelerations: Vec::new(),
        kinds: Vec::new(),
        arc_lengths: Vec::new(),
    };
    let mut k = 0usize;
    loop {
        let s = (phase + k as f64) * step;
        if s > total + 1e-9 {
            break;
        }
        let sample = path.sample(s);
        let vel = sample.tangent * v;
        out.states
            .push(Vector4::new(sample.position.x, sample.position.y, vel.x, vel.y));
        out.accelerations.push(sample.curvature * v * v);
        out.kinds.push(sample.kind);
        out.arc_lengths.push(s);
        k += 1;
    }
    out
}

/// Ground truth for one vehicle; draws the entry phase from `rng` when enabled.
pub fn generate_truth(path: &PathSpec, config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> TruthTrajectory {
    let phase = if config.random_entry_phase {
        rng.random::<f64>()
    } else {
        0.0
    };
    truth_along(path, config, phase)
}

/// `y_k = p_k + e_k`, `e_k ~ N(0, σ_e² I₂)`.
pub fn simulate_measurements(truth: &TruthTrajectory, meas_noise_var: f64, rng: &mut ChaCha8Rng) -> Vec<Vector2<f64>> {
    let sd = meas_noise_var.max(0.0).sqrt();
    truth
        .states
        .iter()
        .map(|x| {
            let ex: f64 = StandardNormal.sample(rng);
            let ey: f64 = StandardNormal.sample(rng);
            Vector2::new(x[0] + sd * ex, x[1] + sd * ey)
        })
        .collect()
}

/// Left or right with equal probability.
pub fn choose_path(rng: &mut ChaCha8Rng) -> PathLabel {
    if rng.random::<bool>() {
        PathLabel::Left
    } else {
        PathLabel::Right
    }
}

/// Generator for one vehicle of one run. Streams are fixed by `(run, vehicle)`
/// so runs can execute in any order.
pub fn vehicle_rng(seed: u64, run: usize, vehicle: usize) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((run as u64) << 32) | vehicle as u64);
    rng
}
