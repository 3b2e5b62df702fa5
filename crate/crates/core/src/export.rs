//! CSV and manifest output.
//!
//! | file              | columns                                                                      |
//! |-------------------|------------------------------------------------------------------------------|
//! | `runs.csv`        | run, vehicle, path, rmse_gpassm, rmse_cv                                     |
//! | `errors.csv`      | run, vehicle, step, err_gpassm, err_cv                                       |
//! | `trajectories.csv`| run, vehicle, path, step, true_x, true_y, meas_x, meas_y, gpassm_x, gpassm_y, cv_x, cv_y |
//! | `field.csv`       | xi_x, xi_y, mean_ax, mean_ay, var                                            |
//! | `truth_accel.csv` | path, s, x, y, ax, ay                                                        |
//!
//! `manifest.toml` records the generator version and the effective config.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpfield::FieldRow;
use crate::harness::{ExperimentResult, ExperimentSetup};
use crate::scenario::{PathLabel, ScenarioConfig};

/// Arc-length step used when tabulating the true acceleration along paths.
pub const TRUTH_SAMPLE_STEP: f64 = 0.25;

pub const RUNS_CSV: &str = "runs.csv";
pub const ERRORS_CSV: &str = "errors.csv";
pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const FIELD_CSV: &str = "field.csv";
pub const TRUTH_ACCEL_CSV: &str = "truth_accel.csv";
pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub vehicle: usize,
    pub path: PathLabel,
    pub rmse_gpassm: f64,
    pub rmse_cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub run: usize,
    pub vehicle: usize,
    pub step: usize,
    pub err_gpassm: f64,
    pub err_cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub run: usize,
    pub vehicle: usize,
    pub path: PathLabel,
    pub step: usize,
    pub true_x: f64,
    pub true_y: f64,
    pub meas_x: f64,
    pub meas_y: f64,
    pub gpassm_x: f64,
    pub gpassm_y: f64,
    pub cv_x: f64,
    pub cv_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthAccelRow {
    pub path: PathLabel,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub ax: f64,
    pub ay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub version: String,
    /// Vehicles tracked before the field was exported, when not all of them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_after_vehicle: Option<usize>,
    pub config: ScenarioConfig,
}

impl Manifest {
    pub fn new(config: &ScenarioConfig) -> Self {
        Manifest {
            generator: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            field_after_vehicle: None,
            config: config.clone(),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join(MANIFEST);
    let text = toml::to_string(manifest).map_err(|e| Error::Config(e.to_string()))?;
    let mut f = File::create(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}

/// True acceleration along both paths at [`TRUTH_SAMPLE_STEP`] spacing.
pub fn truth_accel_rows(setup: &ExperimentSetup) -> Vec<TruthAccelRow> {
    let v2 = setup.config.speed * setup.config.speed;
    let mut rows = Vec::new();
    for label in PathLabel::ALL {
        let path = setup.path(label);
        let total = path.total_length();
        let n = (total / TRUTH_SAMPLE_STEP).floor() as usize;
        for i in 0..=n {
            let s = i as f64 * TRUTH_SAMPLE_STEP;
            let sample = path.sample(s);
            let a = sample.curvature * v2;
            rows.push(TruthAccelRow {
                path: label,
                s,
                x: sample.position.x,
                y: sample.position.y,
                ax: a.x,
                ay: a.y,
            });
        }
    }
    rows
}

/// `field.csv`, `truth_accel.csv`, and the manifest.
pub fn export_field(rows: &[FieldRow], setup: &ExperimentSetup, out_dir: &Path, manifest: &Manifest) -> Result<()> {
    create_dir(out_dir)?;
    write_csv(&out_dir.join(FIELD_CSV), rows.iter())?;
    write_csv(&out_dir.join(TRUTH_ACCEL_CSV), truth_accel_rows(setup))?;
    write_manifest(out_dir, manifest)?;
    Ok(())
}

/// Every CSV plus the manifest.
pub fn export_results(result: &ExperimentResult, setup: &ExperimentSetup, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let vehicles = || result.runs.iter().flat_map(|r| r.vehicles.iter());
    write_csv(
        &out_dir.join(RUNS_CSV),
        vehicles().map(|v| RunRow {
            run: v.run,
            vehicle: v.vehicle,
            path: v.path,
            rmse_gpassm: v.rmse_gpassm,
            rmse_cv: v.rmse_cv,
        }),
    )?;
    write_csv(
        &out_dir.join(ERRORS_CSV),
        vehicles().flat_map(|v| {
            (0..v.len()).map(move |k| ErrorRow {
                run: v.run,
                vehicle: v.vehicle,
                step: k,
                err_gpassm: v.gpassm_errors[k],
                err_cv: v.cv_errors[k],
            })
        }),
    )?;
    write_csv(
        &out_dir.join(TRAJECTORIES_CSV),
        vehicles().flat_map(|v| {
            (0..v.len()).map(move |k| {
                let t = v.truth.states[k];
                let g = v.gpassm_estimates[k];
                let c = v.cv_estimates[k];
                TrajectoryRow {
                    run: v.run,
                    vehicle: v.vehicle,
                    path: v.path,
                    step: k,
                    true_x: t[0],
                    true_y: t[1],
                    meas_x: v.measurements[k].x,
                    meas_y: v.measurements[k].y,
                    gpassm_x: g[0],
                    gpassm_y: g[1],
                    cv_x: c[0],
                    cv_y: c[1],
                }
            })
        }),
    )?;
    export_field(&result.field, setup, out_dir, &Manifest::new(&result.config))
}
