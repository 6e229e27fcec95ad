//! Flow systems: state charts, metrics and exact flow evaluation.
//!
//! All built-in systems are fixed-point free and evaluated in closed form
//! (no ODE integration), so flow error never contaminates entropy
//! estimates. Evaluation is pure; systems are safe to share across worker
//! threads.

mod suspension;
mod torus;

pub use suspension::{CatSuspension, ShiftSuspension};
pub use torus::TorusLinear;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// A point in one of the supported charts.
///
/// Shift points carry a finite symbol backing; symbols outside the backing
/// read as 0, so every shift point is a genuine point of the full 2-shift
/// and the flow is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Point {
    /// Flat 2-torus, both coordinates normalized to [0,1).
    Torus { x: f64, y: f64 },
    /// Mapping torus of the full 2-shift: symbol backing, index of the
    /// coordinate-0 symbol, and a height in [0, roof).
    Shift {
        seq: Arc<Vec<u8>>,
        origin: i64,
        height: f64,
    },
    /// Mapping torus of a hyperbolic toral automorphism.
    Cat { x: f64, y: f64, height: f64 },
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow time must be finite, got {0}")]
    NonFiniteTime(f64),
    #[error("point does not belong to the chart of system `{system}`")]
    ChartMismatch { system: String },
    #[error("trajectory step must satisfy 0 < dt <= t, got dt={dt}, t={t}")]
    InvalidStep { dt: f64, t: f64 },
    #[error("samples must be nonempty")]
    EmptySamples,
    #[error(
        "fixed-point suspected: sample {index} moves at most {displacement:.3e} over unit time"
    )]
    FixedPointSuspected { index: usize, displacement: f64 },
}

/// A flow on a compact metric space.
///
/// `flow` and `metric` are total for finite inputs and panic on a chart
/// mismatch; use [`evaluate_flow`] at trust boundaries.
pub trait Flow: Send + Sync {
    fn name(&self) -> &str;

    /// φ_t(x), normalized into the fundamental domain.
    fn flow(&self, x: &Point, t: f64) -> Point;

    /// The metric. Exactly symmetric by construction.
    fn metric(&self, a: &Point, b: &Point) -> f64;

    /// Threshold query d(a,b) ≤ tol; implementations may exit early.
    fn metric_leq(&self, a: &Point, b: &Point, tol: f64) -> bool {
        self.metric(a, b) <= tol
    }

    /// Upper bound on the diameter of the space.
    fn diameter_bound(&self) -> f64;

    /// Empirically certified lower bound on sup_{0<τ≤1} d(φ_τ x, x).
    fn min_displacement(&self) -> f64;

    /// True when the point belongs to this system's chart.
    fn owns(&self, x: &Point) -> bool;

    fn random_point(&self, rng: &mut dyn RngCore) -> Point;

    /// A point within roughly `radius` of `x` (used to refine candidate
    /// pools around a center).
    fn random_point_near(&self, x: &Point, radius: f64, rng: &mut dyn RngCore) -> Point;
}

/// A discretized orbit segment.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub base: Point,
    pub times: Vec<f64>,
    pub points: Vec<Point>,
}

/// φ_t(x) with input validation.
pub fn evaluate_flow(system: &dyn Flow, x: &Point, t: f64) -> Result<Point, FlowError> {
    if !t.is_finite() {
        return Err(FlowError::NonFiniteTime(t));
    }
    if !system.owns(x) {
        return Err(FlowError::ChartMismatch {
            system: system.name().to_string(),
        });
    }
    Ok(system.flow(x, t))
}

/// Grid over [0, t] with step `dt`; the last step is shortened when dt does
/// not divide t.
pub fn time_grid(t: f64, dt: f64) -> Vec<f64> {
    let n = (t / dt + 1e-12).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|j| j as f64 * dt).collect();
    if t - n as f64 * dt > 1e-12 {
        times.push(t);
    }
    times
}

/// Samples the orbit of `x` over [0, t].
pub fn sample_trajectory(
    system: &dyn Flow,
    x: &Point,
    t: f64,
    dt: f64,
) -> Result<Trajectory, FlowError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(FlowError::NonFiniteTime(t));
    }
    if !(dt > 0.0 && dt <= t) {
        return Err(FlowError::InvalidStep { dt, t });
    }
    if !system.owns(x) {
        return Err(FlowError::ChartMismatch {
            system: system.name().to_string(),
        });
    }
    let times = time_grid(t, dt);
    let points = times.iter().map(|&s| system.flow(x, s)).collect();
    Ok(Trajectory {
        base: x.clone(),
        times,
        points,
    })
}

/// Displacement of `x` over unit time: max over τ ∈ {0.1, …, 1.0} of
/// d(φ_τ x, x).
pub fn unit_time_displacement(system: &dyn Flow, x: &Point) -> f64 {
    (1..=10)
        .map(|k| {
            let tau = k as f64 * 0.1;
            system.metric(&system.flow(x, tau), x)
        })
        .fold(0.0, f64::max)
}

/// Checks the fixed-point-free hypothesis over `samples`, returning the
/// smallest observed unit-time displacement.
pub fn certify_fixed_point_free(
    system: &dyn Flow,
    samples: &[Point],
) -> Result<f64, FlowError> {
    if samples.is_empty() {
        return Err(FlowError::EmptySamples);
    }
    let mut worst = f64::INFINITY;
    let mut worst_index = 0;
    for (i, x) in samples.iter().enumerate() {
        let disp = unit_time_displacement(system, x);
        if disp < worst {
            worst = disp;
            worst_index = i;
        }
    }
    if worst < 1e-6 {
        return Err(FlowError::FixedPointSuspected {
            index: worst_index,
            displacement: worst,
        });
    }
    Ok(worst)
}

/// Named system plus parameter block, as it appears in config files.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum SystemSpec {
    TorusLinear {
        direction: [f64; 2],
    },
    ShiftSuspension {
        #[serde(default = "default_window")]
        window_radius: usize,
        #[serde(default = "default_roof")]
        roof: f64,
    },
    CatSuspension {
        #[serde(default = "default_roof")]
        roof: f64,
    },
}

fn default_window() -> usize {
    16
}

fn default_roof() -> f64 {
    1.0
}

/// Instantiates a built-in system from its spec.
pub fn build_system(spec: &SystemSpec) -> Result<Box<dyn Flow>, String> {
    match spec {
        SystemSpec::TorusLinear { direction } => {
            let [vx, vy] = *direction;
            if vx == 0.0 && vy == 0.0 {
                return Err("system.direction: must be nonzero".into());
            }
            Ok(Box::new(TorusLinear::new(vx, vy)))
        }
        SystemSpec::ShiftSuspension {
            window_radius,
            roof,
        } => {
            if !(*roof > 0.0) {
                return Err("system.roof: must be positive".into());
            }
            Ok(Box::new(ShiftSuspension::new(*window_radius, *roof)))
        }
        SystemSpec::CatSuspension { roof } => {
            if !(*roof > 0.0) {
                return Err("system.roof: must be positive".into());
            }
            Ok(Box::new(CatSuspension::new(*roof)))
        }
    }
}

/// Circle distance between two reals taken mod 1.
pub(crate) fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

pub(crate) fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w == 1.0 {
        0.0
    } else {
        w
    }
}

#[cfg(test)]
mod tests;
