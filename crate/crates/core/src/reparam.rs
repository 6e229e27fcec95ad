//! Membership in reparametrization balls.
//!
//! A point y lies in B(x,t,ε) when some monotone time change α with
//! α(0) = 0 keeps d(φ_{α(s)} x, φ_s y) within ε for all s in [0,t]. The
//! decision is made on a free-space grid: rows are candidate α values τ,
//! columns are trajectory times s, and a cell is admissible when the two
//! orbit points are within ε. Membership is reachability by a monotone
//! path that starts at τ = 0; the per-column set of reachable rows is
//! upward closed, so tracking its minimum gives a linear-time scan.
//!
//! Returned certificates hug the identity: after the forward pass fixes the
//! per-column minima, a backward pass picks, inside each column's feasible
//! range, the admissible τ closest to s.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::{time_grid, Flow, Point};

/// Slack applied to closed-ball membership; open and closed balls are
/// otherwise indistinguishable at grid resolution.
pub const CLOSED_SLACK: f64 = 1e-12;

/// A (center, duration, radius) description of a reparametrization ball.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: Point,
    pub t: f64,
    pub eps: f64,
    pub closed: bool,
}

impl BallSpec {
    pub fn open(center: Point, t: f64, eps: f64) -> Self {
        BallSpec {
            center,
            t,
            eps,
            closed: false,
        }
    }

    pub fn closed(center: Point, t: f64, eps: f64) -> Self {
        BallSpec {
            center,
            t,
            eps,
            closed: true,
        }
    }

    pub fn validate(&self) -> Result<(), ReparamError> {
        if !(self.t > 0.0 && self.t.is_finite()) || !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(ReparamError::InvalidBall {
                t: self.t,
                eps: self.eps,
            });
        }
        Ok(())
    }

    pub(crate) fn tol(&self) -> f64 {
        if self.closed {
            self.eps + CLOSED_SLACK
        } else {
            self.eps
        }
    }
}

/// A discretized reparametrization certificate: τ_j ≈ α(s_j).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReparamPath {
    pub grid_times: Vec<f64>,
    pub tau: Vec<f64>,
}

impl ReparamPath {
    /// Re-checks monotonicity, τ_0 = 0, and the pairwise distances against
    /// the defining ball.
    pub fn revalidate(&self, flow: &dyn Flow, ball: &BallSpec, y: &Point) -> bool {
        if self.tau.len() != self.grid_times.len() || self.tau.is_empty() {
            return false;
        }
        if self.tau[0] != 0.0 {
            return false;
        }
        if self.tau.windows(2).any(|w| w[1] < w[0]) {
            return false;
        }
        let limit = ball.eps + CLOSED_SLACK;
        self.grid_times.iter().zip(&self.tau).all(|(&s, &tau)| {
            flow.metric(&flow.flow(&ball.center, tau), &flow.flow(y, s)) <= limit
        })
    }
}

/// Free-space discretization parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReparamParams {
    /// α may overshoot t by this fraction: τ ranges over [0, t·(1+margin)].
    pub eta_margin: f64,
    /// Grid cell budget; larger (t, dt) combinations are rejected.
    pub max_cells: u64,
}

impl Default for ReparamParams {
    fn default() -> Self {
        ReparamParams {
            eta_margin: 0.5,
            max_cells: 400_000_000,
        }
    }
}

/// Step used when none is configured: alignment error stays well below ε.
pub fn default_dt(eps: f64) -> f64 {
    0.1_f64.min(eps / 4.0)
}

#[derive(Debug, Error)]
pub enum ReparamError {
    #[error("ball must have positive duration and radius, got t={t}, eps={eps}")]
    InvalidBall { t: f64, eps: f64 },
    #[error("grid step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("free-space grid of {cells} cells exceeds the budget of {budget}")]
    GridBudget { cells: u64, budget: u64 },
    #[error(
        "distortion calibration failed for eta={eta}: radius {theta:.3e} still \
         admits a path violating the distortion bound"
    )]
    CalibrationFailed { eta: f64, theta: f64 },
}

/// The admissibility matrix of a (ball, y) pair.
#[derive(Clone, Debug)]
pub struct FreeSpaceGrid {
    pub tau_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    /// Indexed `admissible[tau_index][s_index]`.
    pub admissible: Vec<Vec<bool>>,
}

fn tau_grid_for(t: f64, dt: f64, params: &ReparamParams) -> Vec<f64> {
    let tau_max = t * (1.0 + params.eta_margin);
    let m = (tau_max / dt + 1e-12).floor() as usize;
    (0..=m).map(|i| i as f64 * dt).collect()
}

fn grid_budget_check(
    t: f64,
    dt: f64,
    params: &ReparamParams,
) -> Result<(Vec<f64>, Vec<f64>), ReparamError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(ReparamError::InvalidStep(dt));
    }
    let s_grid = time_grid(t, dt);
    let tau_grid = tau_grid_for(t, dt, params);
    let cells = (s_grid.len() as u64) * (tau_grid.len() as u64);
    if cells > params.max_cells {
        return Err(ReparamError::GridBudget {
            cells,
            budget: params.max_cells,
        });
    }
    Ok((tau_grid, s_grid))
}

/// Materializes the free-space grid for `y` against `ball`.
pub fn build_free_space(
    flow: &dyn Flow,
    ball: &BallSpec,
    y: &Point,
    dt: f64,
    params: &ReparamParams,
) -> Result<FreeSpaceGrid, ReparamError> {
    ball.validate()?;
    let (tau_grid, s_grid) = grid_budget_check(ball.t, dt, params)?;
    let tol = ball.tol();
    let center_orbit: Vec<Point> = tau_grid
        .iter()
        .map(|&tau| flow.flow(&ball.center, tau))
        .collect();
    let y_orbit: Vec<Point> = s_grid.iter().map(|&s| flow.flow(y, s)).collect();
    let admissible = center_orbit
        .iter()
        .map(|cp| y_orbit.iter().map(|yp| flow.metric(cp, yp) <= tol).collect())
        .collect();
    Ok(FreeSpaceGrid {
        tau_grid,
        s_grid,
        admissible,
    })
}

/// Reusable membership decider for one ball.
///
/// The center orbit is evaluated once; each query evaluates the probe's
/// orbit lazily column by column, so a rejection at time-0 costs a single
/// metric evaluation.
pub struct BallOracle<'a> {
    flow: &'a dyn Flow,
    ball: BallSpec,
    tol: f64,
    tau_grid: Vec<f64>,
    s_grid: Vec<f64>,
    center_orbit: Vec<Point>,
    y_orbit: Vec<Point>,
    mins: Vec<usize>,
}

impl<'a> BallOracle<'a> {
    pub fn new(
        flow: &'a dyn Flow,
        ball: &BallSpec,
        dt: f64,
        params: &ReparamParams,
    ) -> Result<Self, ReparamError> {
        ball.validate()?;
        let (tau_grid, s_grid) = grid_budget_check(ball.t, dt, params)?;
        let center_orbit = tau_grid
            .iter()
            .map(|&tau| flow.flow(&ball.center, tau))
            .collect();
        Ok(BallOracle {
            flow,
            ball: ball.clone(),
            tol: ball.tol(),
            tau_grid,
            s_grid,
            center_orbit,
            y_orbit: Vec::new(),
            mins: Vec::new(),
        })
    }

    pub fn ball(&self) -> &BallSpec {
        &self.ball
    }

    /// Necessary condition: α(0) = 0 forces d(x, y) ≤ ε.
    pub fn quick_reject(&self, y: &Point) -> bool {
        self.flow.metric(&self.center_orbit[0], y) > self.tol
    }

    fn admissible(&self, i: usize, j: usize) -> bool {
        self.flow.metric(&self.center_orbit[i], &self.y_orbit[j]) <= self.tol
    }

    /// Forward reachability scan; fills `mins` on success.
    fn forward(&mut self, y: &Point) -> bool {
        let n = self.s_grid.len();
        let m = self.tau_grid.len();
        self.y_orbit.clear();
        self.y_orbit.push(y.clone());
        self.mins.clear();
        if !self.admissible(0, 0) {
            return false;
        }
        self.mins.push(0);
        let mut low = 0usize;
        for j in 1..n {
            self.y_orbit.push(self.flow.flow(y, self.s_grid[j]));
            let mut found = None;
            for i in low..m {
                if self.admissible(i, j) {
                    found = Some(i);
                    break;
                }
            }
            match found {
                Some(i) => {
                    low = i;
                    self.mins.push(i);
                }
                None => return false,
            }
        }
        true
    }

    pub fn contains(&mut self, y: &Point) -> bool {
        if self.quick_reject(y) {
            return false;
        }
        self.forward(y)
    }

    /// Membership plus an identity-hugging certificate.
    pub fn contains_with_path(&mut self, y: &Point) -> Option<ReparamPath> {
        if self.quick_reject(y) || !self.forward(y) {
            return None;
        }
        let n = self.s_grid.len();
        let m = self.tau_grid.len();
        let dt = if self.tau_grid.len() > 1 {
            self.tau_grid[1] - self.tau_grid[0]
        } else {
            1.0
        };
        let mut tau_idx = vec![0usize; n];
        let mut upper = m - 1;
        for j in (0..n).rev() {
            let lo = self.mins[j];
            let hi = upper;
            // Probe outward from the row nearest s_j, staying in [lo, hi].
            let target = ((self.s_grid[j] / dt).round() as usize).clamp(lo, hi);
            let mut chosen = lo;
            'probe: for off in 0..=(hi - lo) {
                for cand in [target.checked_sub(off), Some(target + off)] {
                    if let Some(i) = cand {
                        if i >= lo && i <= hi && self.admissible(i, j) {
                            chosen = i;
                            break 'probe;
                        }
                    }
                }
            }
            tau_idx[j] = chosen;
            upper = chosen;
        }
        tau_idx[0] = 0;
        Some(ReparamPath {
            grid_times: self.s_grid.clone(),
            tau: tau_idx.iter().map(|&i| self.tau_grid[i]).collect(),
        })
    }
}

/// Decides y ∈ B(x,t,ε) and returns a certifying path on success.
pub fn ball_contains(
    flow: &dyn Flow,
    ball: &BallSpec,
    y: &Point,
    dt: f64,
    params: &ReparamParams,
) -> Result<Option<ReparamPath>, ReparamError> {
    let mut oracle = BallOracle::new(flow, ball, dt, params)?;
    Ok(oracle.contains_with_path(y))
}

/// True when the path stays within the (η, η|s|) distortion envelope:
/// |τ_j − s_j| < η·s_j for s_j > 1 and |τ_j − s_j| < η otherwise.
pub fn check_distortion(path: &ReparamPath, eta: f64) -> bool {
    path.grid_times.iter().zip(&path.tau).all(|(&s, &tau)| {
        let bound = if s > 1.0 { eta * s } else { eta };
        (tau - s).abs() < bound
    })
}

/// Finds the largest radius θ on the halving schedule {diam/2, diam/4, …}
/// such that every alignment path found between `trials` random pairs at
/// radius θ satisfies the η distortion envelope. Deterministic given seed.
pub fn calibrate_theta(
    flow: &dyn Flow,
    eta: f64,
    trials: u32,
    seed: u64,
    params: &ReparamParams,
) -> Result<f64, ReparamError> {
    assert!(eta > 0.0 && eta < 1.0, "eta must lie in (0,1)");
    let mut theta = flow.diameter_bound() / 2.0;
    let floor = theta * 0.5_f64.powi(30);
    while theta > floor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ok = true;
        for _ in 0..trials {
            let x = flow.random_point(&mut rng);
            let y = flow.random_point(&mut rng);
            let t = rng.gen_range(1.0..=20.0);
            let ball = BallSpec::open(x, t, theta);
            let dt = default_dt(theta);
            let mut oracle = BallOracle::new(flow, &ball, dt, params)?;
            if let Some(path) = oracle.contains_with_path(&y) {
                if !check_distortion(&path, eta) {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(theta);
        }
        theta /= 2.0;
    }
    Err(ReparamError::CalibrationFailed { eta, theta })
}
