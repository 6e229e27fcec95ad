//! Covers by reparametrization balls and Bowen-entropy estimation.
//!
//! Covers are built exclusively through maximal packings: a maximal
//! disjoint family of closed ε-balls with centers in the target set turns
//! into a cover by (2ε+δ)-balls around the same centers. The 5r selection
//! extracts a disjoint subfamily whose (5ε, (1−η)²t)-inflations cover the
//! union of the input family; both constructions are verified on probes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::{Flow, Point};
use crate::packing::{
    balls_disjoint, fit_log_slope, greedy_packing, t_grid, EntropyEstimate, MethodTag,
    PackingError, PackingFamily, PackingParams, ProbeSet,
};
use crate::reparam::{calibrate_theta, BallOracle, BallSpec, ReparamError, ReparamParams};

/// A family of open reparametrization balls covering a target probe set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverFamily {
    pub balls: Vec<BallSpec>,
    pub target_probe_id: String,
    pub coverage_verified: bool,
}

impl CoverFamily {
    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveringParams {
    /// Distortion level η used by the 5r selection.
    pub eta: f64,
    /// Cover inflation slack δ in 2ε+δ.
    pub delta: f64,
    /// Seeded runs the cover-value estimate minimizes over.
    pub m_runs: u32,
    /// Trials and seed for the internal distortion calibration.
    pub theta_trials: u32,
    pub theta_seed: u64,
    pub packing: PackingParams,
}

impl Default for CoveringParams {
    fn default() -> Self {
        CoveringParams {
            eta: 0.1,
            delta: 0.05,
            m_runs: 3,
            theta_trials: 200,
            theta_seed: 0x5eed_cafe,
            packing: PackingParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CoveringError {
    #[error("eta must lie in (0,1), got {0}")]
    InvalidEta(f64),
    #[error("ball duration {t} must exceed 1/(1-eta)^2 = {required}")]
    DurationTooShort { t: f64, required: f64 },
    #[error("ball radius {eps} must be below theta/2 = {limit} for eta={eta}")]
    RadiusTooLarge { eps: f64, limit: f64, eta: f64 },
    #[error("inflated family fails to cover probe {witness} of the input union")]
    CoverageFailure { witness: usize },
    #[error("delta must be positive, got {0}")]
    InvalidDelta(f64),
    #[error(transparent)]
    Packing(#[from] PackingError),
    #[error(transparent)]
    Reparam(#[from] ReparamError),
}

/// Marks which probes lie in at least one ball of `balls`.
fn membership_mask(
    flow: &dyn Flow,
    balls: &[BallSpec],
    probes: &[Point],
    dt: f64,
    rp: &ReparamParams,
) -> Result<Vec<bool>, ReparamError> {
    let mut covered = vec![false; probes.len()];
    for ball in balls {
        let mut oracle = BallOracle::new(flow, ball, dt, rp)?;
        for (pi, p) in probes.iter().enumerate() {
            if covered[pi] || oracle.quick_reject(p) {
                continue;
            }
            if oracle.contains(p) {
                covered[pi] = true;
            }
        }
    }
    Ok(covered)
}

/// Greedy 5r selection: scanning in ascending duration (largest balls
/// first), keeps a pairwise-disjoint subfamily and inflates each kept
/// B(x,t,ε) to B(x,(1−η)²t,5ε). Verifies on probes that the inflated
/// family covers the union of the input family.
#[allow(clippy::too_many_arguments)]
pub fn five_r_select(
    flow: &dyn Flow,
    family: &[BallSpec],
    eta: f64,
    probes: &ProbeSet,
    dt: f64,
    theta: Option<f64>,
    params: &CoveringParams,
) -> Result<(PackingFamily, CoverFamily), CoveringError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(CoveringError::InvalidEta(eta));
    }
    let shrink = (1.0 - eta) * (1.0 - eta);
    let required = 1.0 / shrink;
    for ball in family {
        if !(ball.t > required) {
            return Err(CoveringError::DurationTooShort {
                t: ball.t,
                required,
            });
        }
    }
    let theta = match theta {
        Some(t) => t,
        None => calibrate_theta(
            flow,
            eta,
            params.theta_trials,
            params.theta_seed,
            &params.packing.reparam,
        )?,
    };
    for ball in family {
        if !(ball.eps < theta / 2.0) {
            return Err(CoveringError::RadiusTooLarge {
                eps: ball.eps,
                limit: theta / 2.0,
                eta,
            });
        }
    }

    let mut order: Vec<usize> = (0..family.len()).collect();
    order.sort_by(|&a, &b| family[a].t.total_cmp(&family[b].t));
    let rp = &params.packing.reparam;
    let mut kept: Vec<BallSpec> = Vec::new();
    let mut min_t = f64::INFINITY;
    for &i in &order {
        let ball = BallSpec::closed(family[i].center.clone(), family[i].t, family[i].eps);
        let mut disjoint = true;
        for k in &kept {
            if !balls_disjoint(flow, &ball, k, &probes.points, dt, rp)? {
                disjoint = false;
                break;
            }
        }
        if disjoint {
            min_t = min_t.min(ball.t);
            kept.push(ball);
        }
    }

    let inflated: Vec<BallSpec> = kept
        .iter()
        .map(|b| BallSpec::open(b.center.clone(), shrink * b.t, 5.0 * b.eps))
        .collect();

    let input_mask = membership_mask(flow, family, &probes.points, dt, rp)?;
    let inflated_mask = membership_mask(flow, &inflated, &probes.points, dt, rp)?;
    for (pi, (inp, inf)) in input_mask.iter().zip(&inflated_mask).enumerate() {
        if *inp && !*inf {
            return Err(CoveringError::CoverageFailure { witness: pi });
        }
    }

    Ok((
        PackingFamily {
            balls: kept,
            probe_set_id: probes.id.clone(),
            min_t: if min_t.is_finite() { min_t } else { 0.0 },
        },
        CoverFamily {
            balls: inflated,
            target_probe_id: probes.id.clone(),
            coverage_verified: true,
        },
    ))
}

/// Builds a maximal greedy packing of closed ε-balls with centers in the
/// probe set, then reuses the centers as open (2ε+δ)-balls. Coverage of
/// the probe set is verified; a failure signals a non-maximal packing and
/// the caller retries with a fresh seed.
#[allow(clippy::too_many_arguments)]
pub fn cover_from_packing(
    flow: &dyn Flow,
    z_probes: &ProbeSet,
    t: f64,
    eps: f64,
    delta: f64,
    seed: u64,
    dt: f64,
    params: &CoveringParams,
) -> Result<CoverFamily, CoveringError> {
    if !(delta > 0.0) {
        return Err(CoveringError::InvalidDelta(delta));
    }
    let rp = &params.packing.reparam;
    let packing = greedy_packing(flow, &z_probes.points, t, eps, z_probes, seed, dt, rp)?;
    let cover_balls: Vec<BallSpec> = packing
        .balls
        .iter()
        .map(|b| BallSpec::open(b.center.clone(), t, 2.0 * eps + delta))
        .collect();
    let covered = membership_mask(flow, &cover_balls, &z_probes.points, dt, rp)?;
    if let Some(witness) = covered.iter().position(|c| !c) {
        return Err(CoveringError::CoverageFailure { witness });
    }
    Ok(CoverFamily {
        balls: cover_balls,
        target_probe_id: z_probes.id.clone(),
        coverage_verified: true,
    })
}

/// Greedy upper bound for the Bowen cover value M^s at duration `n`:
/// smallest Σ exp(−s·t_i) over seeded cover constructions.
#[allow(clippy::too_many_arguments)]
pub fn estimate_m(
    flow: &dyn Flow,
    z_probes: &ProbeSet,
    s: f64,
    eps: f64,
    n: f64,
    seed: u64,
    dt: f64,
    params: &CoveringParams,
) -> Result<f64, CoveringError> {
    assert!(n >= 1.0, "duration floor must be at least 1");
    let mut best: Option<f64> = None;
    let mut last_err = None;
    for run in 0..params.m_runs.max(1) {
        let run_seed = seed.wrapping_add(0xc0ff_ee_u64.wrapping_mul(run as u64 + 1));
        match cover_from_packing(flow, z_probes, n, eps, params.delta, run_seed, dt, params) {
            Ok(cover) => {
                let value = cover.len() as f64 * (-s * n).exp();
                best = Some(best.map_or(value, |b: f64| b.min(value)));
            }
            Err(e @ CoveringError::CoverageFailure { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(v) => Ok(v),
        None => Err(last_err.expect("at least one run attempted")),
    }
}

/// Bowen-entropy estimate: slope of log cover cardinality over the
/// t-window, covers built from maximal packings, with a critical-s
/// bisection on the growth of the cover value as cross-check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BowenEntropyResult {
    pub estimate: EntropyEstimate,
    pub counts: Vec<crate::packing::GrowthCount>,
    pub critical_bracket: [f64; 2],
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_bowen_entropy(
    flow: &dyn Flow,
    z_probes: &ProbeSet,
    eps: f64,
    t_window: [f64; 2],
    dt: f64,
    restarts: u32,
    seed: u64,
    params: &CoveringParams,
) -> Result<BowenEntropyResult, CoveringError> {
    if !(t_window[1] >= t_window[0] + 4.0) {
        return Err(CoveringError::Packing(PackingError::InvalidWindow {
            t_min: t_window[0],
            t_max: t_window[1],
        }));
    }
    let ts = t_grid(t_window, params.packing.t_step);
    let runs: Vec<(usize, u32)> = ts
        .iter()
        .enumerate()
        .flat_map(|(ti, _)| (0..restarts.max(1)).map(move |r| (ti, r)))
        .collect();
    let per_run: Vec<Result<(usize, Option<usize>), CoveringError>> = runs
        .par_iter()
        .map(|&(ti, r)| {
            let run_seed = seed
                .wrapping_add((ti as u64) << 32)
                .wrapping_add(0x9e37_79b9_u64.wrapping_mul(r as u64 + 1));
            match cover_from_packing(
                flow,
                z_probes,
                ts[ti],
                eps,
                params.delta,
                run_seed,
                dt,
                params,
            ) {
                Ok(cover) => Ok((ti, Some(cover.len()))),
                // Non-maximal packing for this seed; other restarts decide.
                Err(CoveringError::CoverageFailure { .. }) => Ok((ti, None)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut best: Vec<Option<usize>> = vec![None; ts.len()];
    for res in per_run {
        let (ti, count) = res?;
        if let Some(c) = count {
            best[ti] = Some(best[ti].map_or(c, |b: usize| b.min(c)));
        }
    }
    let cap = ((z_probes.points.len() as f64) * params.packing.saturation_frac).ceil() as usize;
    let counts: Vec<crate::packing::GrowthCount> = ts
        .iter()
        .zip(&best)
        .filter_map(|(&t, &count)| {
            count.map(|c| crate::packing::GrowthCount {
                t,
                count: c,
                usable: c >= 3 && c <= cap,
            })
        })
        .collect();
    let fit_points: Vec<(f64, f64)> = counts
        .iter()
        .filter(|c| c.usable)
        .map(|c| (c.t, (c.count as f64).ln()))
        .collect();
    if fit_points.len() < 3 {
        return Err(CoveringError::Packing(PackingError::TooFewUsablePoints {
            usable: fit_points.len(),
        }));
    }
    let (slope, _, residual) = fit_log_slope(&fit_points);
    let value = slope.max(0.0);

    let bracket = bowen_critical_bracket(flow, z_probes, eps, t_window, dt, seed, params, value)?;

    Ok(BowenEntropyResult {
        estimate: EntropyEstimate {
            value,
            eps,
            t_window,
            dt,
            method: MethodTag::BowenCover,
            fit_residual: residual,
            seed,
        },
        counts,
        critical_bracket: bracket,
    })
}

/// s is supercritical for the cover value when log M shrinks as the
/// duration floor grows.
#[allow(clippy::too_many_arguments)]
fn bowen_critical_bracket(
    flow: &dyn Flow,
    z_probes: &ProbeSet,
    eps: f64,
    t_window: [f64; 2],
    dt: f64,
    seed: u64,
    params: &CoveringParams,
    slope: f64,
) -> Result<[f64; 2], CoveringError> {
    let subset_len = z_probes.points.len().min(params.packing.bisect_pool);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb0e11);
    let mut pts = z_probes.points.clone();
    pts.shuffle(&mut rng);
    pts.truncate(subset_len);
    let probes = ProbeSet::new(format!("{}-bisect", z_probes.id), pts);
    let n_lo = t_window[0].max(2.0);
    let n_hi = (0.75 * t_window[1]).max(n_lo + 2.0);
    let mut lo = 0.0_f64;
    let mut hi = (2.0 * slope).max(0.2);
    for iter in 0..8 {
        let mid = 0.5 * (lo + hi);
        let m_lo = estimate_m(flow, &probes, mid, eps, n_lo, seed + iter, dt, params)?;
        let m_hi = estimate_m(flow, &probes, mid, eps, n_hi, seed + iter, dt, params)?;
        if m_hi < m_lo {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok([lo, hi])
}
