//! Discrete measures, local entropies, and the finite-depth Frostman-type
//! construction that witnesses the measure side of the variational
//! principle.
//!
//! The construction selects a level-1 family whose packing sum lands in
//! (1,2), then refines each atom inside a shrinking metric ball with a
//! per-parent mass window (μ(x), (1+2^{-level})·μ(x)), exactly mirroring
//! the iterative scheme the upper-bound proof uses. The weak-* limit is
//! replaced by the final-stage measure; the mass-chain inequalities with
//! constant C = Π(1+2^{-n}) are re-verified by [`check_mass_bounds`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::{Flow, Point};
use crate::packing::{
    balls_disjoint, select_family_in_range, PackingError, PackingParams, ProbeSet,
};
use crate::reparam::{BallOracle, BallSpec, ReparamError, ReparamParams};

/// Finitely many weighted atoms with positive weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub atoms: Vec<(Point, f64)>,
    pub total_mass: f64,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<(Point, f64)>) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::EmptyMeasure);
        }
        if atoms.iter().any(|(_, w)| !(*w > 0.0)) {
            return Err(MeasureError::NonPositiveWeight);
        }
        let total_mass = atoms.iter().map(|(_, w)| w).sum();
        Ok(DiscreteMeasure { atoms, total_mass })
    }

    /// Equal weights 1/n on the given points.
    pub fn empirical(points: Vec<Point>) -> Result<Self, MeasureError> {
        let n = points.len();
        if n == 0 {
            return Err(MeasureError::EmptyMeasure);
        }
        let w = 1.0 / n as f64;
        Self::new(points.into_iter().map(|p| (p, w)).collect())
    }

    pub fn normalized(&self) -> Self {
        let scale = 1.0 / self.total_mass;
        DiscreteMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|(p, w)| (p.clone(), w * scale))
                .collect(),
            total_mass: 1.0,
        }
    }

    /// Mass-bookkeeping invariant: stored total matches the atom sum.
    pub fn mass_consistent(&self) -> bool {
        let sum: f64 = self.atoms.iter().map(|(_, w)| w).sum();
        (sum - self.total_mass).abs() <= 1e-12 * self.total_mass.max(1.0)
    }
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("measure must have at least one atom")]
    EmptyMeasure,
    #[error("atom weights must be positive")]
    NonPositiveWeight,
    #[error("t_list must be increasing with at least 3 entries")]
    InvalidTList,
    #[error("ball measure is zero at every requested duration (atomless at center)")]
    AtomlessAtCenter,
    #[error("frostman construction failed at level {level}, parent atom {parent}: {source}")]
    Construction {
        level: usize,
        parent: usize,
        #[source]
        source: Box<PackingError>,
    },
    #[error("no admissible separation radius gamma at level {level}")]
    GammaSearchFailed { level: usize },
    #[error(transparent)]
    Reparam(#[from] ReparamError),
    #[error(transparent)]
    Packing(#[from] PackingError),
}

/// μ(B): total weight of the atoms lying in the ball.
pub fn measure_of_ball(
    flow: &dyn Flow,
    mu: &DiscreteMeasure,
    ball: &BallSpec,
    dt: f64,
    rp: &ReparamParams,
) -> Result<f64, MeasureError> {
    if mu.atoms.is_empty() {
        return Err(MeasureError::EmptyMeasure);
    }
    let mut oracle = BallOracle::new(flow, ball, dt, rp)?;
    let mut mass = 0.0;
    for (p, w) in &mu.atoms {
        if oracle.quick_reject(p) {
            continue;
        }
        if oracle.contains(p) {
            mass += w;
        }
    }
    Ok(mass)
}

/// Finite-scale local entropies at x: u(t) = −(1/t)·log(μ(B(x,t,ε))/‖μ‖)
/// over `t_list`, truncated at the last positive-mass duration; the lower
/// and upper values are the min and max of the tail half.
pub fn local_entropy_at(
    flow: &dyn Flow,
    mu: &DiscreteMeasure,
    x: &Point,
    eps: f64,
    t_list: &[f64],
    dt: f64,
    rp: &ReparamParams,
) -> Result<(f64, f64), MeasureError> {
    if t_list.len() < 3 || t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MeasureError::InvalidTList);
    }
    let mut u_values = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let ball = BallSpec::open(x.clone(), t, eps);
        let mass = measure_of_ball(flow, mu, &ball, dt, rp)?;
        if mass <= 0.0 {
            break;
        }
        u_values.push(-(mass / mu.total_mass).ln() / t);
    }
    if u_values.is_empty() {
        return Err(MeasureError::AtomlessAtCenter);
    }
    let tail = &u_values[u_values.len() / 2..];
    let lower = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let upper = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lower, upper))
}

/// Monte Carlo integral of the upper local entropy: averages the upper
/// component over atoms drawn with probability proportional to weight.
#[allow(clippy::too_many_arguments)]
pub fn upper_local_entropy(
    flow: &dyn Flow,
    mu: &DiscreteMeasure,
    eps: f64,
    t_list: &[f64],
    sample_count: u32,
    seed: u64,
    dt: f64,
    rp: &ReparamParams,
) -> Result<f64, MeasureError> {
    assert!(sample_count >= 1, "need at least one sample");
    let mut cumulative = Vec::with_capacity(mu.atoms.len());
    let mut acc = 0.0;
    for (_, w) in &mu.atoms {
        acc += w;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..sample_count {
        let u = rng.gen::<f64>() * acc;
        let idx = cumulative.partition_point(|&c| c < u).min(mu.atoms.len() - 1);
        let (_, upper) = local_entropy_at(flow, mu, &mu.atoms[idx].0, eps, t_list, dt, rp)?;
        total += upper;
    }
    Ok(total / sample_count as f64)
}

/// One level of the Frostman-type construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrostmanState {
    pub level: usize,
    pub points: Vec<Point>,
    /// Ball durations m_i per atom.
    pub durations: Vec<f64>,
    /// Unnormalized weights exp(−m_i(x)·s).
    pub weights: Vec<f64>,
    /// Index of each atom's parent in the previous level (self-indices at
    /// level 1).
    pub parents: Vec<usize>,
    pub gamma: f64,
    pub s: f64,
    pub eps: f64,
}

impl FrostmanState {
    pub fn measure(&self) -> Result<DiscreteMeasure, MeasureError> {
        DiscreteMeasure::new(
            self.points
                .iter()
                .cloned()
                .zip(self.weights.iter().cloned())
                .collect(),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrostmanParams {
    /// Duration floor for the level-1 selection.
    pub n_floor: f64,
    /// Candidate-pool size refined around each parent atom.
    pub child_pool: usize,
    /// Probes per disjointness certificate inside the construction.
    pub probe_count: usize,
    pub packing: PackingParams,
}

impl Default for FrostmanParams {
    fn default() -> Self {
        FrostmanParams {
            n_floor: 4.0,
            child_pool: 192,
            probe_count: 512,
            packing: PackingParams::default(),
        }
    }
}

/// Π_{k=1..terms} (1 + 2^{-k}), the mass-chain constant.
pub fn mass_chain_constant(terms: u32) -> f64 {
    (1..=terms).fold(1.0, |acc, k| acc * (1.0 + 0.5_f64.powi(k as i32)))
}

fn min_pairwise_distance(flow: &dyn Flow, points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.min(flow.metric(&points[i], &points[j]));
        }
    }
    best
}

/// Largest γ ≤ cap such that, on probes, no point lies in the metric
/// γ-ball of one atom and the reparametrization ball of another.
fn separation_gamma(
    flow: &dyn Flow,
    state_points: &[Point],
    durations: &[f64],
    eps: f64,
    cap: f64,
    level: usize,
    probes: &[Point],
    dt: f64,
    rp: &ReparamParams,
) -> Result<f64, MeasureError> {
    let mut oracles: Vec<BallOracle> = Vec::with_capacity(state_points.len());
    for (p, &m) in state_points.iter().zip(durations) {
        oracles.push(BallOracle::new(
            flow,
            &BallSpec::closed(p.clone(), m, eps),
            dt,
            rp,
        )?);
    }
    let mut gamma = cap;
    'search: for _ in 0..60 {
        for probe in probes {
            let mut metric_hit: Option<usize> = None;
            for (i, p) in state_points.iter().enumerate() {
                if flow.metric(probe, p) <= gamma {
                    metric_hit = Some(i);
                    break;
                }
            }
            let Some(owner) = metric_hit else { continue };
            for (i, oracle) in oracles.iter_mut().enumerate() {
                if i == owner {
                    continue;
                }
                if !oracle.quick_reject(probe) && oracle.contains(probe) {
                    gamma *= 0.5;
                    continue 'search;
                }
            }
        }
        return Ok(gamma);
    }
    Err(MeasureError::GammaSearchFailed { level })
}

/// Finite-depth Frostman-type construction: returns the final-stage
/// measure normalized to mass one, together with the full level history
/// (unnormalized).
///
/// The caller is responsible for 0 < s < the packing entropy of the
/// sampled set; a violation surfaces as a construction error naming the
/// level and parent atom where the local packing mass ran out.
#[allow(clippy::too_many_arguments)]
pub fn frostman_construct(
    flow: &dyn Flow,
    k_samples: &[Point],
    s: f64,
    eps: f64,
    p_max: usize,
    seed: u64,
    dt: f64,
    params: &FrostmanParams,
) -> Result<(DiscreteMeasure, Vec<FrostmanState>), MeasureError> {
    assert!(p_max >= 1, "need at least one level");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pk = &params.packing;

    let probes = ProbeSet::from_candidates(
        flow,
        k_samples,
        params.probe_count.min(2048),
        seed ^ 0xf20575,
    );
    let step1 = select_family_in_range(
        flow, k_samples, s, eps, params.n_floor, 1.0, 2.0, seed, &probes, dt, pk,
    )
    .map_err(|e| MeasureError::Construction {
        level: 1,
        parent: 0,
        source: Box::new(e),
    })?;

    let points: Vec<Point> = step1.balls.iter().map(|b| b.center.clone()).collect();
    let durations: Vec<f64> = step1.balls.iter().map(|b| b.t).collect();
    let weights: Vec<f64> = durations.iter().map(|&m| (-s * m).exp()).collect();
    let parents: Vec<usize> = (0..points.len()).collect();
    let cap = min_pairwise_distance(flow, &points) / 4.0;
    let sep_probes: Vec<Point> = probes
        .points
        .iter()
        .take(params.probe_count)
        .cloned()
        .collect();
    let gamma = separation_gamma(
        flow, &points, &durations, eps, cap, 1, &sep_probes, dt, &pk.reparam,
    )?;
    let mut history = vec![FrostmanState {
        level: 1,
        points,
        durations,
        weights,
        parents,
        gamma,
        s,
        eps,
    }];

    for level in 2..=p_max {
        let prev = history.last().expect("nonempty history");
        let floor = prev
            .durations
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mult = 1.0 + 0.5_f64.powi(level as i32);
        let mut points = Vec::new();
        let mut durations = Vec::new();
        let mut parents = Vec::new();
        for (pi, parent) in prev.points.iter().enumerate() {
            let radius = prev.gamma / 4.0;
            // Candidates: pool members near the parent, refined with fresh
            // samples inside the same metric ball.
            let mut local: Vec<Point> = k_samples
                .iter()
                .filter(|p| flow.metric(p, parent) <= radius)
                .cloned()
                .collect();
            while local.len() < params.child_pool {
                local.push(flow.random_point_near(parent, radius, &mut rng));
            }
            let target = prev.weights[pi];
            let local_probes = ProbeSet::new(
                format!("frostman-l{level}-p{pi}"),
                local.clone(),
            );
            let child_seed = seed
                .wrapping_add((level as u64) << 40)
                .wrapping_add(pi as u64 + 1);
            let family = select_family_in_range(
                flow,
                &local,
                s,
                eps,
                floor,
                target,
                mult * target,
                child_seed,
                &local_probes,
                dt,
                pk,
            )
            .map_err(|e| MeasureError::Construction {
                level,
                parent: pi,
                source: Box::new(e),
            })?;
            for ball in family.balls {
                points.push(ball.center);
                durations.push(ball.t);
                parents.push(pi);
            }
        }
        let weights: Vec<f64> = durations.iter().map(|&m| (-s * m).exp()).collect();
        let cap = (prev.gamma / 4.0 * (1.0 - 1e-9))
            .min(min_pairwise_distance(flow, &points) / 4.0);
        let gamma = separation_gamma(
            flow, &points, &durations, eps, cap, level, &sep_probes, dt, &pk.reparam,
        )?;
        history.push(FrostmanState {
            level,
            points,
            durations,
            weights,
            parents,
            gamma,
            s,
            eps,
        });
    }

    let final_measure = history
        .last()
        .expect("nonempty history")
        .measure()?
        .normalized();
    Ok((final_measure, history))
}

/// A single mass-chain violation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassBoundViolation {
    pub level: usize,
    pub atom: usize,
    pub later_level: usize,
    pub mass: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MassBoundReport {
    pub violations: Vec<MassBoundViolation>,
}

impl MassBoundReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-verifies the mass-chain inequalities: for each level i atom x and
/// every later level j, the mass μ_j of the closed metric ball B̄(x, γ_i)
/// must lie in [exp(−m_i(x)s), C·exp(−m_i(x)s)].
pub fn check_mass_bounds(flow: &dyn Flow, history: &[FrostmanState]) -> MassBoundReport {
    let c = mass_chain_constant(64);
    let mut report = MassBoundReport::default();
    for i in 0..history.len() {
        let si = &history[i];
        for j in (i + 1)..history.len() {
            let sj = &history[j];
            for (ai, x) in si.points.iter().enumerate() {
                let mass: f64 = sj
                    .points
                    .iter()
                    .zip(&sj.weights)
                    .filter(|(p, _)| flow.metric(p, x) <= si.gamma)
                    .map(|(_, w)| w)
                    .sum();
                let lo = si.weights[ai] * (1.0 - 1e-9);
                let hi = c * si.weights[ai] * (1.0 + 1e-9);
                if mass < lo || mass > hi {
                    report.violations.push(MassBoundViolation {
                        level: si.level,
                        atom: ai,
                        later_level: sj.level,
                        mass,
                        lo,
                        hi,
                    });
                }
            }
        }
    }
    report
}

/// Machine-checks every structural invariant of a construction history.
pub fn verify_frostman_history(
    flow: &dyn Flow,
    history: &[FrostmanState],
    probes: &[Point],
    dt: f64,
    rp: &ReparamParams,
) -> Result<(), String> {
    for (hi, state) in history.iter().enumerate() {
        let n = state.points.len();
        if state.durations.len() != n || state.weights.len() != n || state.parents.len() != n {
            return Err(format!("level {}: ragged state arrays", state.level));
        }
        for (k, (&m, &w)) in state.durations.iter().zip(&state.weights).enumerate() {
            if ((-state.s * m).exp() - w).abs() > 1e-12 {
                return Err(format!("level {}: weight {} mismatch", state.level, k));
            }
        }
        // Pairwise disjoint reparametrization balls.
        for i in 0..n {
            for j in (i + 1)..n {
                let bi = BallSpec::closed(state.points[i].clone(), state.durations[i], state.eps);
                let bj = BallSpec::closed(state.points[j].clone(), state.durations[j], state.eps);
                match balls_disjoint(flow, &bi, &bj, probes, dt, rp) {
                    Ok(true) => {}
                    Ok(false) => {
                        return Err(format!(
                            "level {}: balls {} and {} intersect",
                            state.level, i, j
                        ))
                    }
                    Err(e) => return Err(e.to_string()),
                }
            }
        }
        // Disjoint closed metric gamma-balls.
        let min_dist = min_pairwise_distance(flow, &state.points);
        if n > 1 && min_dist <= 2.0 * state.gamma {
            return Err(format!(
                "level {}: gamma balls overlap (min distance {min_dist}, gamma {})",
                state.level, state.gamma
            ));
        }
        if hi > 0 {
            let prev = &history[hi - 1];
            let prev_max = prev
                .durations
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let min_m = state.durations.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_m < prev_max - 1e-12 {
                return Err(format!(
                    "level {}: duration floor violated ({min_m} < {prev_max})",
                    state.level
                ));
            }
            if !(state.gamma < prev.gamma / 4.0 + 1e-15) {
                return Err(format!("level {}: gamma did not shrink by 4", state.level));
            }
            // Per-parent mass recursion.
            let mult = 1.0 + 0.5_f64.powi(state.level as i32);
            for (pi, &pw) in prev.weights.iter().enumerate() {
                let child_sum: f64 = state
                    .parents
                    .iter()
                    .zip(&state.weights)
                    .filter(|(&par, _)| par == pi)
                    .map(|(_, w)| w)
                    .sum();
                if !(child_sum > pw && child_sum < mult * pw) {
                    return Err(format!(
                        "level {}: parent {} mass recursion violated ({child_sum} vs ({pw}, {}))",
                        state.level,
                        pi,
                        mult * pw
                    ));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
