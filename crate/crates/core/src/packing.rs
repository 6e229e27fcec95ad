//! Disjoint families of closed reparametrization balls and packing-entropy
//! estimation.
//!
//! Disjointness of two balls is only semi-decidable numerically; it is
//! certified against a probe set (no probe lies in both balls), with a
//! center-separation fast path: when one center is not even in the
//! doubled-radius ball around the other, the balls cannot intersect. Probe
//! density is therefore a reported parameter of every family.
//!
//! The greedy scan keeps an inverted index from probes to the accepted
//! balls containing them, which makes the candidate-versus-family check
//! linear in the candidate's own probe memberships while returning exactly
//! the same family as the pairwise definition.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::{Flow, Point};
use crate::reparam::{BallOracle, BallSpec, ReparamError, ReparamParams};

/// A probe set with a stable identifier for certificates.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub id: String,
    pub points: Vec<Point>,
}

impl ProbeSet {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Self {
        ProbeSet {
            id: id.into(),
            points,
        }
    }

    /// Candidate centers plus `extra` fresh samples; the recommended probe
    /// recipe for disjointness certificates.
    pub fn from_candidates(
        flow: &dyn Flow,
        candidates: &[Point],
        extra: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = candidates.to_vec();
        points.extend((0..extra).map(|_| flow.random_point(&mut rng)));
        ProbeSet {
            id: format!("probes-{seed}-{}", points.len()),
            points,
        }
    }
}

/// A finite family of pairwise-disjoint closed reparametrization balls.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PackingFamily {
    pub balls: Vec<BallSpec>,
    pub probe_set_id: String,
    pub min_t: f64,
}

impl PackingFamily {
    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }
}

/// Σ_i exp(−s·t_i) over the family's durations.
pub fn packing_sum(family: &PackingFamily, s: f64) -> f64 {
    family.balls.iter().map(|b| (-s * b.t).exp()).sum()
}

/// Method that produced an entropy estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodTag {
    #[serde(rename = "packing-growth")]
    PackingGrowth,
    #[serde(rename = "bowen-cover")]
    BowenCover,
    #[serde(rename = "critical-s")]
    CriticalS,
}

/// An entropy value (nats per unit time) with the scale parameters that
/// produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub eps: f64,
    pub t_window: [f64; 2],
    pub dt: f64,
    pub method: MethodTag,
    pub fit_residual: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PackingParams {
    /// Extra probes drawn on top of the candidate centers.
    pub probe_count: usize,
    /// Duration spread above the floor in heterogeneous families.
    pub t_spread: f64,
    /// Step of the arithmetic t grid used by growth fits.
    pub t_step: f64,
    /// Counts above this fraction of the candidate pool are treated as
    /// saturated and excluded from growth fits.
    pub saturation_frac: f64,
    /// Candidate-pool cap for the critical-s cross-check.
    pub bisect_pool: usize,
    pub reparam: ReparamParams,
}

impl Default for PackingParams {
    fn default() -> Self {
        PackingParams {
            probe_count: 5000,
            t_spread: 5.0,
            t_step: 2.0,
            saturation_frac: 0.3,
            bisect_pool: 4096,
            reparam: ReparamParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PackingError {
    #[error("probe set must be nonempty")]
    EmptyProbes,
    #[error("invalid sum range ({a}, {b})")]
    InvalidRange { a: f64, b: f64 },
    #[error(
        "insufficient packing mass: achievable sum {achieved:.6} does not exceed {a} \
         (s is above the critical exponent at this scale)"
    )]
    InsufficientPackingMass {
        a: f64,
        achieved: f64,
        family: PackingFamily,
    },
    #[error("t-window [{t_min}, {t_max}] must satisfy t_max >= t_min + 4")]
    InvalidWindow { t_min: f64, t_max: f64 },
    #[error("growth fit needs at least 3 usable grid points, got {usable}")]
    TooFewUsablePoints { usable: usize },
    #[error(transparent)]
    Reparam(#[from] ReparamError),
}

/// Sufficient separation condition: if `b2.center` is not in the ball
/// around `b1.center` with the radii added, no point can align with both
/// orbit segments.
fn centers_separated(
    flow: &dyn Flow,
    b1: &BallSpec,
    b2: &BallSpec,
    dt: f64,
    rp: &ReparamParams,
) -> Result<bool, ReparamError> {
    let probe_ball = BallSpec::closed(
        b1.center.clone(),
        b1.t.min(b2.t),
        b1.eps + b2.eps,
    );
    let mut oracle = BallOracle::new(flow, &probe_ball, dt, rp)?;
    Ok(!oracle.contains(&b2.center))
}

/// Probe-certified disjointness of two closed balls.
pub fn balls_disjoint(
    flow: &dyn Flow,
    b1: &BallSpec,
    b2: &BallSpec,
    probes: &[Point],
    dt: f64,
    rp: &ReparamParams,
) -> Result<bool, PackingError> {
    if probes.is_empty() {
        return Err(PackingError::EmptyProbes);
    }
    if centers_separated(flow, b1, b2, dt, rp)? {
        return Ok(true);
    }
    let mut o1 = BallOracle::new(flow, b1, dt, rp)?;
    let mut o2 = BallOracle::new(flow, b2, dt, rp)?;
    for p in probes {
        if o1.quick_reject(p) || o2.quick_reject(p) {
            continue;
        }
        if o1.contains(p) && o2.contains(p) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Incremental greedy family builder; equivalent to checking
/// [`balls_disjoint`] against every accepted ball.
pub(crate) struct GreedyFamily<'a> {
    flow: &'a dyn Flow,
    dt: f64,
    rp: ReparamParams,
    probes: &'a ProbeSet,
    owners: Vec<Vec<u32>>,
    pub accepted: Vec<BallSpec>,
    /// For every rejected candidate, one accepted ball it collides with.
    pub rejection_witnesses: Vec<(BallSpec, u32)>,
}

impl<'a> GreedyFamily<'a> {
    pub fn new(
        flow: &'a dyn Flow,
        probes: &'a ProbeSet,
        dt: f64,
        rp: ReparamParams,
    ) -> Result<Self, PackingError> {
        if probes.points.is_empty() {
            return Err(PackingError::EmptyProbes);
        }
        Ok(GreedyFamily {
            flow,
            dt,
            rp,
            probes,
            owners: vec![Vec::new(); probes.points.len()],
            accepted: Vec::new(),
            rejection_witnesses: Vec::new(),
        })
    }

    pub fn try_accept(&mut self, ball: BallSpec) -> Result<bool, PackingError> {
        let mut oracle = BallOracle::new(self.flow, &ball, self.dt, &self.rp)?;
        let mut members: Vec<u32> = Vec::new();
        for (pi, p) in self.probes.points.iter().enumerate() {
            if oracle.quick_reject(p) {
                continue;
            }
            if oracle.contains(p) {
                members.push(pi as u32);
            }
        }
        let mut colliding: Vec<u32> = members
            .iter()
            .flat_map(|&pi| self.owners[pi as usize].iter().copied())
            .collect();
        colliding.sort_unstable();
        colliding.dedup();
        for &acc in &colliding {
            if !centers_separated(
                self.flow,
                &ball,
                &self.accepted[acc as usize],
                self.dt,
                &self.rp,
            )? {
                self.rejection_witnesses.push((ball, acc));
                return Ok(false);
            }
        }
        let idx = self.accepted.len() as u32;
        for &pi in &members {
            self.owners[pi as usize].push(idx);
        }
        self.accepted.push(ball);
        Ok(true)
    }

    /// Maximality certificate: every rejected candidate still collides with
    /// a ball of the final family.
    pub fn assert_maximal(&self) {
        for (_, witness) in &self.rejection_witnesses {
            assert!((*witness as usize) < self.accepted.len());
        }
    }
}

pub(crate) fn greedy_run(
    flow: &dyn Flow,
    candidates: &[Point],
    durations: impl Fn(usize, &mut ChaCha8Rng) -> f64,
    eps: f64,
    probes: &ProbeSet,
    order_seed: u64,
    dt: f64,
    rp: &ReparamParams,
) -> Result<GreedyFamilyResult, PackingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut rng);
    let mut family = GreedyFamily::new(flow, probes, dt, rp.clone())?;
    for &ci in &order {
        let t = durations(ci, &mut rng);
        family.try_accept(BallSpec::closed(candidates[ci].clone(), t, eps))?;
    }
    family.assert_maximal();
    Ok(GreedyFamilyResult {
        balls: std::mem::take(&mut family.accepted),
    })
}

pub(crate) struct GreedyFamilyResult {
    pub balls: Vec<BallSpec>,
}

/// Maximal disjoint family of closed balls of uniform duration `t`, built
/// by a seeded random scan over `candidates`.
pub fn greedy_packing(
    flow: &dyn Flow,
    candidates: &[Point],
    t: f64,
    eps: f64,
    probes: &ProbeSet,
    order_seed: u64,
    dt: f64,
    rp: &ReparamParams,
) -> Result<PackingFamily, PackingError> {
    let run = greedy_run(flow, candidates, |_, _| t, eps, probes, order_seed, dt, rp)?;
    Ok(PackingFamily {
        balls: run.balls,
        probe_set_id: probes.id.clone(),
        min_t: t,
    })
}

/// Re-checks the pairwise disjointness certificate of a family.
pub fn revalidate_family(
    flow: &dyn Flow,
    family: &PackingFamily,
    probes: &[Point],
    dt: f64,
    rp: &ReparamParams,
) -> Result<bool, PackingError> {
    for b in &family.balls {
        if b.t < family.min_t - 1e-12 {
            return Ok(false);
        }
    }
    for i in 0..family.balls.len() {
        for j in (i + 1)..family.balls.len() {
            if !balls_disjoint(flow, &family.balls[i], &family.balls[j], probes, dt, rp)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Greedy lower bound for the packing value P^s at duration floor `n`:
/// best packing sum over seeded restarts with durations in
/// [n, n + t_spread].
#[allow(clippy::too_many_arguments)]
pub fn estimate_p(
    flow: &dyn Flow,
    z_samples: &[Point],
    s: f64,
    eps: f64,
    n: f64,
    restarts: u32,
    seed: u64,
    probes: &ProbeSet,
    dt: f64,
    params: &PackingParams,
) -> Result<f64, PackingError> {
    assert!(n >= 1.0, "duration floor must be at least 1");
    assert!(restarts >= 1, "need at least one restart");
    let spread = params.t_spread;
    let mut best = 0.0_f64;
    for r in 0..restarts {
        let run_seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(r as u64 + 1));
        let run = greedy_run(
            flow,
            z_samples,
            |_, rng| n + rng.gen::<f64>() * spread,
            eps,
            probes,
            run_seed,
            dt,
            &params.reparam,
        )?;
        let family = PackingFamily {
            balls: run.balls,
            probe_set_id: probes.id.clone(),
            min_t: n,
        };
        best = best.max(packing_sum(&family, s));
    }
    Ok(best)
}

/// Grows a disjoint family with durations ≥ some N₁ ≥ `n` chosen so each
/// term is smaller than b−a, until the packing sum exceeds `b`, then
/// discards balls until the sum lies in (a, b).
///
/// Erring with "insufficient packing mass" signals that s is above the
/// critical exponent at this scale.
#[allow(clippy::too_many_arguments)]
pub fn select_family_in_range(
    flow: &dyn Flow,
    z_samples: &[Point],
    s: f64,
    eps: f64,
    n: f64,
    a: f64,
    b: f64,
    seed: u64,
    probes: &ProbeSet,
    dt: f64,
    params: &PackingParams,
) -> Result<PackingFamily, PackingError> {
    if !(0.0 <= a && a < b) {
        return Err(PackingError::InvalidRange { a, b });
    }
    // Pick N₁ ≥ n with exp(-N₁·s) < b - a.
    let gap = b - a;
    let n1 = if s > 0.0 {
        let needed = -(gap.min(1.0)).ln() / s;
        n.max(needed + 1e-9).max(needed * (1.0 + 1e-12))
    } else {
        if gap <= 1.0 {
            return Err(PackingError::InvalidRange { a, b });
        }
        n
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..z_samples.len()).collect();
    order.shuffle(&mut rng);
    let mut family = GreedyFamily::new(flow, probes, dt, params.reparam.clone())?;
    let mut terms: Vec<f64> = Vec::new();
    let mut sum = 0.0_f64;
    for &ci in &order {
        if sum > b {
            break;
        }
        let t = n1 + rng.gen::<f64>() * params.t_spread;
        let term = (-s * t).exp();
        debug_assert!(term < gap + 1e-12);
        if family.try_accept(BallSpec::closed(z_samples[ci].clone(), t, eps))? {
            terms.push(term);
            sum += term;
        }
    }
    if sum <= a {
        return Err(PackingError::InsufficientPackingMass {
            a,
            achieved: sum,
            family: PackingFamily {
                balls: family.accepted,
                probe_set_id: probes.id.clone(),
                min_t: n1,
            },
        });
    }
    let mut balls = family.accepted;
    while sum >= b {
        let term = terms.pop().expect("sum >= b > 0 implies a remaining term");
        balls.pop();
        sum -= term;
    }
    debug_assert!(sum > a && sum < b);
    Ok(PackingFamily {
        balls,
        probe_set_id: probes.id.clone(),
        min_t: n1,
    })
}

/// Per-duration packing cardinality, the raw data behind a growth fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthCount {
    pub t: f64,
    pub count: usize,
    /// Inside the usable band (neither too sparse nor pool-saturated).
    pub usable: bool,
}

/// Growth-fit estimate plus diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PackingEntropyResult {
    pub estimate: EntropyEstimate,
    pub counts: Vec<GrowthCount>,
    /// Critical-s bracket from the cross-check bisection.
    pub critical_bracket: [f64; 2],
}

pub(crate) fn fit_log_slope(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (points
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, residual)
}

pub(crate) fn t_grid(t_window: [f64; 2], step: f64) -> Vec<f64> {
    let mut ts = Vec::new();
    let mut t = t_window[0];
    while t <= t_window[1] + 1e-9 {
        ts.push(t.min(t_window[1]));
        t += step;
    }
    ts
}

/// Packing-entropy estimate by the growth of maximal packing cardinality:
/// fits the slope of log R(t) over the t-window, excluding grid points
/// where the greedy count is pool-saturated or too sparse, and cross-checks
/// with a bisection for the critical exponent.
#[allow(clippy::too_many_arguments)]
pub fn estimate_packing_entropy(
    flow: &dyn Flow,
    z_samples: &[Point],
    eps: f64,
    t_window: [f64; 2],
    dt: f64,
    restarts: u32,
    seed: u64,
    probes: &ProbeSet,
    params: &PackingParams,
) -> Result<PackingEntropyResult, PackingError> {
    if !(t_window[1] >= t_window[0] + 4.0) {
        return Err(PackingError::InvalidWindow {
            t_min: t_window[0],
            t_max: t_window[1],
        });
    }
    let ts = t_grid(t_window, params.t_step);
    let runs: Vec<(usize, u32)> = ts
        .iter()
        .enumerate()
        .flat_map(|(ti, _)| (0..restarts.max(1)).map(move |r| (ti, r)))
        .collect();
    let counts_per_run: Vec<Result<(usize, usize), PackingError>> = runs
        .par_iter()
        .map(|&(ti, r)| {
            let run_seed = seed
                .wrapping_add((ti as u64) << 32)
                .wrapping_add(0x9e37_79b9_u64.wrapping_mul(r as u64 + 1));
            let family = greedy_packing(
                flow,
                z_samples,
                ts[ti],
                eps,
                probes,
                run_seed,
                dt,
                &params.reparam,
            )?;
            Ok((ti, family.len()))
        })
        .collect();
    let mut best = vec![0usize; ts.len()];
    for res in counts_per_run {
        let (ti, count) = res?;
        best[ti] = best[ti].max(count);
    }
    let cap = ((z_samples.len() as f64) * params.saturation_frac).ceil() as usize;
    let counts: Vec<GrowthCount> = ts
        .iter()
        .zip(&best)
        .map(|(&t, &count)| GrowthCount {
            t,
            count,
            usable: count >= 3 && count <= cap,
        })
        .collect();
    let fit_points: Vec<(f64, f64)> = counts
        .iter()
        .filter(|c| c.usable)
        .map(|c| (c.t, (c.count as f64).ln()))
        .collect();
    if fit_points.len() < 3 {
        return Err(PackingError::TooFewUsablePoints {
            usable: fit_points.len(),
        });
    }
    let (slope, _, residual) = fit_log_slope(&fit_points);
    let value = slope.max(0.0);

    let bracket = critical_s_bracket(flow, z_samples, eps, t_window, dt, seed, probes, params, value)?;

    Ok(PackingEntropyResult {
        estimate: EntropyEstimate {
            value,
            eps,
            t_window,
            dt,
            method: MethodTag::PackingGrowth,
            fit_residual: residual,
            seed,
        },
        counts,
        critical_bracket: bracket,
    })
}

/// Bisection on s: s counts as supercritical when the (1,2) range selection
/// fails at the largest duration floor tried.
#[allow(clippy::too_many_arguments)]
fn critical_s_bracket(
    flow: &dyn Flow,
    z_samples: &[Point],
    eps: f64,
    t_window: [f64; 2],
    dt: f64,
    seed: u64,
    probes: &ProbeSet,
    params: &PackingParams,
    slope: f64,
) -> Result<[f64; 2], PackingError> {
    let pool: Vec<Point> = z_samples
        .iter()
        .take(params.bisect_pool)
        .cloned()
        .collect();
    let n_largest = (0.75 * t_window[1]).max(4.0);
    let mut lo = 0.0_f64;
    let mut hi = (2.0 * slope).max(0.2);
    for iter in 0..10 {
        let mid = 0.5 * (lo + hi);
        let res = select_family_in_range(
            flow,
            &pool,
            mid,
            eps,
            n_largest,
            1.0,
            2.0,
            seed.wrapping_add(0xb15e_c7 + iter),
            probes,
            dt,
            params,
        );
        let supercritical = matches!(res, Err(PackingError::InsufficientPackingMass { .. }));
        if let Err(e) = res {
            if !matches!(e, PackingError::InsufficientPackingMass { .. }) {
                return Err(e);
            }
        }
        if supercritical {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok([lo, hi])
}
