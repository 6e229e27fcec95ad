use super::*;
use crate::flows::{Flow, Point, ShiftSuspension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shift() -> ShiftSuspension {
    ShiftSuspension::new(16, 1.0)
}

fn rp() -> ReparamParams {
    ReparamParams::default()
}

fn bernoulli_measure(sys: &ShiftSuspension, atoms: usize, seed: u64) -> DiscreteMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DiscreteMeasure::empirical((0..atoms).map(|_| sys.random_point(&mut rng)).collect()).unwrap()
}

#[test]
fn measure_construction_validates() {
    assert!(matches!(
        DiscreteMeasure::new(vec![]),
        Err(MeasureError::EmptyMeasure)
    ));
    assert!(matches!(
        DiscreteMeasure::new(vec![(Point::Torus { x: 0.0, y: 0.0 }, 0.0)]),
        Err(MeasureError::NonPositiveWeight)
    ));
    let mu = DiscreteMeasure::new(vec![
        (Point::Torus { x: 0.0, y: 0.0 }, 0.25),
        (Point::Torus { x: 0.5, y: 0.5 }, 0.75),
    ])
    .unwrap();
    assert!(mu.mass_consistent());
    assert!((mu.total_mass - 1.0).abs() < 1e-12);
}

#[test]
fn ball_measure_extremes() {
    let sys = shift();
    let mu = bernoulli_measure(&sys, 200, 3);
    let center = mu.atoms[0].0.clone();
    // Radius at the diameter captures everything.
    let fat = BallSpec::open(center.clone(), 2.0, sys.diameter_bound());
    let mass = measure_of_ball(&sys, &mu, &fat, 0.25, &rp()).unwrap();
    assert!((mass - mu.total_mass).abs() < 1e-9);
    // A long thin ball around a fresh random center captures nothing.
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let lonely = BallSpec::open(sys.random_point(&mut rng), 14.0, 0.1);
    let mass = measure_of_ball(&sys, &mu, &lonely, 0.25, &rp()).unwrap();
    assert_eq!(mass, 0.0);
}

#[test]
fn ball_measure_matches_cylinder_count() {
    // Cylinder-measure oracle: atoms whose forward word matches the
    // center's over the ball window, counted directly.
    let sys = shift();
    let mu = bernoulli_measure(&sys, 4096, 5);
    let center = mu.atoms[7].0.clone();
    let t = 4.0;
    let ball = BallSpec::open(center.clone(), t, 0.25);
    let mass = measure_of_ball(&sys, &mu, &ball, 0.0625, &rp()).unwrap();

    let expected = 0.5_f64.powi(4) * mu.total_mass; // 2^{-t} heuristic
    assert!(
        mass <= expected * 8.0 && mass >= expected / 64.0,
        "mass {mass} far from the 2^-n oracle {expected}"
    );

    // Direct recount through membership must agree exactly.
    let mut oracle = crate::reparam::BallOracle::new(&sys, &ball, 0.0625, &rp()).unwrap();
    let recount: f64 = mu
        .atoms
        .iter()
        .filter(|(p, _)| !oracle.quick_reject(p) && oracle.contains(p))
        .map(|(_, w)| w)
        .sum();
    assert!((mass - recount).abs() < 1e-12);
}

#[test]
fn local_entropy_of_point_mass_is_zero() {
    let sys = shift();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = sys.random_point(&mut rng);
    let mu = DiscreteMeasure::new(vec![(x.clone(), 1.0)]).unwrap();
    let (lower, upper) =
        local_entropy_at(&sys, &mu, &x, 0.25, &[2.0, 4.0, 6.0], 0.125, &rp()).unwrap();
    assert_eq!(lower, 0.0);
    assert_eq!(upper, 0.0);
}

#[test]
fn local_entropy_validates_t_list() {
    let sys = shift();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = sys.random_point(&mut rng);
    let mu = DiscreteMeasure::new(vec![(x.clone(), 1.0)]).unwrap();
    assert!(matches!(
        local_entropy_at(&sys, &mu, &x, 0.25, &[2.0, 4.0], 0.125, &rp()),
        Err(MeasureError::InvalidTList)
    ));
    assert!(matches!(
        local_entropy_at(&sys, &mu, &x, 0.25, &[2.0, 4.0, 3.0], 0.125, &rp()),
        Err(MeasureError::InvalidTList)
    ));
}

#[test]
fn local_entropy_errors_off_support() {
    let sys = shift();
    let mu = bernoulli_measure(&sys, 50, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let far = sys.random_point(&mut rng);
    // 50 atoms cannot populate a thin ball around a fresh center.
    let res = local_entropy_at(&sys, &mu, &far, 0.05, &[6.0, 8.0, 10.0], 0.0125, &rp());
    assert!(matches!(res, Err(MeasureError::AtomlessAtCenter)));
}

#[test]
fn local_entropy_ordering_and_sign() {
    let sys = shift();
    let mu = bernoulli_measure(&sys, 2000, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let t_list = [2.0, 3.0, 4.0, 5.0, 6.0];
    let mut checked = 0;
    for _ in 0..20 {
        let idx = rng.gen_range(0..mu.atoms.len());
        let x = mu.atoms[idx].0.clone();
        match local_entropy_at(&sys, &mu, &x, 0.5, &t_list, 0.125, &rp()) {
            Ok((lower, upper)) => {
                assert!(lower <= upper);
                assert!(lower >= 0.0);
                checked += 1;
            }
            Err(MeasureError::AtomlessAtCenter) => {}
            Err(e) => panic!("unexpected error: {e}"),
        }
    }
    assert!(checked > 10);
}

#[test]
fn local_entropy_monotone_in_radius_per_point() {
    let sys = shift();
    let mu = bernoulli_measure(&sys, 2000, 23);
    let x = mu.atoms[0].0.clone();
    let t_list = [2.0, 3.0, 4.0];
    let (_, coarse) = local_entropy_at(&sys, &mu, &x, 0.5, &t_list, 0.125, &rp()).unwrap();
    let (_, fine) = local_entropy_at(&sys, &mu, &x, 0.25, &t_list, 0.125, &rp()).unwrap();
    assert!(fine >= coarse - 1e-12, "smaller radius must not lower u(t)");
}

#[test]
fn upper_local_entropy_point_mass_and_bernoulli() {
    let sys = shift();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let x = sys.random_point(&mut rng);
    let delta = DiscreteMeasure::new(vec![(x, 1.0)]).unwrap();
    let v = upper_local_entropy(&sys, &delta, 0.25, &[2.0, 4.0, 6.0], 8, 1, 0.125, &rp())
        .unwrap();
    assert_eq!(v, 0.0);

    // Bernoulli lift: positive entropy of the right order (the acceptance
    // suite pins the full-scale 20% check).
    let mu = bernoulli_measure(&sys, 1 << 15, 31);
    let v = upper_local_entropy(
        &sys,
        &mu,
        0.5,
        &[4.0, 6.0, 8.0, 10.0],
        12,
        37,
        0.125,
        &rp(),
    )
    .unwrap();
    let target = 2.0_f64.ln();
    assert!(
        v > 0.5 * target && v < 1.6 * target,
        "Bernoulli lift entropy {v} out of range"
    );
}

#[test]
fn mixture_averages_the_components() {
    let sys = shift();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let orbit_point = sys.random_point(&mut rng);
    let bern = bernoulli_measure(&sys, 1 << 14, 43);
    let t_list = [4.0, 6.0, 8.0];
    let dt = 0.125;

    let mut atoms: Vec<(Point, f64)> = vec![(orbit_point, 0.5)];
    let half = 0.5 / bern.atoms.len() as f64;
    atoms.extend(bern.atoms.iter().map(|(p, _)| (p.clone(), half)));
    let mix = DiscreteMeasure::new(atoms).unwrap();

    let v_mix = upper_local_entropy(&sys, &mix, 0.5, &t_list, 48, 47, dt, &rp()).unwrap();
    let v_bern = upper_local_entropy(&sys, &bern, 0.5, &t_list, 48, 47, dt, &rp()).unwrap();
    // Half the samples sit on the point mass; the mass at the atom is 0.5
    // so its u-values are log(2)/t rather than 0, which still drags the
    // average well below the Bernoulli value.
    assert!(
        v_mix < 0.85 * v_bern,
        "mixture {v_mix} not pulled down from {v_bern}"
    );
    assert!(v_mix > 0.25 * v_bern);
}

#[test]
fn mass_chain_constant_converges() {
    let c40 = mass_chain_constant(40);
    let c80 = mass_chain_constant(80);
    assert!((c40 - c80).abs() < 1e-10);
    assert!((c80 - 2.384231).abs() < 1e-5);
}

fn small_frostman(
    seed: u64,
) -> (
    ShiftSuspension,
    DiscreteMeasure,
    Vec<FrostmanState>,
    Vec<Point>,
) {
    let sys = shift();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<Point> = (0..800).map(|_| sys.random_point(&mut rng)).collect();
    let params = FrostmanParams {
        child_pool: 96,
        ..Default::default()
    };
    let (mu, history) =
        frostman_construct(&sys, &pool, 0.3, 0.25, 2, seed, 0.125, &params).unwrap();
    (sys, mu, history, pool)
}

#[test]
fn frostman_step_one_sum_in_unit_interval() {
    let (_, _, history, _) = small_frostman(51);
    let first = &history[0];
    let sum: f64 = first.weights.iter().sum();
    assert!(sum > 1.0 && sum < 2.0, "step-1 sum {sum}");
}

#[test]
fn frostman_history_invariants_hold() {
    let (sys, mu, history, pool) = small_frostman(53);
    assert_eq!(history.len(), 2);
    assert!((mu.total_mass - 1.0).abs() < 1e-9);
    let probes: Vec<Point> = pool[..400].to_vec();
    verify_frostman_history(&sys, &history, &probes, 0.125, &rp())
        .unwrap_or_else(|e| panic!("invariant violated: {e}"));

    // Unnormalized final mass stays within (1, 2C).
    let c = mass_chain_constant(64);
    let final_mass: f64 = history.last().unwrap().weights.iter().sum();
    assert!(final_mass > 1.0 && final_mass < 2.0 * c, "mass {final_mass}");
}

#[test]
fn frostman_mass_bounds_report_is_empty() {
    let (sys, _, history, _) = small_frostman(57);
    let report = check_mass_bounds(&sys, &history);
    assert!(
        report.is_empty(),
        "unexpected violations: {:?}",
        report.violations
    );
}

#[test]
fn corrupted_history_is_flagged() {
    let (sys, _, mut history, _) = small_frostman(59);
    // Single-level histories are vacuously clean.
    let single = vec![history[0].clone()];
    assert!(check_mass_bounds(&sys, &single).is_empty());

    // Doubling one child weight breaks the chain at its parent.
    let last = history.len() - 1;
    history[last].weights[0] *= 2.0;
    let report = check_mass_bounds(&sys, &history);
    assert!(!report.is_empty(), "corruption went unnoticed");
    let atom = report.violations[0].atom;
    assert_eq!(report.violations[0].level, 1);
    assert_eq!(atom, history[last].parents[0]);
}

#[test]
fn frostman_rejects_supercritical_exponent() {
    let sys = shift();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let pool: Vec<Point> = (0..400).map(|_| sys.random_point(&mut rng)).collect();
    let params = FrostmanParams::default();
    let res = frostman_construct(&sys, &pool, 3.0, 0.25, 2, 63, 0.125, &params);
    match res {
        Err(MeasureError::Construction { level, .. }) => assert_eq!(level, 1),
        other => panic!("expected construction failure, got {other:?}"),
    }
}

#[test]
fn frostman_measure_has_high_local_entropy() {
    let (sys, mu, history, _) = small_frostman(67);
    let s = history[0].s;
    let max_m = history
        .last()
        .unwrap()
        .durations
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    let t_list: Vec<f64> = vec![max_m * 0.5, max_m * 0.75, max_m];
    let v = upper_local_entropy(&sys, &mu, 0.25, &t_list, 24, 71, 0.125, &rp()).unwrap();
    assert!(v >= s - 0.1, "local entropy {v} below s - 0.1 = {}", s - 0.1);
}

#[test]
fn measure_serializes_to_json_atoms() {
    let sys = shift();
    let mu = bernoulli_measure(&sys, 3, 73);
    let json = serde_json::to_string(&mu).unwrap();
    let back: DiscreteMeasure = serde_json::from_str(&json).unwrap();
    assert_eq!(back.atoms.len(), 3);
    assert!((back.total_mass - mu.total_mass).abs() < 1e-15);
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(value.get("atoms").is_some());

    let (_, _, history, _) = small_frostman(79);
    let json = serde_json::to_string(&history).unwrap();
    let back: Vec<FrostmanState> = serde_json::from_str(&json).unwrap();
    assert_eq!(back.len(), history.len());
    assert_eq!(back[0].durations, history[0].durations);
    assert_eq!(back[0].gamma, history[0].gamma);
}
