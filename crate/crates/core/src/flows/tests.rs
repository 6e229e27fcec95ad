use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn torus(vx: f64, vy: f64) -> TorusLinear {
    TorusLinear::new(vx, vy)
}

fn shift() -> ShiftSuspension {
    ShiftSuspension::new(16, 1.0)
}

fn cat() -> CatSuspension {
    CatSuspension::new(1.0)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn torus_identity_evaluation() {
    let sys = torus(1.0, 2.0_f64.sqrt());
    let p = Point::Torus { x: 0.0, y: 0.0 };
    let q = evaluate_flow(&sys, &p, 0.0).unwrap();
    assert_eq!(q, p);
}

#[test]
fn torus_half_step_wraps() {
    let sys = torus(1.0, 2.0_f64.sqrt());
    let p = Point::Torus { x: 0.0, y: 0.0 };
    let q = evaluate_flow(&sys, &p, 0.5).unwrap();
    match q {
        Point::Torus { x, y } => {
            assert!(close(x, 0.5, 1e-12));
            assert!(close(y, 0.5 * 2.0_f64.sqrt(), 1e-12));
        }
        _ => panic!("wrong chart"),
    }
}

#[test]
fn suspension_roof_crossing_shifts_the_word() {
    // (w, 0.8) flowed by 0.5 crosses the roof once: (σw, 0.3).
    let sys = shift();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = sys.random_point(&mut rng);
    let (seq, origin) = match &p {
        Point::Shift { seq, origin, .. } => (seq.clone(), *origin),
        _ => unreachable!(),
    };
    let fixed = Point::Shift {
        seq,
        origin,
        height: 0.8,
    };
    match evaluate_flow(&sys, &fixed, 0.5).unwrap() {
        Point::Shift {
            origin: o, height, ..
        } => {
            assert_eq!(o, origin + 1);
            assert!(close(height, 0.3, 1e-12));
        }
        _ => panic!("wrong chart"),
    }
    // No crossing below the roof.
    let low = Point::Shift {
        seq: match &p {
            Point::Shift { seq, .. } => seq.clone(),
            _ => unreachable!(),
        },
        origin,
        height: 0.2,
    };
    match evaluate_flow(&sys, &low, 0.5).unwrap() {
        Point::Shift {
            origin: o, height, ..
        } => {
            assert_eq!(o, origin);
            assert!(close(height, 0.7, 1e-12));
        }
        _ => panic!("wrong chart"),
    }
}

#[test]
fn non_finite_time_is_rejected() {
    let sys = torus(1.0, 0.0);
    let p = Point::Torus { x: 0.2, y: 0.2 };
    assert!(matches!(
        evaluate_flow(&sys, &p, f64::NAN),
        Err(FlowError::NonFiniteTime(_))
    ));
    assert!(matches!(
        evaluate_flow(&sys, &p, f64::INFINITY),
        Err(FlowError::NonFiniteTime(_))
    ));
}

#[test]
fn chart_mismatch_is_rejected() {
    let sys = torus(1.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = shift().random_point(&mut rng);
    assert!(matches!(
        evaluate_flow(&sys, &p, 1.0),
        Err(FlowError::ChartMismatch { .. })
    ));
}

#[test]
fn trajectory_grid_exact_division() {
    let sys = torus(1.0, 0.0);
    let p = Point::Torus { x: 0.0, y: 0.0 };
    let traj = sample_trajectory(&sys, &p, 1.0, 0.5).unwrap();
    assert_eq!(traj.times, vec![0.0, 0.5, 1.0]);
    assert_eq!(traj.points.len(), 3);
}

#[test]
fn trajectory_grid_clamps_last_step() {
    let sys = torus(1.0, 0.0);
    let p = Point::Torus { x: 0.0, y: 0.0 };
    let traj = sample_trajectory(&sys, &p, 1.0, 0.3).unwrap();
    assert_eq!(traj.times.len(), 5);
    assert!(close(traj.times[3], 0.9, 1e-12));
    assert!(close(traj.times[4], 1.0, 1e-12));
}

#[test]
fn trajectory_matches_direct_arithmetic() {
    let sys = torus(0.0, 2.0_f64.sqrt());
    let p = Point::Torus { x: 0.0, y: 0.0 };
    let traj = sample_trajectory(&sys, &p, 2.0, 1.0).unwrap();
    let expect = [0.0, 2.0_f64.sqrt() % 1.0, (2.0 * 2.0_f64.sqrt()) % 1.0];
    for (pt, &ey) in traj.points.iter().zip(&expect) {
        match pt {
            Point::Torus { x, y } => {
                assert!(close(*x, 0.0, 1e-12));
                assert!(close(*y, ey, 1e-9));
            }
            _ => panic!("wrong chart"),
        }
    }
}

#[test]
fn trajectory_rejects_bad_step() {
    let sys = torus(1.0, 0.0);
    let p = Point::Torus { x: 0.0, y: 0.0 };
    assert!(matches!(
        sample_trajectory(&sys, &p, 1.0, 0.0),
        Err(FlowError::InvalidStep { .. })
    ));
    assert!(matches!(
        sample_trajectory(&sys, &p, 1.0, -0.1),
        Err(FlowError::InvalidStep { .. })
    ));
}

#[test]
fn trajectory_points_revalidate() {
    let sys = cat();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = sys.random_point(&mut rng);
    let traj = sample_trajectory(&sys, &p, 5.0, 0.7).unwrap();
    for (s, q) in traj.times.iter().zip(&traj.points) {
        let direct = sys.flow(&traj.base, *s);
        assert!(sys.metric(&direct, q) <= 1e-9);
    }
}

#[test]
fn certify_torus_unit_direction() {
    let sys = torus(1.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples: Vec<Point> = (0..32).map(|_| sys.random_point(&mut rng)).collect();
    let disp = certify_fixed_point_free(&sys, &samples).unwrap();
    assert!(disp >= 0.25, "displacement {disp} below 0.25");
}

#[test]
fn certify_suspension_vertical_motion() {
    let sys = shift();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let samples: Vec<Point> = (0..32).map(|_| sys.random_point(&mut rng)).collect();
    let disp = certify_fixed_point_free(&sys, &samples).unwrap();
    assert!(disp > 0.0);
    assert!(disp >= sys.min_displacement());
}

/// Degenerate test double: the identity "flow" on the torus chart.
struct ConstantFlow;

impl Flow for ConstantFlow {
    fn name(&self) -> &str {
        "constant"
    }
    fn flow(&self, x: &Point, _t: f64) -> Point {
        x.clone()
    }
    fn metric(&self, a: &Point, b: &Point) -> f64 {
        match (a, b) {
            (Point::Torus { x: ax, y: ay }, Point::Torus { x: bx, y: by }) => {
                circle_dist(*ax, *bx).max(circle_dist(*ay, *by))
            }
            _ => panic!("chart"),
        }
    }
    fn diameter_bound(&self) -> f64 {
        0.5
    }
    fn min_displacement(&self) -> f64 {
        0.0
    }
    fn owns(&self, x: &Point) -> bool {
        matches!(x, Point::Torus { .. })
    }
    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point {
        use rand::Rng;
        Point::Torus {
            x: rng.gen(),
            y: rng.gen(),
        }
    }
    fn random_point_near(&self, x: &Point, _radius: f64, _rng: &mut dyn rand::RngCore) -> Point {
        x.clone()
    }
}

#[test]
fn certify_flags_constant_flow() {
    let sys = ConstantFlow;
    let samples = vec![Point::Torus { x: 0.1, y: 0.4 }];
    assert!(matches!(
        certify_fixed_point_free(&sys, &samples),
        Err(FlowError::FixedPointSuspected { .. })
    ));
}

#[test]
fn certify_rejects_empty_samples() {
    let sys = torus(1.0, 0.0);
    assert!(matches!(
        certify_fixed_point_free(&sys, &[]),
        Err(FlowError::EmptySamples)
    ));
}

fn all_systems() -> Vec<Box<dyn Flow>> {
    vec![
        Box::new(torus(1.0, 2.0_f64.sqrt())),
        Box::new(shift()),
        Box::new(cat()),
    ]
}

#[test]
fn metric_axioms_on_random_triples() {
    for sys in all_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xa1);
        for _ in 0..1000 {
            let a = sys.random_point(&mut rng);
            let b = sys.random_point(&mut rng);
            let c = sys.random_point(&mut rng);
            let dab = sys.metric(&a, &b);
            let dba = sys.metric(&b, &a);
            assert_eq!(dab, dba, "symmetry must be exact on {}", sys.name());
            assert!(dab >= 0.0);
            assert!(sys.metric(&a, &a) == 0.0);
            let dac = sys.metric(&a, &c);
            let dcb = sys.metric(&c, &b);
            assert!(
                dab <= dac + dcb + 1e-9,
                "triangle violated on {}: {dab} > {dac} + {dcb}",
                sys.name()
            );
            assert!(dab <= sys.diameter_bound() + 1e-12);
        }
    }
}

#[test]
fn flow_group_law_on_random_times() {
    for sys in all_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xb2);
        for _ in 0..1000 {
            use rand::Rng;
            let x = sys.random_point(&mut rng);
            let s = rng.gen_range(-10.0..10.0);
            let t = rng.gen_range(-10.0..10.0);
            let two_step = sys.flow(&sys.flow(&x, s), t);
            let one_step = sys.flow(&x, s + t);
            let gap = sys.metric(&two_step, &one_step);
            assert!(
                gap <= 1e-6,
                "group law violated on {} at s={s}, t={t}: gap {gap}",
                sys.name()
            );
        }
    }
}

#[test]
fn builtins_pass_the_fixed_point_check() {
    for sys in all_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc3);
        let samples: Vec<Point> = (0..64).map(|_| sys.random_point(&mut rng)).collect();
        let disp = certify_fixed_point_free(sys.as_ref(), &samples)
            .unwrap_or_else(|e| panic!("{} failed: {e}", sys.name()));
        assert!(disp >= sys.min_displacement() * 0.99);
    }
}

#[test]
fn near_sampler_stays_near() {
    for sys in all_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xd4);
        for _ in 0..200 {
            let x = sys.random_point(&mut rng);
            for radius in [0.3, 0.05, 0.01] {
                let y = sys.random_point_near(&x, radius, &mut rng);
                let d = sys.metric(&x, &y);
                assert!(
                    d <= radius + 1e-9,
                    "{}: sampled at distance {d} > {radius}",
                    sys.name()
                );
            }
        }
    }
}

#[test]
fn system_spec_round_trip() {
    let specs = vec![
        SystemSpec::TorusLinear {
            direction: [1.0, 2.0_f64.sqrt()],
        },
        SystemSpec::ShiftSuspension {
            window_radius: 16,
            roof: 1.0,
        },
        SystemSpec::CatSuspension { roof: 1.0 },
    ];
    for spec in specs {
        let json = serde_json::to_string(&spec).unwrap();
        let back: SystemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        build_system(&spec).unwrap();
    }
    assert!(build_system(&SystemSpec::TorusLinear {
        direction: [0.0, 0.0]
    })
    .is_err());
}
