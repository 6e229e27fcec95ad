use rand::{Rng, RngCore};

use super::{circle_dist, wrap_unit, Flow, Point};

/// Linear flow on the 2-torus: φ_t(x) = x + t·v mod 1, with the max of
/// the per-coordinate circle distances as metric.
///
/// Irrational direction slopes give minimal, zero-entropy flows; any
/// nonzero direction is fixed-point free.
#[derive(Clone, Debug)]
pub struct TorusLinear {
    vx: f64,
    vy: f64,
    name: String,
    min_disp: f64,
}

impl TorusLinear {
    pub fn new(vx: f64, vy: f64) -> Self {
        assert!(
            vx != 0.0 || vy != 0.0,
            "torus linear flow needs a nonzero direction"
        );
        // Displacement is translation invariant, so the unit-time bound is
        // exact: max over the τ grid of the shifted-lattice distance.
        let min_disp = (1..=10)
            .map(|k| {
                let tau = k as f64 * 0.1;
                circle_dist(tau * vx, 0.0).max(circle_dist(tau * vy, 0.0))
            })
            .fold(0.0, f64::max);
        TorusLinear {
            vx,
            vy,
            name: format!("torus-linear({vx},{vy})"),
            min_disp,
        }
    }
}

impl Flow for TorusLinear {
    fn name(&self) -> &str {
        &self.name
    }

    fn flow(&self, p: &Point, t: f64) -> Point {
        match p {
            Point::Torus { x, y } => Point::Torus {
                x: wrap_unit(x + t * self.vx),
                y: wrap_unit(y + t * self.vy),
            },
            _ => panic!("torus flow applied to a non-torus point"),
        }
    }

    fn metric(&self, a: &Point, b: &Point) -> f64 {
        match (a, b) {
            (Point::Torus { x: ax, y: ay }, Point::Torus { x: bx, y: by }) => {
                circle_dist(*ax, *bx).max(circle_dist(*ay, *by))
            }
            _ => panic!("torus metric applied to non-torus points"),
        }
    }

    fn diameter_bound(&self) -> f64 {
        0.5
    }

    fn min_displacement(&self) -> f64 {
        self.min_disp
    }

    fn owns(&self, x: &Point) -> bool {
        matches!(x, Point::Torus { .. })
    }

    fn random_point(&self, rng: &mut dyn RngCore) -> Point {
        Point::Torus {
            x: rng.gen::<f64>(),
            y: rng.gen::<f64>(),
        }
    }

    fn random_point_near(&self, x: &Point, radius: f64, rng: &mut dyn RngCore) -> Point {
        match x {
            Point::Torus { x: px, y: py } => {
                let r = radius.min(0.5);
                Point::Torus {
                    x: wrap_unit(px + rng.gen_range(-r..=r)),
                    y: wrap_unit(py + rng.gen_range(-r..=r)),
                }
            }
            _ => panic!("torus sampler applied to a non-torus point"),
        }
    }
}
