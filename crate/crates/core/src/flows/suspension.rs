//! Mapping-torus (constant-roof suspension) flows over two base systems:
//! the full 2-shift and a hyperbolic toral automorphism.
//!
//! The metric averages the product distance max(d_base, |Δh|) along one
//! roof period of the flow:
//!
//!   d(p, q) = (1/roof) ∫_0^roof max(d_base(base_τ p, base_τ q), |Δh_τ|) dτ
//!
//! Every φ_τ is a bijection of the point set, so each integrand is a
//! pulled-back metric and the average is again a metric — symmetry and the
//! triangle inequality hold exactly, which a seam-lifted product metric
//! does not achieve for expansive bases. The averaging also smooths the
//! roof seam: points identified by (a, roof) ~ (Ta, 0) read as close.
//! The integrand is piecewise constant between the two roof-crossing
//! times, so the integral is evaluated in closed form from at most three
//! base distances.

use rand::{Rng, RngCore};
use std::sync::Arc;

use super::{circle_dist, wrap_unit, Flow, Point};

/// How far a random shift backing extends beyond the visible window; covers
/// orbit shifts for flow times up to roughly this many roof crossings.
const BACKING_PAD: usize = 40;

/// Closed-form flow-averaged product distance. `base_dist(ka, kb)` must
/// return the base distance after `ka` and `kb` roof crossings.
fn averaged_product_metric(
    ha: f64,
    hb: f64,
    roof: f64,
    base_dist: impl Fn(i64, i64) -> f64,
) -> f64 {
    let ca = roof - ha;
    let cb = roof - hb;
    let (m1, m2) = if ca <= cb { (ca, cb) } else { (cb, ca) };
    let dh = ha - hb;
    let mut total = 0.0;
    if m1 > 0.0 {
        total += m1 * base_dist(0, 0).max(dh.abs());
    }
    if m2 > m1 {
        // Exactly one side has crossed.
        let (ka, kb) = if ca <= cb { (1, 0) } else { (0, 1) };
        let delta = dh - (ka - kb) as f64 * roof;
        total += (m2 - m1) * base_dist(ka, kb).max(delta.abs());
    }
    if roof > m2 {
        total += (roof - m2) * base_dist(1, 1).max(dh.abs());
    }
    total / roof
}

/// Threshold form of [`averaged_product_metric`]: the height component
/// alone lower-bounds the integral and rejects most far pairs without any
/// base-distance work; otherwise the accumulation mirrors the full metric.
fn averaged_product_leq(
    ha: f64,
    hb: f64,
    roof: f64,
    tol: f64,
    base_dist: impl Fn(i64, i64) -> f64,
) -> bool {
    let ca = roof - ha;
    let cb = roof - hb;
    let (m1, m2) = if ca <= cb { (ca, cb) } else { (cb, ca) };
    let dh = ha - hb;
    let (ka, kb) = if ca <= cb { (1, 0) } else { (0, 1) };
    let delta = dh - (ka - kb) as f64 * roof;
    let height_part = m1 * dh.abs() + (m2 - m1) * delta.abs() + (roof - m2) * dh.abs();
    if height_part / roof > tol {
        return false;
    }
    let mut total = 0.0;
    if m1 > 0.0 {
        total += m1 * base_dist(0, 0).max(dh.abs());
        if total / roof > tol {
            return false;
        }
    }
    if m2 > m1 {
        total += (m2 - m1) * base_dist(ka, kb).max(delta.abs());
        if total / roof > tol {
            return false;
        }
    }
    if roof > m2 {
        total += (roof - m2) * base_dist(1, 1).max(dh.abs());
    }
    total / roof <= tol
}

/// Suspension of the full two-sided 2-shift with a constant roof.
///
/// Base points are symbol windows of radius `window_radius` (default 16);
/// the base metric is the cylinder metric 2^{-k} truncated at the window,
/// where k is the smallest radius of disagreement. Agreement on the whole
/// window reads as distance 0.
#[derive(Clone, Debug)]
pub struct ShiftSuspension {
    window: usize,
    roof: f64,
    name: String,
}

impl ShiftSuspension {
    pub fn new(window_radius: usize, roof: f64) -> Self {
        assert!(roof > 0.0, "roof must be positive");
        ShiftSuspension {
            window: window_radius,
            roof,
            name: format!("shift-suspension(w={window_radius},roof={roof})"),
        }
    }

    pub fn window_radius(&self) -> usize {
        self.window
    }

    pub fn roof(&self) -> f64 {
        self.roof
    }

    fn symbol(seq: &[u8], origin: i64, i: i64) -> u8 {
        let idx = origin + i;
        if idx < 0 || idx as usize >= seq.len() {
            0
        } else {
            seq[idx as usize]
        }
    }

    /// Cylinder distance between the windows centered at `oa` and `ob`.
    fn base_dist(&self, sa: &[u8], oa: i64, sb: &[u8], ob: i64) -> f64 {
        if Self::symbol(sa, oa, 0) != Self::symbol(sb, ob, 0) {
            return 1.0;
        }
        for r in 1..=self.window as i64 {
            if Self::symbol(sa, oa, r) != Self::symbol(sb, ob, r)
                || Self::symbol(sa, oa, -r) != Self::symbol(sb, ob, -r)
            {
                return 0.5_f64.powi(r as i32);
            }
        }
        0.0
    }
}

impl Flow for ShiftSuspension {
    fn name(&self) -> &str {
        &self.name
    }

    fn flow(&self, p: &Point, t: f64) -> Point {
        match p {
            Point::Shift {
                seq,
                origin,
                height,
            } => {
                let total = height + t;
                let k = (total / self.roof).floor();
                Point::Shift {
                    seq: Arc::clone(seq),
                    origin: origin + k as i64,
                    height: total - k * self.roof,
                }
            }
            _ => panic!("shift suspension flow applied to a foreign point"),
        }
    }

    fn metric(&self, a: &Point, b: &Point) -> f64 {
        match (a, b) {
            (
                Point::Shift {
                    seq: sa,
                    origin: oa,
                    height: ha,
                },
                Point::Shift {
                    seq: sb,
                    origin: ob,
                    height: hb,
                },
            ) => averaged_product_metric(*ha, *hb, self.roof, |ka, kb| {
                self.base_dist(sa, oa + ka, sb, ob + kb)
            }),
            _ => panic!("shift suspension metric applied to foreign points"),
        }
    }

    fn metric_leq(&self, a: &Point, b: &Point, tol: f64) -> bool {
        match (a, b) {
            (
                Point::Shift {
                    seq: sa,
                    origin: oa,
                    height: ha,
                },
                Point::Shift {
                    seq: sb,
                    origin: ob,
                    height: hb,
                },
            ) => averaged_product_leq(*ha, *hb, self.roof, tol, |ka, kb| {
                self.base_dist(sa, oa + ka, sb, ob + kb)
            }),
            _ => panic!("shift suspension metric applied to foreign points"),
        }
    }

    fn diameter_bound(&self) -> f64 {
        1.0_f64.max(self.roof)
    }

    fn min_displacement(&self) -> f64 {
        // Vertical motion at unit speed: at τ = min(roof, 1)/2 every point
        // is at least that far from itself.
        0.5 * self.roof.min(1.0) * 0.99
    }

    fn owns(&self, x: &Point) -> bool {
        matches!(x, Point::Shift { .. })
    }

    fn random_point(&self, rng: &mut dyn RngCore) -> Point {
        let len = 2 * (self.window + BACKING_PAD) + 1;
        let seq: Vec<u8> = (0..len).map(|_| (rng.next_u32() & 1) as u8).collect();
        Point::Shift {
            seq: Arc::new(seq),
            origin: (self.window + BACKING_PAD) as i64,
            height: rng.gen::<f64>() * self.roof,
        }
    }

    fn random_point_near(&self, x: &Point, radius: f64, rng: &mut dyn RngCore) -> Point {
        match x {
            Point::Shift {
                seq,
                origin,
                height,
            } => {
                // Keep symbols within the agreement radius that bounds the
                // averaged base term by radius/2 across both window shifts,
                // resample the rest, then jitter along the flow.
                let keep = if radius >= 1.0 {
                    0
                } else {
                    ((4.0 / radius).log2().ceil() as i64).max(0)
                };
                let len = 2 * (self.window + BACKING_PAD) + 1;
                let new_origin = (self.window + BACKING_PAD) as i64;
                let mut new_seq = Vec::with_capacity(len);
                for j in 0..len as i64 {
                    let i = j - new_origin;
                    if i.abs() <= keep {
                        new_seq.push(Self::symbol(seq, *origin, i));
                    } else {
                        new_seq.push((rng.next_u32() & 1) as u8);
                    }
                }
                let p = Point::Shift {
                    seq: Arc::new(new_seq),
                    origin: new_origin,
                    height: *height,
                };
                let u = rng.gen_range(-0.2 * radius..=0.2 * radius);
                self.flow(&p, u)
            }
            _ => panic!("shift sampler applied to a foreign point"),
        }
    }
}

/// Suspension of the toral automorphism with matrix [[2,1],[1,1]] under a
/// constant roof. Base entropy is the log of the leading eigenvalue.
#[derive(Clone, Debug)]
pub struct CatSuspension {
    roof: f64,
    name: String,
}

impl CatSuspension {
    pub fn new(roof: f64) -> Self {
        assert!(roof > 0.0, "roof must be positive");
        CatSuspension {
            roof,
            name: format!("cat-suspension(roof={roof})"),
        }
    }

    pub fn roof(&self) -> f64 {
        self.roof
    }

    fn apply_base(mut x: f64, mut y: f64, k: i64) -> (f64, f64) {
        if k >= 0 {
            for _ in 0..k {
                let nx = wrap_unit(2.0 * x + y);
                let ny = wrap_unit(x + y);
                x = nx;
                y = ny;
            }
        } else {
            for _ in 0..(-k) {
                let nx = wrap_unit(x - y);
                let ny = wrap_unit(-x + 2.0 * y);
                x = nx;
                y = ny;
            }
        }
        (x, y)
    }

    fn base_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
        circle_dist(a.0, b.0).max(circle_dist(a.1, b.1))
    }
}

impl Flow for CatSuspension {
    fn name(&self) -> &str {
        &self.name
    }

    fn flow(&self, p: &Point, t: f64) -> Point {
        match p {
            Point::Cat { x, y, height } => {
                let total = height + t;
                let k = (total / self.roof).floor();
                let (nx, ny) = Self::apply_base(*x, *y, k as i64);
                Point::Cat {
                    x: nx,
                    y: ny,
                    height: total - k * self.roof,
                }
            }
            _ => panic!("cat suspension flow applied to a foreign point"),
        }
    }

    fn metric(&self, a: &Point, b: &Point) -> f64 {
        match (a, b) {
            (
                Point::Cat {
                    x: ax,
                    y: ay,
                    height: ha,
                },
                Point::Cat {
                    x: bx,
                    y: by,
                    height: hb,
                },
            ) => {
                let pa1 = Self::apply_base(*ax, *ay, 1);
                let pb1 = Self::apply_base(*bx, *by, 1);
                averaged_product_metric(*ha, *hb, self.roof, |ka, kb| {
                    let pa = if ka == 0 { (*ax, *ay) } else { pa1 };
                    let pb = if kb == 0 { (*bx, *by) } else { pb1 };
                    Self::base_dist(pa, pb)
                })
            }
            _ => panic!("cat suspension metric applied to foreign points"),
        }
    }

    fn metric_leq(&self, a: &Point, b: &Point, tol: f64) -> bool {
        match (a, b) {
            (
                Point::Cat {
                    x: ax,
                    y: ay,
                    height: ha,
                },
                Point::Cat {
                    x: bx,
                    y: by,
                    height: hb,
                },
            ) => averaged_product_leq(*ha, *hb, self.roof, tol, |ka, kb| {
                let pa = if ka == 0 {
                    (*ax, *ay)
                } else {
                    Self::apply_base(*ax, *ay, 1)
                };
                let pb = if kb == 0 {
                    (*bx, *by)
                } else {
                    Self::apply_base(*bx, *by, 1)
                };
                Self::base_dist(pa, pb)
            }),
            _ => panic!("cat suspension metric applied to foreign points"),
        }
    }

    fn diameter_bound(&self) -> f64 {
        0.5_f64.max(self.roof)
    }

    fn min_displacement(&self) -> f64 {
        0.5 * self.roof.min(1.0) * 0.99
    }

    fn owns(&self, x: &Point) -> bool {
        matches!(x, Point::Cat { .. })
    }

    fn random_point(&self, rng: &mut dyn RngCore) -> Point {
        Point::Cat {
            x: rng.gen::<f64>(),
            y: rng.gen::<f64>(),
            height: rng.gen::<f64>() * self.roof,
        }
    }

    fn random_point_near(&self, x: &Point, radius: f64, rng: &mut dyn RngCore) -> Point {
        match x {
            Point::Cat {
                x: px,
                y: py,
                height,
            } => {
                // One base step expands offsets by at most 3.
                let r = (radius / 8.0).min(0.5);
                let p = Point::Cat {
                    x: wrap_unit(px + rng.gen_range(-r..=r)),
                    y: wrap_unit(py + rng.gen_range(-r..=r)),
                    height: *height,
                };
                let u = rng.gen_range(-0.2 * radius..=0.2 * radius);
                self.flow(&p, u)
            }
            _ => panic!("cat sampler applied to a foreign point"),
        }
    }
}
