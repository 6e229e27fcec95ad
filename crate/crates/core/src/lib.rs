//! Numerical packing and Bowen topological entropy for fixed-point-free
//! flows, built on reparametrization balls.
//!
//! A reparametrization ball B(x,t,ε) collects the points whose orbit
//! segment over [0,t] stays ε-close to some monotone time-reparametrization
//! of the orbit segment of x — the flow analogue of a Bowen ball.
//! Membership is decided on a free-space grid ([`reparam`]). Disjoint
//! families of closed balls drive packing-entropy estimates ([`packing`]),
//! covers built from maximal packings drive Bowen estimates ([`covering`]),
//! and discrete measures with local entropies plus a finite-depth
//! Frostman-type construction supply the measure side of the variational
//! principle ([`measures`]).
//!
//! All estimators are deterministic given their seeds and safe to run
//! concurrently; flow evaluation is pure.

pub mod covering;
pub mod flows;
pub mod measures;
pub mod packing;
pub mod reparam;

pub use flows::{build_system, Flow, Point, SystemSpec};
