//! Two-particle path simulators and first-collision detection.
//!
//! Every path owns a ChaCha8 stream derived from `(seed, path index)`, so
//! results do not depend on how paths are scheduled across threads.

mod brownian;
mod fields;
mod ou;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use brownian::{step_brownian_pair, BrownianState, BrownianStepping, Horizon, PairConfig};
pub use fields::{DriftField, ScalarField};
pub use ou::{
    ou_increment_moments, step_ou_pair_exact, OuInit, OuMoments, OuPairConfig, OuState, OuStepping,
};

use crate::error::Result;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 8;

pub type Point = [f64; MAX_DIM];
pub type PathRng = ChaCha8Rng;

/// Independent stream for path `index` under master `seed`.
pub fn path_rng(seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub(crate) fn to_point(v: &[f64]) -> Point {
    let mut p = [0.0; MAX_DIM];
    p[..v.len()].copy_from_slice(v);
    p
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionOutcome {
    pub hit: bool,
    /// Budget exhausted before the path resolved.
    pub censored: bool,
    /// Hit decided by the exact escape law at large separation; `t_hit` and
    /// `x_hit` are then undefined (NaN).
    pub escaped: bool,
    pub t_hit: f64,
    /// Mass-weighted centre of the pair at the hit.
    pub x_hit: Vec<f64>,
    /// Recorded separation at the hit.
    pub separation: f64,
    pub steps: u64,
    pub min_distance: f64,
}

impl CollisionOutcome {
    pub(crate) fn miss(steps: u64, min_distance: f64, censored: bool) -> Self {
        Self {
            hit: false,
            censored,
            escaped: false,
            t_hit: f64::NAN,
            x_hit: Vec::new(),
            separation: f64::NAN,
            steps,
            min_distance,
        }
    }
}

/// Anything that can simulate one path to its first collision.
pub trait CollisionExperiment: Sync {
    fn dim(&self) -> usize;
    fn collision_radius(&self) -> f64;
    fn seed(&self) -> u64;
    fn run_path(&self, rng: &mut PathRng) -> Result<CollisionOutcome>;
}

pub fn run_first_collision<E: CollisionExperiment + ?Sized>(
    experiment: &E,
    rng: &mut PathRng,
) -> Result<CollisionOutcome> {
    experiment.run_path(rng)
}

/// Probability that a Brownian bridge in the radial gap crosses zero:
/// `exp(-2 g₀ g₁ / (a_eff dt))` with `gᵢ = |xᵢ| - r`. One-dimensional formula
/// applied to the radial distance, which is an approximation for `d >= 2`.
#[inline]
pub fn bridge_crossing_probability(
    dist_before: f64,
    dist_after: f64,
    a_eff: f64,
    dt: f64,
    r: f64,
) -> f64 {
    let g0 = dist_before - r;
    let g1 = dist_after - r;
    if g0 <= 0.0 || g1 <= 0.0 {
        return 1.0;
    }
    let expo = 2.0 * g0 * g1 / (a_eff * dt);
    if expo > 40.0 {
        0.0
    } else {
        (-expo).exp()
    }
}

/// Bernoulli draw on [`bridge_crossing_probability`]. No randomness is
/// consumed when the probability is below `e^{-40}`.
pub fn bridge_collision_check<R: Rng + ?Sized>(
    x_before: &[f64],
    x_after: &[f64],
    a_eff: f64,
    dt: f64,
    r: f64,
    rng: &mut R,
) -> bool {
    let p = bridge_crossing_probability(norm(x_before), norm(x_after), a_eff, dt, r);
    if p >= 1.0 {
        true
    } else if p == 0.0 {
        false
    } else {
        rng.random::<f64>() < p
    }
}

/// Smallest `s ∈ [0, 1]` with `|p + s(q - p)| <= r`, if any.
pub(crate) fn segment_entry(p: &[f64], q: &[f64], r: f64) -> Option<f64> {
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = -r * r;
    for (pi, qi) in p.iter().zip(q) {
        let di = qi - pi;
        a += di * di;
        b += 2.0 * pi * di;
        c += pi * pi;
    }
    if c <= 0.0 {
        return Some(0.0);
    }
    if a == 0.0 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    // stable smaller root
    let sq = disc.sqrt();
    let s = if b < 0.0 {
        (2.0 * c) / (-b + sq)
    } else {
        (-b - sq) / (2.0 * a)
    };
    (0.0..=1.0).contains(&s).then_some(s)
}

/// Builds the hit record at fraction `s` of a step, with the separation
/// projected onto the collision sphere.
#[allow(clippy::too_many_arguments)]
pub(crate) fn hit_record(
    d: usize,
    x1a: &Point,
    x1b: &Point,
    x2a: &Point,
    x2b: &Point,
    s: f64,
    t: f64,
    dt: f64,
    weights: (f64, f64),
    r: f64,
    steps: u64,
    min_distance: f64,
) -> CollisionOutcome {
    let (y1, y2) = weights;
    let mut centre = Vec::with_capacity(d);
    for k in 0..d {
        let p1 = x1a[k] + s * (x1b[k] - x1a[k]);
        let p2 = x2a[k] + s * (x2b[k] - x2a[k]);
        centre.push((y1 * p1 + y2 * p2) / (y1 + y2));
    }
    CollisionOutcome {
        hit: true,
        censored: false,
        escaped: false,
        t_hit: t + s * dt,
        x_hit: centre,
        separation: r,
        steps,
        min_distance: min_distance.min(r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bridge_probability_limits() {
        assert_eq!(bridge_crossing_probability(1.0, 1.0, 1.0, 1e-3, 0.01), 0.0);
        assert_eq!(bridge_crossing_probability(1.0, 0.01, 1.0, 1e-3, 0.01), 1.0);
        let p = bridge_crossing_probability(0.02, 0.03, 1.0, 1e-3, 0.01);
        assert!((p - (-2.0 * 0.01 * 0.02 / 1e-3f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn segment_entry_finds_first_crossing() {
        let s = segment_entry(&[-2.0, 0.5], &[2.0, 0.5], 1.0).unwrap();
        let x = -2.0 + 4.0 * s;
        assert!((x * x + 0.25 - 1.0).abs() < 1e-12 && x < 0.0);
        assert!(segment_entry(&[-2.0, 1.5], &[2.0, 1.5], 1.0).is_none());
        assert!(segment_entry(&[3.0, 0.0], &[2.0, 0.0], 1.0).is_none());
    }

    #[test]
    fn streams_are_independent_of_order() {
        let mut a = path_rng(7, 3);
        let mut b = path_rng(7, 3);
        let mut c = path_rng(7, 4);
        let (xa, xb, xc): (u64, u64, u64) = (a.random(), b.random(), c.random());
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }
}
