//! Monte Carlo checks of the two-sided bounds on drifted Brownian densities.
//!
//! Two tools: an Euler–Maruyama histogram under a bounded drift, compared
//! bin by bin with the bin-averaged bounds, and an exact sampler for the
//! extremal sign drift, which should attain the bounds at its target.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::drift_bound_1d;
use crate::error::{require_positive, Error, Result};
use crate::sde::{path_rng, PathRng};
use crate::special::integrate;

/// Bounded one-dimensional drift for the histogram run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SandwichDrift {
    /// `C · sgn(target - x)`.
    SignToward { target: f64 },
    /// `C · sin(k x + phase)`.
    Sine { wavenumber: f64, phase: f64 },
}

impl SandwichDrift {
    #[inline]
    fn eval(&self, c: f64, x: f64) -> f64 {
        match *self {
            SandwichDrift::SignToward { target } => {
                if x < target {
                    c
                } else if x > target {
                    -c
                } else {
                    0.0
                }
            }
            SandwichDrift::Sine { wavenumber, phase } => c * (wavenumber * x + phase).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandwichConfig {
    pub a: f64,
    /// Drift bound `C`.
    pub drift_bound: f64,
    pub drift: SandwichDrift,
    pub t: f64,
    pub start: f64,
    pub dt: f64,
    pub n_paths: u64,
    pub n_bins: usize,
    /// Two-sided normal quantile for the per-bin band (2.576 for 99%).
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_z() -> f64 {
    2.576
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinCheck {
    pub lo_edge: f64,
    pub hi_edge: f64,
    pub density: f64,
    pub se: f64,
    /// Bin averages of the bounds.
    pub lower: f64,
    pub upper: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub bins: Vec<BinCheck>,
    /// Fraction of paths that landed outside the histogram range.
    pub outside: f64,
}

impl SandwichReport {
    pub fn all_within(&self) -> bool {
        self.bins.iter().all(|b| b.within)
    }
}

/// Histogram of `X_t` for `dX = b(X) dt + √a dW`, `|b| <= C`, against the
/// bin-averaged lower and upper bounds.
pub fn drift_sandwich_histogram(cfg: &SandwichConfig) -> Result<SandwichReport> {
    require_positive("a", cfg.a)?;
    require_positive("t", cfg.t)?;
    require_positive("dt", cfg.dt)?;
    if !(cfg.drift_bound >= 0.0) {
        return Err(Error::config("drift_bound", "must be >= 0"));
    }
    if cfg.n_bins == 0 || cfg.n_paths < 100 {
        return Err(Error::config(
            "n_paths",
            "need at least 100 paths and one bin",
        ));
    }
    let half = 4.0 * (cfg.a * cfg.t).sqrt() + cfg.drift_bound * cfg.t;
    let (lo, hi) = (cfg.start - half, cfg.start + half);
    let width = (hi - lo) / cfg.n_bins as f64;
    let steps = (cfg.t / cfg.dt).ceil() as u64;
    let h = cfg.t / steps as f64;
    let sq = (cfg.a * h).sqrt();
    const CHUNK: u64 = 4096;
    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let partial: Vec<Vec<u64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; cfg.n_bins + 1];
            for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_paths) {
                let mut rng = path_rng(cfg.seed, i);
                let mut x = cfg.start;
                for _ in 0..steps {
                    let z: f64 = rng.sample(StandardNormal);
                    x += cfg.drift.eval(cfg.drift_bound, x) * h + sq * z;
                }
                let k = ((x - lo) / width).floor();
                if k >= 0.0 && (k as usize) < cfg.n_bins {
                    counts[k as usize] += 1;
                } else {
                    counts[cfg.n_bins] += 1;
                }
            }
            counts
        })
        .collect();
    let mut counts = vec![0u64; cfg.n_bins + 1];
    for p in partial {
        for (c, v) in counts.iter_mut().zip(p) {
            *c += v;
        }
    }
    let n = cfg.n_paths as f64;
    let mut bins = Vec::with_capacity(cfg.n_bins);
    for (k, &count) in counts[..cfg.n_bins].iter().enumerate() {
        let e0 = lo + k as f64 * width;
        let e1 = e0 + width;
        let avg = |sign: f64| -> f64 {
            let f = |x: f64| drift_bound_1d(x - cfg.start, cfg.a, cfg.t, cfg.drift_bound, sign);
            // the bounds have a kink at the start point
            let v = if e0 < cfg.start && cfg.start < e1 {
                integrate(f, e0, cfg.start, 1e-10, 0.0) + integrate(f, cfg.start, e1, 1e-10, 0.0)
            } else {
                integrate(f, e0, e1, 1e-10, 0.0)
            };
            v / width
        };
        let lower = avg(-1.0);
        let upper = avg(1.0);
        let p = count as f64 / n;
        // an empty bin still carries one count's worth of uncertainty
        let se = (p.max(1.0 / n) * (1.0 - p) / n).sqrt() / width;
        let density = p / width;
        bins.push(BinCheck {
            lo_edge: e0,
            hi_edge: e1,
            density,
            se,
            lower,
            upper,
            within: density + cfg.z * se >= lower && density - cfg.z * se <= upper,
        });
    }
    Ok(SandwichReport {
        bins,
        outside: counts[cfg.n_bins] as f64 / n,
    })
}

/// Exact draw of `|X_t - target|` for `dX = ±C sgn(target - X) dt + √a dW`
/// started at distance `y0`: a reflected Brownian motion with drift `∓C`.
/// Uses the endpoint of the free motion and the minimum of the Brownian
/// bridge between its endpoints.
pub fn sample_extremal_distance(
    y0: f64,
    a: f64,
    c: f64,
    t: f64,
    toward: bool,
    rng: &mut PathRng,
) -> f64 {
    let drift = if toward { -c } else { c };
    let g: f64 = rng.sample(StandardNormal);
    let z = y0 + drift * t + (a * t).sqrt() * g;
    let u: f64 = 1.0 - rng.random::<f64>();
    let m = 0.5 * (y0 + z - ((z - y0).powi(2) - 2.0 * a * t * u.ln()).sqrt());
    z + (-m).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationCheck {
    pub delta: f64,
    /// Drift toward the target (upper bound) or away (lower bound).
    pub toward: bool,
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    /// `(estimate - bound) / se`.
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub checks: Vec<SaturationCheck>,
}

impl SaturationReport {
    pub fn all_within(&self, k: f64) -> bool {
        self.checks.iter().all(|c| c.z_score.abs() <= k)
    }
}

/// Density at the target under the extremal drifts, from the fraction of
/// samples within `half_width` of it, against the bound the drift attains.
pub fn extremal_saturation(
    a: f64,
    c: f64,
    t: f64,
    deltas: &[f64],
    n_samples: u64,
    half_width: f64,
    seed: u64,
) -> Result<SaturationReport> {
    require_positive("a", a)?;
    require_positive("t", t)?;
    require_positive("half_width", half_width)?;
    if !(c >= 0.0) || n_samples < 100 {
        return Err(Error::config(
            "n_samples",
            "need C >= 0 and at least 100 samples",
        ));
    }
    let mut checks = Vec::new();
    let mut stream = 0u64;
    for &delta in deltas {
        for toward in [true, false] {
            let base = stream;
            stream += 1;
            const CHUNK: u64 = 1 << 16;
            let hits: u64 = (0..n_samples.div_ceil(CHUNK))
                .into_par_iter()
                .map(|k| {
                    let mut rng = path_rng(seed, (base << 32) + k);
                    let m = CHUNK.min(n_samples - k * CHUNK);
                    (0..m)
                        .filter(|_| {
                            sample_extremal_distance(delta.abs(), a, c, t, toward, &mut rng)
                                < half_width
                        })
                        .count() as u64
                })
                .sum();
            let n = n_samples as f64;
            let p = hits as f64 / n;
            // P(|X - target| < w) / (2w)
            let estimate = p / (2.0 * half_width);
            let se = (p.max(1.0 / n) * (1.0 - p) / n).sqrt() / (2.0 * half_width);
            let bound = drift_bound_1d(delta, a, t, c, if toward { 1.0 } else { -1.0 });
            checks.push(SaturationCheck {
                delta,
                toward,
                estimate,
                se,
                bound,
                z_score: (estimate - bound) / se,
            });
        }
    }
    Ok(SaturationReport { checks })
}
