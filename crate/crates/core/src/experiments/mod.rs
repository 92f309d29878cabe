//! Monte Carlo estimates of the scaled collision functionals, with the
//! analytic limit each one should approach.

mod functional;
mod periodic;
mod sandwich;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use functional::{
    ever_collide_probability, time_integrated_meeting, LimitProblem, Regime, TestFunction,
};
pub use periodic::{
    effective_diffusivity, experiment_periodic_drift, DiffusivityEstimate, PeriodicDriftConfig,
    PeriodicDriftReport, SweepPoint, Verdict,
};
pub use sandwich::{
    drift_sandwich_histogram, extremal_saturation, sample_extremal_distance, BinCheck,
    SandwichConfig, SandwichDrift, SandwichReport, SaturationCheck, SaturationReport,
};

use crate::error::{Error, Result};
use crate::sde::{
    path_rng, CollisionExperiment, CollisionOutcome, Horizon, OuPairConfig, PairConfig,
};

/// The particle system behind an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum System {
    /// Diffusing pair at stiffness `n` (only used for scaling).
    Brownian {
        pair: PairConfig,
        n: f64,
    },
    Ou {
        pair: OuPairConfig,
    },
}

impl System {
    fn experiment(&self) -> &dyn CollisionExperiment {
        match self {
            System::Brownian { pair, .. } => pair,
            System::Ou { pair } => pair,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            System::Brownian { pair, n } => {
                pair.validate()?;
                if !(*n > 0.0) {
                    return Err(Error::config("n", "stiffness must be > 0"));
                }
                Ok(())
            }
            System::Ou { pair } => pair.validate(),
        }
    }

    pub fn d(&self) -> usize {
        self.experiment().dim()
    }

    pub fn r_n(&self) -> f64 {
        self.experiment().collision_radius()
    }

    pub fn seed(&self) -> u64 {
        self.experiment().seed()
    }
}

/// A scaled functional: which theorem, which system, which `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub regime: Regime,
    pub system: System,
    pub g: TestFunction,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.g.validate(self.system.d())?;
        match (&self.regime, &self.system) {
            (Regime::EverCollide, System::Brownian { pair, .. }) => {
                if pair.horizon != Horizon::Infinite {
                    return Err(Error::config(
                        "horizon",
                        "ever-collide runs need an infinite horizon",
                    ));
                }
                if self.g != TestFunction::One {
                    return Err(Error::config(
                        "g",
                        "ever-collide runs estimate P(T < ∞); use g = one",
                    ));
                }
            }
            (Regime::Brownian, System::Brownian { pair, .. }) => {
                if pair.horizon == Horizon::Infinite {
                    return Err(Error::config(
                        "horizon",
                        "the scaled functional needs a finite horizon R",
                    ));
                }
                if pair.d < 3 {
                    return Err(Error::config("d", "r_N = r N^{-1/(d-2)} needs d >= 3"));
                }
            }
            (Regime::OuFast, System::Ou { pair }) => {
                if pair.alpha.is_some_and(|a| a <= 0.5) {
                    return Err(Error::config(
                        "alpha",
                        "fast-radius regime needs alpha > 1/2",
                    ));
                }
            }
            (Regime::OuSlow, System::Ou { pair }) => {
                if pair.alpha.is_some_and(|a| a >= 0.5) {
                    return Err(Error::config(
                        "alpha",
                        "slow-radius regime needs alpha < 1/2",
                    ));
                }
            }
            (r, _) => {
                return Err(Error::config(
                    "regime",
                    format!("regime {} does not match the system", r.tag()),
                ));
            }
        }
        Ok(())
    }

    /// Factor turning `E[g ...]` into the scaled estimator.
    pub fn scale(&self) -> f64 {
        let d = self.system.d() as i32;
        let r = self.system.r_n();
        match (&self.regime, &self.system) {
            (Regime::Brownian, System::Brownian { n, .. }) => *n,
            (Regime::OuFast, System::Ou { pair }) => pair.n.powf(-0.5) * r.powi(1 - d),
            (Regime::OuSlow, System::Ou { .. }) => r.powi(2 - d),
            _ => 1.0,
        }
    }

    /// The constant-coefficient limit problem, if one exists.
    pub fn limit_problem(&self) -> Result<LimitProblem> {
        match (&self.regime, &self.system) {
            (Regime::Brownian, System::Brownian { pair, n }) => {
                if !pair.constant_coefficients() {
                    return Err(Error::NoClosedReference(
                        "field coefficients: compare against property-based checks instead".into(),
                    ));
                }
                let Horizon::Finite(horizon) = pair.horizon else {
                    return Err(Error::NoClosedReference("infinite horizon".into()));
                };
                let d = pair.d;
                let r = pair.r_n * n.powf(1.0 / (d as f64 - 2.0));
                LimitProblem::brownian(
                    d,
                    pair.a1.eval(&pair.x1),
                    pair.a2.eval(&pair.x2),
                    pair.x1.clone(),
                    pair.x2.clone(),
                    r,
                    horizon,
                )
            }
            (Regime::OuFast, System::Ou { pair }) => LimitProblem::ou_fast(
                pair.d,
                (pair.tau1, pair.tau2),
                (pair.b1, pair.b2),
                pair.x1.clone(),
                pair.x2.clone(),
                (pair.t0, pair.t1),
            ),
            (Regime::OuSlow, System::Ou { pair }) => LimitProblem::ou_slow(
                pair.d,
                (pair.tau1, pair.tau2),
                (pair.b1, pair.b2),
                pair.x1.clone(),
                pair.x2.clone(),
                (pair.t0, pair.t1),
            ),
            _ => Err(Error::NoClosedReference(format!(
                "regime {}",
                self.regime.tag()
            ))),
        }
    }

    /// Analytic limit of the scaled functional.
    pub fn reference(&self) -> Result<f64> {
        self.validate()?;
        if self.regime == Regime::EverCollide {
            let System::Brownian { pair, .. } = &self.system else {
                unreachable!("validated")
            };
            return ever_collide_probability(pair.d, pair.r_n, pair.separation());
        }
        self.limit_problem()?.reference(&self.g)
    }

    /// `g(T, X(T))` restricted to the functional's time window.
    fn path_value(&self, out: &CollisionOutcome) -> Result<f64> {
        if !out.hit {
            return Ok(0.0);
        }
        if out.escaped {
            // the escape law fixes only that a hit happens, not when
            return Ok(self.g.eval(0.0, &[]));
        }
        let (lo, hi) = match &self.system {
            System::Brownian { pair, .. } => match pair.horizon {
                Horizon::Finite(r) => (0.0, r),
                Horizon::Infinite => (0.0, f64::INFINITY),
            },
            System::Ou { pair } => (pair.t0, pair.t1),
        };
        if out.t_hit < lo || out.t_hit > hi || (out.t_hit == hi && self.regime == Regime::Brownian)
        {
            return Ok(0.0);
        }
        Ok(self.g.eval(out.t_hit, &out.x_hit))
    }
}

/// Run-size and budget controls for [`mc_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McOptions {
    pub n_paths: u64,
    /// Paths per deterministic work unit.
    pub chunk: u64,
    /// Wall-clock budget in seconds; exceeded runs return a partial estimate.
    pub wall_budget_s: Option<f64>,
    /// Largest tolerated censored fraction.
    pub censor_limit: f64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            chunk: 4096,
            wall_budget_s: None,
            censor_limit: 0.01,
        }
    }
}

impl McOptions {
    pub fn paths(n_paths: u64) -> Self {
        Self {
            n_paths,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEstimate {
    pub regime: Regime,
    pub scaled_value: f64,
    pub std_error: f64,
    /// Unscaled mean of the per-path values and its standard error.
    pub raw_mean: f64,
    pub raw_se: f64,
    pub scale: f64,
    pub hits: u64,
    pub n_paths: u64,
    pub censored: u64,
    pub censored_fraction: f64,
    pub reference: Option<f64>,
    /// Budget ran out before all paths were simulated.
    pub partial: bool,
    pub wall_time_s: f64,
}

impl CollisionEstimate {
    pub fn ratio(&self) -> Option<f64> {
        self.reference.map(|r| self.scaled_value / r)
    }

    /// Whether the reference lies within `k` standard errors.
    pub fn within_se(&self, k: f64) -> Option<bool> {
        self.reference
            .map(|r| (self.scaled_value - r).abs() <= k * self.std_error)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ChunkStats {
    paths: u64,
    sum: f64,
    sum_sq: f64,
    hits: u64,
    censored: u64,
}

fn run_chunk(exp: &Experiment, seed: u64, start: u64, end: u64) -> Result<ChunkStats> {
    let sys = exp.system.experiment();
    let mut s = ChunkStats::default();
    for i in start..end {
        let mut rng = path_rng(seed, i);
        let out = sys.run_path(&mut rng)?;
        let v = exp.path_value(&out)?;
        s.paths += 1;
        s.sum += v;
        s.sum_sq += v * v;
        s.hits += u64::from(out.hit);
        s.censored += u64::from(out.censored);
    }
    Ok(s)
}

/// Monte Carlo estimate of the scaled functional. Paths are split into
/// fixed chunks and merged in chunk order, so the result is independent of
/// thread count.
pub fn mc_estimate(exp: &Experiment, opts: &McOptions) -> Result<CollisionEstimate> {
    exp.validate()?;
    if opts.n_paths < 100 {
        return Err(Error::config(
            "paths",
            format!("need at least 100 paths, got {}", opts.n_paths),
        ));
    }
    let reference = match exp.reference() {
        Ok(r) => Some(r),
        Err(Error::NoClosedReference(_)) => None,
        Err(e) => return Err(e),
    };
    let started = Instant::now();
    let chunk = opts.chunk.max(1);
    let n_chunks = opts.n_paths.div_ceil(chunk);
    let seed = exp.system.seed();
    let results: Vec<Option<Result<ChunkStats>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            if opts
                .wall_budget_s
                .is_some_and(|b| started.elapsed().as_secs_f64() > b)
            {
                return None;
            }
            let start = c * chunk;
            let end = (start + chunk).min(opts.n_paths);
            Some(run_chunk(exp, seed, start, end))
        })
        .collect();
    let mut total = ChunkStats::default();
    let mut partial = false;
    for r in results {
        match r {
            None => partial = true,
            Some(res) => {
                let s = res?;
                total.paths += s.paths;
                total.sum += s.sum;
                total.sum_sq += s.sum_sq;
                total.hits += s.hits;
                total.censored += s.censored;
            }
        }
    }
    if total.paths == 0 {
        return Err(Error::Budget(
            "wall-clock budget exhausted before any path completed".into(),
        ));
    }
    let n = total.paths as f64;
    let mean = total.sum / n;
    let var = if total.paths > 1 {
        ((total.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let raw_se = (var / n).sqrt();
    let scale = exp.scale();
    let censored_fraction = total.censored as f64 / n;
    if censored_fraction > opts.censor_limit {
        return Err(Error::Censored {
            fraction: censored_fraction,
            limit: opts.censor_limit,
        });
    }
    Ok(CollisionEstimate {
        regime: exp.regime,
        scaled_value: scale * mean,
        std_error: scale * raw_se,
        raw_mean: mean,
        raw_se,
        scale,
        hits: total.hits,
        n_paths: total.paths,
        censored: total.censored,
        censored_fraction,
        reference,
        partial,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// One line of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub experiment: String,
    pub regime: String,
    /// `key=value` pairs separated by `;`.
    pub params: String,
    pub estimate: f64,
    pub se: f64,
    pub reference: Option<f64>,
    pub ratio: Option<f64>,
    pub n_paths: u64,
    pub censored_fraction: f64,
    pub wall_time_s: f64,
}

impl ComparisonRow {
    pub fn from_estimate(experiment: &str, params: String, est: &CollisionEstimate) -> Self {
        Self {
            experiment: experiment.to_string(),
            regime: est.regime.tag().to_string(),
            params,
            estimate: est.scaled_value,
            se: est.std_error,
            reference: est.reference,
            ratio: est.ratio(),
            n_paths: est.n_paths,
            censored_fraction: est.censored_fraction,
            wall_time_s: est.wall_time_s,
        }
    }
}

/// Writes rows as CSV. Wall time is only written when `record_timing` is
/// set, so repeated runs produce byte-identical files by default.
pub fn write_rows_csv(path: &Path, rows: &[ComparisonRow], record_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "experiment",
        "regime",
        "params",
        "estimate",
        "se",
        "reference",
        "ratio",
        "n_paths",
        "censored_fraction",
        "wall_time_s",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.regime.clone(),
            r.params.clone(),
            format!("{:e}", r.estimate),
            format!("{:e}", r.se),
            opt(r.reference),
            opt(r.ratio),
            r.n_paths.to_string(),
            format!("{:e}", r.censored_fraction),
            if record_timing {
                format!("{:.3}", r.wall_time_s)
            } else {
                String::new()
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Constant-coefficient diffusing pair swept over stiffness `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrownianLimitConfig {
    pub d: usize,
    pub a1: f64,
    pub a2: f64,
    pub separation: f64,
    /// Unscaled radius `r`; the run uses `r_N = r N^{-1/(d-2)}`.
    pub r: f64,
    pub horizon: f64,
    pub n_values: Vec<f64>,
    pub g: TestFunction,
    #[serde(default)]
    pub seed: u64,
}

impl BrownianLimitConfig {
    pub fn experiment(&self, n: f64) -> Experiment {
        let r_n = self.r * n.powf(-1.0 / (self.d as f64 - 2.0));
        let mut pair = PairConfig::constant(
            self.d,
            self.a1,
            self.a2,
            self.separation,
            r_n,
            Horizon::Finite(self.horizon),
        );
        pair.seed = self.seed;
        Experiment {
            regime: Regime::Brownian,
            system: System::Brownian { pair, n },
            g: self.g.clone(),
        }
    }
}

pub fn experiment_brownian_limit(
    cfg: &BrownianLimitConfig,
    opts: &McOptions,
) -> Result<Vec<ComparisonRow>> {
    cfg.n_values
        .iter()
        .map(|&n| {
            let exp = cfg.experiment(n);
            let est = mc_estimate(&exp, opts)?;
            let params = format!(
                "d={};N={n};r_N={:e};separation={};R={}",
                cfg.d,
                exp.system.r_n(),
                cfg.separation,
                cfg.horizon
            );
            Ok(ComparisonRow::from_estimate("brownian-limit", params, &est))
        })
        .collect()
}

/// Radius-doubling diagnostic: the unscaled hit rate should grow by
/// `2^{d-1}` (fast radius) or `2^{d-2}` (slow radius).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusScaling {
    pub rows: Vec<ComparisonRow>,
    pub estimates: Vec<CollisionEstimate>,
    pub ratio: f64,
    pub ratio_se: f64,
    pub expected: f64,
}

impl RadiusScaling {
    pub fn relative_error(&self) -> f64 {
        (self.ratio / self.expected - 1.0).abs()
    }
}

fn ou_radius_doubling(
    regime: Regime,
    base: &OuPairConfig,
    g: &TestFunction,
    opts: &McOptions,
) -> Result<RadiusScaling> {
    let mut estimates = Vec::new();
    let mut rows = Vec::new();
    for (k, factor) in [1.0, 2.0].into_iter().enumerate() {
        let mut pair = base.clone();
        pair.r_n *= factor;
        // independent streams for the two radii keep the ratio SE honest
        pair.seed = base.seed.wrapping_add(k as u64);
        let exp = Experiment {
            regime,
            system: System::Ou { pair: pair.clone() },
            g: g.clone(),
        };
        let est = mc_estimate(&exp, opts)?;
        let params = format!(
            "d={};N={};r_N={:e};tau=({},{});b=({},{});window=[{},{}]",
            pair.d, pair.n, pair.r_n, pair.tau1, pair.tau2, pair.b1, pair.b2, pair.t0, pair.t1
        );
        let name = if regime == Regime::OuFast {
            "ou-fast"
        } else {
            "ou-slow"
        };
        rows.push(ComparisonRow::from_estimate(name, params, &est));
        estimates.push(est);
    }
    let (m1, s1) = (estimates[0].raw_mean, estimates[0].raw_se);
    let (m2, s2) = (estimates[1].raw_mean, estimates[1].raw_se);
    let ratio = m2 / m1;
    let ratio_se = ratio * ((s1 / m1).powi(2) + (s2 / m2).powi(2)).sqrt();
    let d = base.d as i32;
    let expected = if regime == Regime::OuFast {
        2f64.powi(d - 1)
    } else {
        2f64.powi(d - 2)
    };
    Ok(RadiusScaling {
        rows,
        estimates,
        ratio,
        ratio_se,
        expected,
    })
}

/// Fast-radius regime (`alpha > 1/2`) at `r_N` and `2 r_N`.
pub fn experiment_ou_fast(
    base: &OuPairConfig,
    g: &TestFunction,
    opts: &McOptions,
) -> Result<RadiusScaling> {
    ou_radius_doubling(Regime::OuFast, base, g, opts)
}

/// Slow-radius regime (`alpha < 1/2`) at `r_N` and `2 r_N`.
pub fn experiment_ou_slow(
    base: &OuPairConfig,
    g: &TestFunction,
    opts: &McOptions,
) -> Result<RadiusScaling> {
    ou_radius_doubling(Regime::OuSlow, base, g, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ever(r: f64) -> Experiment {
        let mut pair = PairConfig::constant(3, 0.5, 0.5, 1.0, r, Horizon::Infinite);
        pair.seed = 11;
        Experiment {
            regime: Regime::EverCollide,
            system: System::Brownian { pair, n: 1.0 },
            g: TestFunction::One,
        }
    }

    #[test]
    fn zero_function_gives_zero() {
        let mut e = ever(0.1);
        e.regime = Regime::Brownian;
        e.g = TestFunction::Zero;
        if let System::Brownian { pair, .. } = &mut e.system {
            pair.horizon = Horizon::Finite(1.0);
        }
        let est = mc_estimate(&e, &McOptions::paths(200)).unwrap();
        assert_eq!((est.scaled_value, est.std_error), (0.0, 0.0));
        assert_eq!(est.reference, Some(0.0));
    }

    #[test]
    fn estimate_independent_of_thread_count() {
        let e = ever(0.2);
        let opts = McOptions {
            n_paths: 3000,
            chunk: 256,
            ..McOptions::default()
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let three = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let a = one.install(|| mc_estimate(&e, &opts)).unwrap();
        let b = three.install(|| mc_estimate(&e, &opts)).unwrap();
        assert_eq!(a.scaled_value.to_bits(), b.scaled_value.to_bits());
        assert_eq!(a.hits, b.hits);
    }

    #[test]
    fn ever_collide_small_run() {
        let est = mc_estimate(&ever(0.2), &McOptions::paths(20_000)).unwrap();
        assert!(est.within_se(4.0).unwrap(), "{est:?}");
        assert_eq!(est.censored, 0);
    }

    #[test]
    fn regime_mismatch_rejected() {
        let mut e = ever(0.1);
        e.regime = Regime::OuFast;
        assert!(e.validate().is_err());
        assert!(mc_estimate(&ever(0.1), &McOptions::paths(10)).is_err());
    }

    #[test]
    fn csv_omits_timing_by_default() {
        let est = mc_estimate(&ever(0.3), &McOptions::paths(500)).unwrap();
        let row = ComparisonRow::from_estimate("ever", "d=3".into(), &est);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rows.csv");
        write_rows_csv(&p, &[row], false).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }
}
