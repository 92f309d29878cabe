//! Diffusion in a small-scale cellular flow: effective diffusivity and the
//! direction in which collision rates move across the two limits.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    mc_estimate, ComparisonRow, Experiment, LimitProblem, McOptions, Regime, System, TestFunction,
};
use crate::error::{require_positive, Error, Result};
use crate::sde::{path_rng, BrownianStepping, DriftField, Horizon, PairConfig, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityEstimate {
    /// Base diffusivity `a`.
    pub a: f64,
    pub a_bar: f64,
    pub std_error: f64,
    pub n_particles: u64,
    pub t: f64,
}

/// Long-run diffusivity of `dX = b(X) dt + √a dW` from the displacement
/// variance `E|X_t - X_0|² / (d t)`, with starts uniform on one period cell.
/// Euler–Maruyama with step `dt`; averages coordinates within each particle
/// so the standard error is taken across independent particles.
pub fn effective_diffusivity(
    d: usize,
    a: f64,
    drift: &DriftField,
    t: f64,
    dt: f64,
    n_particles: u64,
    seed: u64,
) -> Result<DiffusivityEstimate> {
    require_positive("a", a)?;
    require_positive("t", t)?;
    require_positive("dt", dt)?;
    drift.validate("drift", d)?;
    if n_particles < 2 {
        return Err(Error::config("n_particles", "need at least two particles"));
    }
    let cell = match drift {
        DriftField::TaylorGreen { lambda, .. } => 2.0 * std::f64::consts::PI * lambda,
        _ => 1.0,
    };
    let steps = (t / dt).ceil() as u64;
    let h = t / steps as f64;
    let sq = (a * h).sqrt();
    let per_particle: Vec<f64> = (0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut x = [0.0; crate::sde::MAX_DIM];
            let mut b = [0.0; crate::sde::MAX_DIM];
            for xi in x.iter_mut().take(d) {
                *xi = cell * rng.random::<f64>();
            }
            let x0 = x;
            for _ in 0..steps {
                drift.eval_into(&x[..d], &mut b[..d]);
                for k in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    x[k] += b[k] * h + sq * z;
                }
            }
            (0..d).map(|k| (x[k] - x0[k]).powi(2)).sum::<f64>() / (d as f64 * t)
        })
        .collect();
    let n = n_particles as f64;
    let mean = per_particle.iter().sum::<f64>() / n;
    let var = per_particle.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(DiffusivityEstimate {
        a,
        a_bar: mean,
        std_error: (var / n).sqrt(),
        n_particles,
        t,
    })
}

/// Outcome of a directional check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Differences are inside the noise.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicDriftConfig {
    /// Diffusivity of both particles.
    pub a: f64,
    /// Flow amplitude before the `1/λ` scaling.
    #[serde(default = "one")]
    pub amplitude: f64,
    pub separation: f64,
    /// Horizon `R` of the functional `N E[1_{T<R}]`.
    pub horizon: f64,
    /// Unscaled radius; `N = (r / r_N)^{d-2}`.
    #[serde(default = "one")]
    pub r: f64,
    /// Decreasing `λ` schedule swept at `fixed_r_n`.
    pub lambdas: Vec<f64>,
    pub fixed_r_n: f64,
    /// Decreasing `r_N` schedule swept at `fixed_lambda`.
    pub r_values: Vec<f64>,
    pub fixed_lambda: f64,
    pub n_paths: u64,
    /// Simulated time for the displacement-variance estimate (at `λ = 1`).
    pub diffusivity_time: f64,
    pub diffusivity_particles: u64,
    /// Euler steps per `λ² / a` cell-crossing time.
    #[serde(default = "default_resolution")]
    pub steps_per_cell_time: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_resolution() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub r_n: f64,
    pub estimate: f64,
    pub se: f64,
    /// Kernel with the local diffusivity `a`.
    pub reference_local: f64,
    /// Kernel with the effective diffusivity `ā`.
    pub reference_effective: f64,
    /// `(estimate - local) / (effective - local)`: 0 at the local reference,
    /// 1 at the effective one.
    pub position: f64,
    pub position_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicDriftReport {
    pub diffusivity: DiffusivityEstimate,
    pub lambda_sweep: Vec<SweepPoint>,
    pub radius_sweep: Vec<SweepPoint>,
    pub enhancement: Verdict,
    /// Shrinking `λ` moves the rate toward the `ā` reference.
    pub toward_effective: Verdict,
    /// Shrinking `r_N` moves the rate toward the local reference.
    pub toward_local: Verdict,
    pub rows: Vec<ComparisonRow>,
}

/// Trend of `position` along a schedule: `sign = +1` wants it to grow.
fn trend(points: &[SweepPoint], sign: f64) -> Verdict {
    if points.len() < 2 {
        return Verdict::Inconclusive;
    }
    let mut any_wrong = false;
    for w in points.windows(2) {
        let step = sign * (w[1].position - w[0].position);
        let se = w[0].position_se.hypot(w[1].position_se);
        if step < -2.0 * se {
            any_wrong = true;
        }
    }
    let first = &points[0];
    let last = points.last().expect("non-empty");
    let total = sign * (last.position - first.position);
    let se = first.position_se.hypot(last.position_se);
    if any_wrong {
        Verdict::Fail
    } else if total > 2.0 * se {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    }
}

/// Both references use the effective meeting law; they differ only in the
/// kernel, `c_d (a₁+a₂) r^{d-2}` against `c_d (ā₁+ā₂) r^{d-2}`.
fn references(cfg: &PeriodicDriftConfig, a_bar: f64) -> Result<(f64, f64)> {
    let d = 4;
    let (x1, x2) = start_points(cfg.separation);
    let lp = LimitProblem::brownian(d, a_bar, a_bar, x1, x2, cfg.r, cfg.horizon)?;
    let effective = lp.reference(&TestFunction::One)?;
    Ok((effective * cfg.a / a_bar, effective))
}

fn start_points(separation: f64) -> (Vec<f64>, Vec<f64>) {
    (vec![0.0; 4], vec![separation, 0.0, 0.0, 0.0])
}

fn sweep_point(
    cfg: &PeriodicDriftConfig,
    lambda: f64,
    r_n: f64,
    a_bar: f64,
    seed: u64,
) -> Result<(SweepPoint, ComparisonRow)> {
    let d = 4usize;
    let (x1, x2) = start_points(cfg.separation);
    let field = DriftField::TaylorGreen {
        amplitude: cfg.amplitude,
        lambda,
    };
    let cell_time = lambda * lambda / cfg.a.max(cfg.amplitude * lambda);
    let pair = PairConfig {
        d,
        x1,
        x2,
        a1: ScalarField::Constant { value: cfg.a },
        a2: ScalarField::Constant { value: cfg.a },
        b1: field.clone(),
        b2: field,
        r_n,
        horizon: Horizon::Finite(cfg.horizon),
        masses: (1.0, 1.0),
        declared_bound: None,
        stepping: BrownianStepping {
            h: cell_time / cfg.steps_per_cell_time,
            ..BrownianStepping::default()
        },
        seed,
    };
    let n = (cfg.r / r_n).powi(d as i32 - 2);
    let exp = Experiment {
        regime: Regime::Brownian,
        system: System::Brownian { pair, n },
        g: TestFunction::One,
    };
    let est = mc_estimate(&exp, &McOptions::paths(cfg.n_paths))?;
    let (local, effective) = references(cfg, a_bar)?;
    let gap = effective - local;
    let params = format!(
        "d=4;a={};abar={a_bar:.4};lambda={lambda};r_N={r_n:e};N={n:e}",
        cfg.a
    );
    let mut row = ComparisonRow::from_estimate("periodic-drift", params, &est);
    row.reference = Some(effective);
    row.ratio = Some(est.scaled_value / effective);
    Ok((
        SweepPoint {
            lambda,
            r_n,
            estimate: est.scaled_value,
            se: est.std_error,
            reference_local: local,
            reference_effective: effective,
            position: (est.scaled_value - local) / gap,
            position_se: est.std_error / gap.abs(),
        },
        row,
    ))
}

/// Measures `ā`, then sweeps `λ` at fixed `r_N` and `r_N` at fixed `λ`.
///
/// `ā` is measured once at `λ = 1`: rescaling space by `λ` and time by `λ²`
/// maps the `λ` flow onto the unit one, so the long-run diffusivity does not
/// depend on `λ`.
pub fn experiment_periodic_drift(cfg: &PeriodicDriftConfig) -> Result<PeriodicDriftReport> {
    require_positive("a", cfg.a)?;
    require_positive("horizon", cfg.horizon)?;
    for w in cfg.lambdas.windows(2).chain(cfg.r_values.windows(2)) {
        if w[1] >= w[0] {
            return Err(Error::config(
                "schedule",
                "lambda and r_N schedules must be decreasing",
            ));
        }
    }
    let unit = DriftField::TaylorGreen {
        amplitude: cfg.amplitude,
        lambda: 1.0,
    };
    let dt = 1.0 / (cfg.steps_per_cell_time * cfg.a.max(cfg.amplitude));
    let diffusivity = effective_diffusivity(
        4,
        cfg.a,
        &unit,
        cfg.diffusivity_time,
        dt,
        cfg.diffusivity_particles,
        cfg.seed,
    )?;
    let enhancement = if diffusivity.a_bar - 2.0 * diffusivity.std_error >= cfg.a {
        Verdict::Pass
    } else if diffusivity.a_bar + 2.0 * diffusivity.std_error < cfg.a {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    // the references coincide when ā = a, and positions are then meaningless
    let a_bar = diffusivity.a_bar.max(cfg.a * (1.0 + 1e-9));
    let mut rows = Vec::new();
    let mut lambda_sweep = Vec::new();
    for (k, &lambda) in cfg.lambdas.iter().enumerate() {
        let (p, row) = sweep_point(
            cfg,
            lambda,
            cfg.fixed_r_n,
            a_bar,
            cfg.seed.wrapping_add(1 + k as u64),
        )?;
        lambda_sweep.push(p);
        rows.push(row);
    }
    let mut radius_sweep = Vec::new();
    for (k, &r_n) in cfg.r_values.iter().enumerate() {
        let (p, row) = sweep_point(
            cfg,
            cfg.fixed_lambda,
            r_n,
            a_bar,
            cfg.seed.wrapping_add(101 + k as u64),
        )?;
        radius_sweep.push(p);
        rows.push(row);
    }
    Ok(PeriodicDriftReport {
        toward_effective: trend(&lambda_sweep, 1.0),
        toward_local: trend(&radius_sweep, -1.0),
        diffusivity,
        lambda_sweep,
        radius_sweep,
        enhancement,
        rows,
    })
}
