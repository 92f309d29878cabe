//! Config-driven front end: parses a [`RunConfig`], runs one job and writes
//! its artifacts (CSV/JSON, `resolved-config.json`, `manifest.json`) into a
//! single output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{
    drift_sandwich_histogram, experiment_ou_fast, experiment_ou_slow, extremal_saturation,
    mc_estimate, write_rows_csv, BrownianLimitConfig, ComparisonRow, Experiment, McOptions, Regime,
    SandwichConfig, SandwichDrift, System, TestFunction,
};
use crate::kernels::{MassKernel, PowerLaw, WeightSpec};
use crate::sde::{Horizon, OuInit, OuPairConfig, OuStepping, PairConfig};
use crate::smoluchowski::{
    coag_gain, coag_loss, homogeneous_oracle, moment_monitor, CoagTable, InitialCondition,
    MassField, MassGrid, MomentReport, SolutionPath, Solver, SolverConfig,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "coagdiff",
    version,
    about = "Collision-rate Monte Carlo and coagulation-diffusion solver"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
    /// JSON run config; flags below override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Monte Carlo path budget.
    #[arg(long, global = true)]
    pub paths: Option<u64>,
    /// Print the summary as JSON instead of PASS/FAIL lines.
    #[arg(long, global = true)]
    pub json_summary: bool,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Scaled collision functional by Monte Carlo.
    Collide {
        #[arg(long)]
        regime: Option<RegimeArg>,
    },
    /// Coagulation-diffusion solve with the moment monitor.
    Smolu {
        #[arg(long)]
        kernel: Option<KernelArg>,
        /// Spatially uniform start, checked against the homogeneous oracle.
        #[arg(long)]
        homogeneous: bool,
    },
    /// Drifted-density sandwich and extremal saturation.
    DensityCheck,
    /// Space-homogeneous pivot equations alone.
    Oracle {
        #[arg(long)]
        kernel: Option<KernelArg>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    EverCollide,
    Brownian,
    OuFast,
    OuSlow,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::EverCollide => Regime::EverCollide,
            RegimeArg::Brownian => Regime::Brownian,
            RegimeArg::OuFast => Regime::OuFast,
            RegimeArg::OuSlow => Regime::OuSlow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Constant,
    Multiplicative,
    Ou,
}

impl From<KernelArg> for MassKernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Constant => MassKernel::Constant(1.0),
            KernelArg::Multiplicative => MassKernel::Multiplicative,
            KernelArg::Ou => MassKernel::OrnsteinUhlenbeck,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Collide,
    Smolu,
    DensityCheck,
    Oracle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default)]
    pub paths: Option<u64>,
    #[serde(default)]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub collide: Option<CollideSection>,
    #[serde(default)]
    pub smolu: Option<SmoluSection>,
    #[serde(default)]
    pub density_check: Option<DensitySection>,
    #[serde(default)]
    pub oracle: Option<OracleSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollideSection {
    /// Picks a preset experiment when `experiment` is absent.
    #[serde(default)]
    pub regime: Option<Regime>,
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub chunk: Option<u64>,
    #[serde(default)]
    pub censor_limit: Option<f64>,
    /// Relative tolerance against the reference (or expected radius ratio).
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// OU regimes: also run at `2 r_N` and check the radius exponent.
    #[serde(default)]
    pub radius_doubling: bool,
    #[serde(default)]
    pub record_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    /// Defaults to 0.9 of the Riccati horizon, capped at `t_end`.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub steps: usize,
    pub max_sweeps: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoluSection {
    pub solver: SolverConfig,
    pub initial: InitialCondition,
    /// Compare against the space-homogeneous oracle (needs a uniform start).
    #[serde(default)]
    pub homogeneous: bool,
    /// Relative tolerance of the oracle comparison.
    #[serde(default = "default_oracle_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub picard: Option<PicardSection>,
}

fn default_oracle_tolerance() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationSection {
    pub a: f64,
    pub drift_bound: f64,
    pub t: f64,
    pub deltas: Vec<f64>,
    pub n_samples: u64,
    pub half_width: f64,
    /// Allowed `|z|` of estimate against bound.
    #[serde(default = "default_k")]
    pub k: f64,
}

fn default_k() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub sandwich: SandwichConfig,
    #[serde(default)]
    pub saturation: Option<SaturationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub kernel: MassKernel,
    #[serde(default = "unit")]
    pub delta: f64,
    pub rho: f64,
    pub bins: usize,
    pub mu0: Vec<f64>,
    pub times: Vec<f64>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

fn unit() -> f64 {
    1.0
}

fn default_rtol() -> f64 {
    1e-10
}

fn default_atol() -> f64 {
    1e-14
}

/// Preset experiments, one per regime.
pub fn preset_experiment(regime: Regime) -> Experiment {
    match regime {
        Regime::EverCollide => Experiment {
            regime,
            system: System::Brownian {
                pair: PairConfig::constant(3, 0.5, 0.5, 1.0, 0.01, Horizon::Infinite),
                n: 1.0,
            },
            g: TestFunction::One,
        },
        Regime::Brownian => BrownianLimitConfig {
            d: 3,
            a1: 0.5,
            a2: 0.5,
            separation: 1.0,
            r: 100.0,
            horizon: 10.0,
            n_values: vec![1e4],
            g: TestFunction::One,
            seed: 0,
        }
        .experiment(1e4),
        Regime::OuFast => Experiment {
            regime,
            system: System::Ou {
                pair: ou_preset(0.04, 0.55, 0.5),
            },
            g: TestFunction::One,
        },
        Regime::OuSlow => {
            let mut pair = ou_preset(100.0, 0.40, 1.0);
            pair.stepping.kappa_n = 0.1;
            Experiment {
                regime,
                system: System::Ou { pair },
                g: TestFunction::One,
            }
        }
    }
}

/// `d = 3`, `N = 2500`, `τ = b` (so `a = 1`), window `[0.2, 2]`.
fn ou_preset(tau: f64, alpha: f64, separation: f64) -> OuPairConfig {
    let n: f64 = 2500.0;
    OuPairConfig {
        d: 3,
        x1: vec![0.0; 3],
        x2: vec![separation, 0.0, 0.0],
        n,
        tau1: tau,
        tau2: tau,
        b1: tau,
        b2: tau,
        r_n: n.powf(-alpha),
        alpha: Some(alpha),
        t0: 0.2,
        t1: 2.0,
        masses: (1.0, 1.0),
        init: OuInit::Zero,
        stepping: OuStepping::default(),
        seed: 0,
    }
}

/// Solver defaults for `kernel`, with a weight that dominates it.
pub fn preset_solver(kernel: MassKernel) -> SolverConfig {
    let weights = match kernel {
        MassKernel::Constant(c) => WeightSpec::PowerLaw {
            c1: c.sqrt(),
            u: 0.0,
        },
        MassKernel::Multiplicative => WeightSpec::PowerLaw { c1: 1.0, u: 1.0 },
        MassKernel::OrnsteinUhlenbeck => WeightSpec::PairBound {
            w: PowerLaw::new(4.0 * 2f64.sqrt(), 2.0 / 3.0),
            v: PowerLaw::new(1.0, -0.5),
        },
    };
    SolverConfig {
        d: 3,
        // wide enough that a unit Gaussian stays out of the wrap band
        length: 20.0,
        cells: 16,
        delta: 1.0,
        rho: 2.0,
        bins: 16,
        kernel,
        diffusivity: PowerLaw::new(1.0, -1.0 / 3.0),
        drift: None,
        weights,
        dt: 0.05,
        t_end: 0.5,
        record_every: 2,
        stability: 0.5,
    }
}

impl RunConfig {
    pub fn minimal(command: CommandKind) -> Self {
        Self {
            command,
            seed: 0,
            out: None,
            budget: Budget::default(),
            collide: None,
            smolu: None,
            density_check: None,
            oracle: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fills defaults for the selected command and validates everything
    /// that will be used. Idempotent.
    pub fn resolve(mut self) -> Result<Self> {
        match self.command {
            CommandKind::Collide => {
                let sec = self.collide.get_or_insert_with(Default::default);
                let regime = match (&sec.experiment, sec.regime) {
                    (Some(e), Some(r)) if e.regime != r => {
                        return Err(Error::config(
                            "collide.regime",
                            format!(
                                "{} conflicts with experiment regime {}",
                                r.tag(),
                                e.regime.tag()
                            ),
                        ))
                    }
                    (Some(e), _) => e.regime,
                    (None, r) => r.unwrap_or(Regime::EverCollide),
                };
                sec.regime = Some(regime);
                let exp = sec
                    .experiment
                    .get_or_insert_with(|| preset_experiment(regime));
                match &mut exp.system {
                    System::Brownian { pair, .. } => pair.seed = self.seed,
                    System::Ou { pair } => pair.seed = self.seed,
                }
                exp.validate()?;
                sec.chunk.get_or_insert(4096);
                sec.censor_limit.get_or_insert(0.01);
                let tol = *sec.tolerance.get_or_insert(match regime {
                    Regime::EverCollide => 0.1,
                    Regime::Brownian | Regime::OuSlow => 0.1,
                    Regime::OuFast => 0.25,
                });
                if !(tol > 0.0) {
                    return Err(Error::config("collide.tolerance", "must be > 0"));
                }
                if sec.radius_doubling && !matches!(regime, Regime::OuFast | Regime::OuSlow) {
                    return Err(Error::config(
                        "collide.radius_doubling",
                        "only defined for the OU regimes",
                    ));
                }
                self.budget.paths.get_or_insert(100_000);
            }
            CommandKind::Smolu => {
                let sec = self.smolu.get_or_insert_with(|| SmoluSection {
                    solver: preset_solver(MassKernel::Constant(1.0)),
                    initial: InitialCondition::Gaussian {
                        width: 1.0,
                        bins: vec![0.5],
                    },
                    homogeneous: false,
                    tolerance: default_oracle_tolerance(),
                    picard: None,
                });
                sec.solver.validate()?;
                let grid = sec.solver.grid()?;
                let field = sec.initial.build(grid)?;
                if sec.homogeneous && field.uniformity_defect() > 1e-12 {
                    return Err(Error::config(
                        "smolu.initial",
                        "homogeneous runs need a uniform initial condition",
                    ));
                }
                if let Some(p) = &sec.picard {
                    if p.steps == 0
                        || p.max_sweeps == 0
                        || !(p.tol > 0.0)
                        || p.horizon.is_some_and(|h| !(h > 0.0))
                    {
                        return Err(Error::config(
                            "smolu.picard",
                            "need steps, max_sweeps >= 1 and tol, horizon > 0",
                        ));
                    }
                }
            }
            CommandKind::DensityCheck => {
                let paths = self.budget.paths;
                let seed = self.seed;
                let sec = self.density_check.get_or_insert_with(|| DensitySection {
                    sandwich: SandwichConfig {
                        a: 1.0,
                        drift_bound: 0.5,
                        drift: SandwichDrift::Sine {
                            wavenumber: 2.0,
                            phase: 0.3,
                        },
                        t: 1.0,
                        start: 0.0,
                        dt: 1e-3,
                        n_paths: 100_000,
                        n_bins: 20,
                        z: 2.576,
                        seed: 0,
                    },
                    saturation: Some(SaturationSection {
                        a: 1.0,
                        drift_bound: 0.5,
                        t: 1.0,
                        deltas: vec![0.0, 0.5, 1.5],
                        n_samples: 1_000_000,
                        half_width: 0.005,
                        k: 2.0,
                    }),
                });
                if let Some(p) = paths {
                    sec.sandwich.n_paths = p;
                }
                sec.sandwich.seed = seed;
                let s = &sec.sandwich;
                for (name, v) in [("a", s.a), ("t", s.t), ("dt", s.dt), ("z", s.z)] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::config(
                            format!("density_check.sandwich.{name}"),
                            format!("must be finite and > 0, got {v}"),
                        ));
                    }
                }
                if !(s.drift_bound >= 0.0) || s.n_bins == 0 || s.n_paths < 100 {
                    return Err(Error::config(
                        "density_check.sandwich",
                        "need drift_bound >= 0, n_bins >= 1, n_paths >= 100",
                    ));
                }
                if let Some(sat) = &sec.saturation {
                    for (name, v) in [
                        ("a", sat.a),
                        ("t", sat.t),
                        ("half_width", sat.half_width),
                        ("k", sat.k),
                    ] {
                        if !(v > 0.0 && v.is_finite()) {
                            return Err(Error::config(
                                format!("density_check.saturation.{name}"),
                                format!("must be finite and > 0, got {v}"),
                            ));
                        }
                    }
                    if sat.n_samples < 100 || sat.deltas.iter().any(|d| !(*d >= 0.0)) {
                        return Err(Error::config(
                            "density_check.saturation",
                            "need n_samples >= 100 and deltas >= 0",
                        ));
                    }
                }
            }
            CommandKind::Oracle => {
                let sec = self.oracle.get_or_insert_with(|| OracleSection {
                    kernel: MassKernel::Constant(1.0),
                    delta: 1.0,
                    rho: 2.0,
                    bins: 30,
                    mu0: vec![1.0],
                    times: (0..=8).map(|k| 0.5 * k as f64).collect(),
                    rtol: default_rtol(),
                    atol: default_atol(),
                });
                MassGrid::new(sec.delta, sec.rho, sec.bins)?;
                if sec.mu0.is_empty()
                    || sec.mu0.len() > sec.bins
                    || sec.mu0.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
                {
                    return Err(Error::config(
                        "oracle.mu0",
                        "need 1..=bins finite nonnegative entries",
                    ));
                }
                if sec.times.is_empty()
                    || sec.times.windows(2).any(|w| w[1] < w[0])
                    || sec.times[0] < 0.0
                {
                    return Err(Error::config(
                        "oracle.times",
                        "need nonnegative increasing output times",
                    ));
                }
                if !(sec.rtol > 0.0 && sec.atol > 0.0) {
                    return Err(Error::config("oracle.rtol", "tolerances must be > 0"));
                }
            }
        }
        if self.budget.wall_time_s.is_some_and(|w| !(w > 0.0)) {
            return Err(Error::config("budget.wall_time_s", "must be > 0"));
        }
        if self.budget.paths.is_some_and(|p| p < 100) {
            return Err(Error::config("budget.paths", "need at least 100 paths"));
        }
        Ok(self)
    }
}

/// One executed invariant check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: String,
    pub partial: bool,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub out: PathBuf,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.partial {
            EXIT_PARTIAL
        } else if self.checks.iter().all(|c| c.pass) {
            EXIT_PASS
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: CommandKind,
    seed: u64,
    config_sha256: String,
    wall_time_s: f64,
    threads: usize,
    partial: bool,
    status: &'a str,
    checks: &'a [Check],
    artifacts: &'a [String],
}

struct Outcome {
    checks: Vec<Check>,
    artifacts: Vec<String>,
    partial: bool,
}

/// Runs a resolved config, writing every artifact under `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    fs::create_dir_all(out)?;
    let resolved = serde_json::to_string_pretty(cfg)? + "\n";
    fs::write(out.join("resolved-config.json"), &resolved)?;
    let outcome = match cfg.command {
        CommandKind::Collide => run_collide(cfg, out)?,
        CommandKind::Smolu => run_smolu(cfg, out, start)?,
        CommandKind::DensityCheck => run_density(cfg, out)?,
        CommandKind::Oracle => run_oracle(cfg, out)?,
    };
    let status = if outcome.partial {
        "PARTIAL"
    } else if outcome.checks.iter().all(|c| c.pass) {
        "PASS"
    } else {
        "FAIL"
    };
    let mut artifacts = vec!["resolved-config.json".to_string()];
    artifacts.extend(outcome.artifacts);
    artifacts.push("manifest.json".into());
    let manifest = Manifest {
        tool: "coagdiff",
        version: env!("CARGO_PKG_VERSION"),
        command: cfg.command,
        seed: cfg.seed,
        config_sha256: hex(&Sha256::digest(resolved.as_bytes())),
        wall_time_s: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        partial: outcome.partial,
        status,
        checks: &outcome.checks,
        artifacts: &artifacts,
    };
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(RunSummary {
        status: status.into(),
        partial: outcome.partial,
        checks: outcome.checks,
        artifacts,
        out: out.to_path_buf(),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn run_collide(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let sec = cfg.collide.as_ref().expect("resolved");
    let exp = sec.experiment.as_ref().expect("resolved");
    let opts = McOptions {
        n_paths: cfg.budget.paths.expect("resolved"),
        chunk: sec.chunk.expect("resolved"),
        wall_budget_s: cfg.budget.wall_time_s,
        censor_limit: sec.censor_limit.expect("resolved"),
    };
    let tol = sec.tolerance.expect("resolved");
    let mut checks = Vec::new();
    let (rows, partial) = if sec.radius_doubling {
        let System::Ou { pair } = &exp.system else {
            unreachable!("validated")
        };
        let scaling = if exp.regime == Regime::OuFast {
            experiment_ou_fast(pair, &exp.g, &opts)?
        } else {
            experiment_ou_slow(pair, &exp.g, &opts)?
        };
        let err = scaling.relative_error();
        checks.push(Check::new(
            "radius exponent",
            err <= tol,
            format!(
                "ratio {:.4} ± {:.4}, expected {}, rel. error {err:.3} (tol {tol})",
                scaling.ratio, scaling.ratio_se, scaling.expected
            ),
        ));
        let partial = scaling.estimates.iter().any(|e| e.partial);
        (scaling.rows, partial)
    } else {
        let est = mc_estimate(exp, &opts)?;
        let row = ComparisonRow::from_estimate(exp.regime.tag(), params_of(exp), &est);
        (vec![row], est.partial)
    };
    for row in &rows {
        if let Some(reference) = row.reference {
            let dev = (row.estimate - reference).abs();
            let (pass, rule) = if exp.regime == Regime::EverCollide {
                // exact law: a pure sampling test
                (dev <= 3.0 * row.se, "3 SE".to_string())
            } else {
                (dev <= tol * reference, format!("rel. tol {tol}"))
            };
            checks.push(Check::new(
                "estimate vs reference",
                pass,
                format!(
                    "{:.5e} ± {:.2e} vs {reference:.5e} ({rule}); {}",
                    row.estimate, row.se, row.params
                ),
            ));
        }
        checks.push(Check::new(
            "censoring",
            row.censored_fraction <= opts.censor_limit,
            format!("censored fraction {:.2e}", row.censored_fraction),
        ));
    }
    write_rows_csv(&out.join("estimates.csv"), &rows, sec.record_timing)?;
    Ok(Outcome {
        checks,
        artifacts: vec!["estimates.csv".into()],
        partial,
    })
}

fn params_of(exp: &Experiment) -> String {
    match &exp.system {
        System::Brownian { pair, n } => {
            let horizon = match pair.horizon {
                Horizon::Finite(r) => r.to_string(),
                Horizon::Infinite => "inf".into(),
            };
            format!(
                "d={};N={n};r_N={:e};separation={};R={horizon}",
                pair.d,
                pair.r_n,
                pair.separation()
            )
        }
        System::Ou { pair } => format!(
            "d={};N={};r_N={:e};tau=({},{});b=({},{});window=[{},{}]",
            pair.d, pair.n, pair.r_n, pair.tau1, pair.tau2, pair.b1, pair.b2, pair.t0, pair.t1
        ),
    }
}

fn run_smolu(cfg: &RunConfig, out: &Path, start: Instant) -> Result<Outcome> {
    let sec = cfg.smolu.as_ref().expect("resolved");
    let scfg = &sec.solver;
    let solver = Solver::new(scfg.clone())?;
    let grid = solver.grid;
    let mu0 = sec.initial.build(grid)?;
    let mut artifacts = Vec::new();
    let mut checks = Vec::new();

    // forward run in record-sized segments so the wall budget can cut in
    let steps = (scfg.t_end / scfg.dt).ceil().max(1.0) as usize;
    let h = scfg.t_end / steps as f64;
    let every = scfg.record_every.max(1);
    let mut path = SolutionPath {
        grid,
        times: vec![mu0.t],
        fields: vec![mu0.values.clone()],
        overflow: vec![mu0.overflow],
        clipped_mass: 0.0,
    };
    let mut field = mu0.clone();
    let mut partial = false;
    let mut done = 0;
    while done < steps {
        if cfg
            .budget
            .wall_time_s
            .is_some_and(|w| start.elapsed().as_secs_f64() > w)
        {
            partial = true;
            break;
        }
        let take = every.min(steps - done);
        // nominal step nudged up so `run` takes exactly `take` steps of `h`
        let seg = solver.run(&field, take as f64 * h, h * (1.0 + 1e-12), take)?;
        path.clipped_mass += seg.clipped_mass;
        field = seg.last();
        done += take;
        field.t = mu0.t + done as f64 * h;
        path.times.push(field.t);
        path.fields.push(field.values.clone());
        path.overflow.push(field.overflow);
    }

    let mut report = moment_monitor(&solver, &path)?;
    checks.push(Check::new(
        "moment monitor",
        report.ok(),
        if report.ok() {
            format!(
                "h0={:.4e}, C={:.4e}, T*={:.4e}",
                report.h0, report.inequality_constant, report.t_star
            )
        } else {
            report.violations.join("; ")
        },
    ));
    let total_mass = report.rows[0].mass_l1;
    checks.push(Check::new(
        "clipped mass",
        path.clipped_mass <= 1e-8 * total_mass,
        format!("{:.3e} of {total_mass:.6e}", path.clipped_mass),
    ));
    checks.push(mass_neutrality_check(solver.table(), &field));

    let oracle_rows = if sec.homogeneous {
        let bins = grid.mass.bins;
        let cell0 = mu0.values[..bins].to_vec();
        let tr = homogeneous_oracle(solver.table(), &cell0, &path.times, 1e-10, 1e-14)?;
        let vol = grid.torus.cell_volume() * grid.torus.n_cells() as f64;
        let ys = grid.mass.masses();
        let mut worst: f64 = 0.0;
        let rows: Vec<(f64, f64)> = (0..path.times.len())
            .map(|k| {
                let n = tr.number(k);
                let m = tr.moment(k, &ys);
                let here = report.rows[k].number_l1 / vol;
                worst = worst.max((here / n - 1.0).abs());
                (n, m)
            })
            .collect();
        checks.push(Check::new(
            "oracle agreement",
            worst <= sec.tolerance,
            format!(
                "max relative number error {worst:.3e} (tol {})",
                sec.tolerance
            ),
        ));
        Some(rows)
    } else {
        None
    };

    if let Some(p) = &sec.picard {
        let horizon = p.horizon.unwrap_or((0.9 * report.t_star).min(scfg.t_end));
        match solver.picard_solve(&mu0, horizon, p.steps, p.max_sweeps, p.tol) {
            Ok(o) => {
                let worst = o.factors.iter().copied().fold(0.0, f64::max);
                checks.push(Check::new(
                    "picard contraction",
                    o.converged && worst < 1.0,
                    format!(
                        "T={horizon:.4e}, {} sweeps, largest factor {worst:.3e}, converged={}",
                        o.distances.len(),
                        o.converged
                    ),
                ));
                report.attach_picard(&o);
                write_picard_csv(&out.join("picard.csv"), &o.distances, &o.factors)?;
                artifacts.push("picard.csv".into());
            }
            Err(Error::NotContracting { suggested_horizon }) => {
                checks.push(Check::new(
                    "picard contraction",
                    false,
                    format!("not contracting at T={horizon:.4e}; suggested horizon {suggested_horizon:.4e}"),
                ));
            }
            Err(e) => return Err(e),
        }
    }

    write_trajectory_csv(
        &out.join("trajectory.csv"),
        &path,
        &report,
        oracle_rows.as_deref(),
    )?;
    report.write_csv(&out.join("moments.csv"))?;
    field.write_checkpoint(&out.join("field-final.json"), &scfg.kernel.id())?;
    artifacts.splice(
        0..0,
        [
            "trajectory.csv".to_string(),
            "moments.csv".into(),
            "field-final.json".into(),
        ],
    );
    Ok(Outcome {
        checks,
        artifacts,
        partial,
    })
}

/// `⟨y, K⁺(μ)⟩ + overflow = ⟨y, K⁻(μ)⟩` in every cell of `field`.
fn mass_neutrality_check(table: &CoagTable, field: &MassField) -> Check {
    let bins = table.bins();
    let ys = table.masses();
    let mut worst: f64 = 0.0;
    for mu in field.values.chunks_exact(bins) {
        let (gain, of) = coag_gain(table, mu);
        let loss = coag_loss(table, mu);
        let g: f64 = gain.iter().zip(ys).map(|(v, y)| v * y).sum::<f64>() + of.mass;
        let l: f64 = loss.iter().zip(ys).map(|(v, y)| v * y).sum();
        if l > 0.0 {
            worst = worst.max((g - l).abs() / l);
        }
    }
    Check::new(
        "coagulation mass neutrality",
        worst <= 1e-12,
        format!("max relative imbalance {worst:.3e}"),
    )
}

fn write_trajectory_csv(
    path: &Path,
    sol: &SolutionPath,
    report: &MomentReport,
    oracle: Option<&[(f64, f64)]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "number",
        "mass",
        "w2_sup",
        "overflow_number",
        "overflow_mass",
        "oracle_number",
        "oracle_mass",
    ])?;
    for (k, row) in report.rows.iter().enumerate() {
        let of = sol.overflow[k];
        let (on, om) = match oracle {
            Some(o) => (format!("{:e}", o[k].0), format!("{:e}", o[k].1)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            format!("{:e}", row.t),
            format!("{:e}", row.number_l1),
            format!("{:e}", row.mass_l1),
            format!("{:e}", row.w2_sup),
            format!("{:e}", of.number),
            format!("{:e}", of.mass),
            on,
            om,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_picard_csv(path: &Path, distances: &[f64], factors: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sweep", "distance", "contraction_factor"])?;
    for (k, d) in distances.iter().enumerate() {
        let f = if k == 0 {
            String::new()
        } else {
            format!("{:e}", factors[k - 1])
        };
        w.write_record([k.to_string(), format!("{d:e}"), f])?;
    }
    w.flush()?;
    Ok(())
}

fn run_density(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let sec = cfg.density_check.as_ref().expect("resolved");
    let mut checks = Vec::new();
    let mut artifacts = vec!["sandwich.csv".to_string()];
    let rep = drift_sandwich_histogram(&sec.sandwich)?;
    let outside = rep.bins.iter().filter(|b| !b.within).count();
    checks.push(Check::new(
        "sandwich bounds",
        outside == 0,
        format!(
            "{outside} of {} bins outside the bounds at z={}",
            rep.bins.len(),
            sec.sandwich.z
        ),
    ));
    let mut w = csv::Writer::from_path(out.join("sandwich.csv"))?;
    w.write_record([
        "lo_edge", "hi_edge", "density", "se", "lower", "upper", "within",
    ])?;
    for b in &rep.bins {
        w.write_record([
            format!("{:e}", b.lo_edge),
            format!("{:e}", b.hi_edge),
            format!("{:e}", b.density),
            format!("{:e}", b.se),
            format!("{:e}", b.lower),
            format!("{:e}", b.upper),
            b.within.to_string(),
        ])?;
    }
    w.flush()?;
    if let Some(sat) = &sec.saturation {
        let rep = extremal_saturation(
            sat.a,
            sat.drift_bound,
            sat.t,
            &sat.deltas,
            sat.n_samples,
            sat.half_width,
            cfg.seed,
        )?;
        let worst = rep
            .checks
            .iter()
            .map(|c| c.z_score.abs())
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "extremal saturation",
            rep.all_within(sat.k),
            format!("largest |z| {worst:.2} (limit {})", sat.k),
        ));
        let mut w = csv::Writer::from_path(out.join("saturation.csv"))?;
        w.write_record(["delta", "toward", "estimate", "se", "bound", "z_score"])?;
        for c in &rep.checks {
            w.write_record([
                format!("{:e}", c.delta),
                c.toward.to_string(),
                format!("{:e}", c.estimate),
                format!("{:e}", c.se),
                format!("{:e}", c.bound),
                format!("{:e}", c.z_score),
            ])?;
        }
        w.flush()?;
        artifacts.push("saturation.csv".into());
    }
    Ok(Outcome {
        checks,
        artifacts,
        partial: false,
    })
}

fn run_oracle(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let sec = cfg.oracle.as_ref().expect("resolved");
    let grid = MassGrid::new(sec.delta, sec.rho, sec.bins)?;
    let table = CoagTable::new(&sec.kernel, &grid);
    let mut mu0 = sec.mu0.clone();
    mu0.resize(sec.bins, 0.0);
    let tr = homogeneous_oracle(&table, &mu0, &sec.times, sec.rtol, sec.atol)?;
    let ys = grid.masses();
    let m0: f64 = mu0.iter().zip(&ys).map(|(v, y)| v * y).sum();
    let mut worst_mass: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    let mut w = csv::Writer::from_path(out.join("oracle.csv"))?;
    w.write_record(["t", "number", "mass", "overflow_number", "overflow_mass"])?;
    for k in 0..tr.times.len() {
        let m = tr.moment(k, &ys);
        let of = tr.overflow[k];
        worst_mass = worst_mass.max(((m + of.mass) / m0 - 1.0).abs());
        min_value = tr.states[k].iter().copied().fold(min_value, f64::min);
        w.write_record([
            format!("{:e}", tr.times[k]),
            format!("{:e}", tr.number(k)),
            format!("{m:e}"),
            format!("{:e}", of.number),
            format!("{:e}", of.mass),
        ])?;
    }
    w.flush()?;
    let mut checks = vec![
        Check::new(
            "mass conservation",
            worst_mass <= 1e-9,
            format!("max relative drift {worst_mass:.3e} (overflow included)"),
        ),
        Check::new(
            "nonnegativity",
            min_value >= -10.0 * sec.atol,
            format!("min entry {min_value:.3e}"),
        ),
    ];
    if let (MassKernel::Constant(c), [n0]) = (sec.kernel, sec.mu0.as_slice()) {
        // monodisperse start: n(t) = n0 / (1 + c n0 t / 2)
        let worst = (0..tr.times.len())
            .map(|k| {
                let exact = n0 / (1.0 + c * n0 * tr.times[k] / 2.0);
                ((tr.number(k) + tr.overflow[k].number) / exact - 1.0).abs()
            })
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "closed-form number",
            worst <= 1e-6,
            format!("max relative error {worst:.3e}"),
        ));
    }
    Ok(Outcome {
        checks,
        artifacts: vec!["oracle.csv".into()],
        partial: false,
    })
}

/// Builds the resolved config from the command line.
pub fn config_from_cli(cli: &Cli) -> Result<RunConfig> {
    let kind = match cli.command {
        CliCommand::Collide { .. } => CommandKind::Collide,
        CliCommand::Smolu { .. } => CommandKind::Smolu,
        CliCommand::DensityCheck => CommandKind::DensityCheck,
        CliCommand::Oracle { .. } => CommandKind::Oracle,
    };
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::minimal(kind),
    };
    if cfg.command != kind {
        return Err(Error::config(
            "command",
            format!(
                "config is for {:?} but the subcommand is {kind:?}",
                cfg.command
            ),
        ));
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.paths {
        cfg.budget.paths = Some(p);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    match cli.command {
        CliCommand::Collide { regime: Some(r) } => {
            let sec = cfg.collide.get_or_insert_with(Default::default);
            sec.regime = Some(r.into());
        }
        CliCommand::Smolu {
            kernel,
            homogeneous,
        } => {
            if kernel.is_some() || homogeneous {
                let base = cfg.smolu.take();
                let kernel = kernel.map(MassKernel::from);
                let mut sec = base.unwrap_or_else(|| SmoluSection {
                    solver: preset_solver(kernel.unwrap_or(MassKernel::Constant(1.0))),
                    initial: InitialCondition::Gaussian {
                        width: 1.0,
                        bins: vec![0.5],
                    },
                    homogeneous: false,
                    tolerance: default_oracle_tolerance(),
                    picard: None,
                });
                if let Some(k) = kernel {
                    sec.solver.kernel = k;
                    sec.solver.weights = preset_solver(k).weights;
                }
                if homogeneous {
                    sec.homogeneous = true;
                    sec.initial = InitialCondition::Uniform { bins: vec![1.0] };
                }
                cfg.smolu = Some(sec);
            }
        }
        CliCommand::Oracle { kernel: Some(k) } => {
            let mut probe = RunConfig::minimal(CommandKind::Oracle).resolve()?;
            let mut sec = cfg
                .oracle
                .take()
                .unwrap_or_else(|| probe.oracle.take().expect("resolved"));
            sec.kernel = k.into();
            cfg.oracle = Some(sec);
        }
        _ => {}
    }
    cfg.resolve()
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_PASS
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let cfg = match config_from_cli(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("coagdiff-out"));
    match run(&cfg, &out) {
        Ok(summary) => {
            if cli.json_summary {
                match serde_json::to_string_pretty(&summary) {
                    Ok(s) => println!("{s}"),
                    Err(e) => eprintln!("summary: {e}"),
                }
            } else {
                for c in &summary.checks {
                    println!(
                        "{} {}: {}",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.name,
                        c.detail
                    );
                }
                println!("{} ({})", summary.status, summary.out.display());
            }
            summary.exit_code()
        }
        Err(e @ (Error::Config { .. } | Error::Json(_))) => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
        Err(Error::Budget(msg)) => {
            eprintln!("budget exceeded: {msg}");
            EXIT_PARTIAL
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("FAIL run: {e}");
            EXIT_CHECK_FAILED
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_collide_resolves_to_preset() {
        let cfg = RunConfig::from_json(r#"{"command": "collide"}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(cfg.seed, 0);
        let exp = cfg.collide.as_ref().unwrap().experiment.as_ref().unwrap();
        assert_eq!(exp.system.d(), 3);
        assert_eq!(exp.regime, Regime::EverCollide);
        let text = serde_json::to_string(&cfg).unwrap();
        let again = RunConfig::from_json(&text).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.resolve().unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_json(r#"{"command": "collide", "sed": 3}"#).unwrap_err();
        assert!(err.to_string().contains("sed"), "{err}");
    }

    #[test]
    fn negative_radius_names_field() {
        let mut cfg = RunConfig::minimal(CommandKind::Collide).resolve().unwrap();
        let exp = cfg.collide.as_mut().unwrap().experiment.as_mut().unwrap();
        if let System::Brownian { pair, .. } = &mut exp.system {
            pair.r_n = -0.01;
        }
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("r_n"), "{err}");
    }

    #[test]
    fn every_preset_validates() {
        for r in [
            Regime::EverCollide,
            Regime::Brownian,
            Regime::OuFast,
            Regime::OuSlow,
        ] {
            preset_experiment(r).validate().unwrap();
            assert!(preset_experiment(r).reference().unwrap() > 0.0);
        }
    }
}
