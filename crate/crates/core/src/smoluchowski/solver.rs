use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::coag::CoagTable;
use super::grid::{MassField, MassGrid, Overflow, SignedMassField, SolverGrid, Torus};
use super::semigroup::{clamp_roundoff, SpectralOperator};
use crate::error::{require_positive, Error, Result};
use crate::kernels::{MassKernel, PowerLaw, WeightSpec};

fn one() -> f64 {
    1.0
}

fn default_stability() -> f64 {
    0.5
}

fn default_record() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    /// Box side `L`.
    pub length: f64,
    /// Cells per side.
    pub cells: usize,
    #[serde(default = "one")]
    pub delta: f64,
    pub rho: f64,
    pub bins: usize,
    pub kernel: MassKernel,
    /// `a(y)`.
    pub diffusivity: PowerLaw,
    /// Drift-magnitude law `B(y)`; when set, diffusion uses `Q_t`.
    #[serde(default)]
    pub drift: Option<PowerLaw>,
    pub weights: WeightSpec,
    pub dt: f64,
    pub t_end: f64,
    /// Record every k-th step of a forward run.
    #[serde(default = "default_record")]
    pub record_every: usize,
    /// Bound on `dt · max loss rate` for the explicit coagulation stage.
    #[serde(default = "default_stability")]
    pub stability: f64,
}

fn default_d() -> usize {
    3
}

impl SolverConfig {
    pub fn grid(&self) -> Result<SolverGrid> {
        Ok(SolverGrid {
            torus: Torus::new(self.d, self.length, self.cells)?,
            mass: MassGrid::new(self.delta, self.rho, self.bins)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.weights.validate()?;
        require_positive("dt", self.dt)?;
        require_positive("t_end", self.t_end)?;
        require_positive("diffusivity.coef", self.diffusivity.coef)?;
        if let Some(b) = self.drift {
            if !(b.coef >= 0.0) {
                return Err(Error::config("drift", "drift magnitude must be >= 0"));
            }
        }
        if !(self.stability > 0.0 && self.stability <= 1.0) {
            return Err(Error::config("stability", "must lie in (0, 1]"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be >= 1"));
        }
        Ok(())
    }
}

/// Initial data for the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Density `bins[j]` everywhere.
    Uniform { bins: Vec<f64> },
    /// `bins[j] · exp(-|x - c|² / (2 width²))` around the box centre.
    Gaussian { width: f64, bins: Vec<f64> },
}

impl InitialCondition {
    pub fn build(&self, grid: SolverGrid) -> Result<MassField> {
        let check = |bins: &Vec<f64>| -> Result<()> {
            if bins.len() > grid.mass.bins {
                return Err(Error::config("initial.bins", "more entries than mass bins"));
            }
            Ok(())
        };
        match self {
            InitialCondition::Uniform { bins } => {
                check(bins)?;
                MassField::uniform(grid, bins)
            }
            InitialCondition::Gaussian { width, bins } => {
                check(bins)?;
                require_positive("initial.width", *width)?;
                let c = grid.torus.length / 2.0;
                MassField::from_fn(grid, |x, j| {
                    let r2: f64 = x.iter().map(|xi| (xi - c).powi(2)).sum();
                    bins.get(j).copied().unwrap_or(0.0) * (-r2 / (2.0 * width * width)).exp()
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Mass removed by clipping negative entries after the coagulation stage.
    pub clipped_mass: f64,
    pub overflow: Overflow,
}

/// Recorded snapshots of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPath {
    pub grid: SolverGrid,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    /// Cumulative overflow at each recorded time.
    pub overflow: Vec<Overflow>,
    pub clipped_mass: f64,
}

impl SolutionPath {
    pub fn field(&self, k: usize) -> MassField {
        MassField {
            grid: self.grid,
            t: self.times[k],
            values: self.fields[k].clone(),
            overflow: self.overflow[k],
        }
    }

    pub fn last(&self) -> MassField {
        self.field(self.times.len() - 1)
    }
}

/// Signed path of the linearised flow.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedPath {
    pub grid: SolverGrid,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    pub overflow: Vec<Overflow>,
}

/// Picard run result.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub path: SolutionPath,
    /// `d_T(ν^{k+1}, ν^k)` per sweep.
    pub distances: Vec<f64>,
    /// Ratios of successive distances.
    pub factors: Vec<f64>,
    pub converged: bool,
    /// `sup_t ‖⟨w², ν⟩‖_∞` over all iterates.
    pub w2_sup: f64,
}

/// Precomputed operators for one configuration.
pub struct Solver {
    pub config: SolverConfig,
    pub grid: SolverGrid,
    table: CoagTable,
    a: Vec<f64>,
    b: Option<Vec<f64>>,
    w: Vec<f64>,
    cache: Mutex<Vec<(u64, Arc<SpectralOperator>)>>,
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver")
            .field("config", &self.config)
            .finish()
    }
}

impl Solver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let ys = grid.mass.masses();
        Ok(Self {
            table: CoagTable::new(&config.kernel, &grid.mass),
            a: ys.iter().map(|&y| config.diffusivity.eval(y)).collect(),
            b: config
                .drift
                .map(|law| ys.iter().map(|&y| law.eval(y)).collect()),
            w: ys.iter().map(|&y| config.weights.w(y)).collect(),
            grid,
            config,
            cache: Mutex::new(Vec::new()),
        })
    }

    pub fn table(&self) -> &CoagTable {
        &self.table
    }

    pub fn diffusivities(&self) -> &[f64] {
        &self.a
    }

    /// `w(y_j)` per bin.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w2(&self) -> Vec<f64> {
        self.w.iter().map(|w| w * w).collect()
    }

    /// `w(y_j) v(y_j)`, when the weights are a pair bound.
    pub fn wv(&self) -> Option<Vec<f64>> {
        let ys = self.grid.mass.masses();
        ys.iter()
            .map(|&y| {
                self.config
                    .weights
                    .v(y)
                    .map(|v| v * self.config.weights.w(y))
            })
            .collect()
    }

    /// Diffusion over `dt`: `Q_dt` if a drift law is set, else `P_dt`.
    pub fn diffusion(&self, dt: f64) -> Result<Arc<SpectralOperator>> {
        let key = dt.to_bits();
        let mut cache = self.cache.lock().expect("operator cache poisoned");
        if let Some((_, op)) = cache.iter().find(|(k, _)| *k == key) {
            return Ok(op.clone());
        }
        let op = Arc::new(match &self.b {
            Some(b) => SpectralOperator::drift(self.grid.torus, &self.a, b, dt)?,
            None => SpectralOperator::heat(self.grid.torus, &self.a, dt)?,
        });
        if cache.len() > 16 {
            cache.remove(0);
        }
        cache.push((key, op.clone()));
        Ok(op)
    }

    /// Pure heat flow `P_dt`, used by the monitors whatever the diffusion.
    pub fn heat(&self, dt: f64) -> Result<SpectralOperator> {
        SpectralOperator::heat(self.grid.torus, &self.a, dt)
    }

    fn check_field(&self, grid: &SolverGrid) -> Result<()> {
        if *grid != self.grid {
            return Err(Error::config(
                "field",
                "field grid does not match the solver grid",
            ));
        }
        Ok(())
    }

    /// Largest `dt` the explicit coagulation stage accepts for this field.
    pub fn stable_dt(&self, values: &[f64]) -> f64 {
        let rate = self.table.max_loss_rate(values);
        if rate > 0.0 {
            self.config.stability / rate
        } else {
            f64::INFINITY
        }
    }

    /// Half diffusion, SSP-RK2 coagulation, half diffusion. The field is left
    /// untouched if the step is rejected.
    pub fn strang_step(&self, field: &mut MassField, dt: f64) -> Result<StepReport> {
        self.check_field(&field.grid)?;
        require_positive("dt", dt)?;
        let half = self.diffusion(0.5 * dt)?;
        let mut u = field.values.clone();
        half.apply(&mut u);
        clamp_roundoff(&mut u);
        let stable = self.stable_dt(&u);
        if dt > stable {
            return Err(Error::Stability {
                dt,
                suggested: stable,
            });
        }
        let vol = self.grid.torus.cell_volume();
        let mut k = vec![0.0; u.len()];
        let of1 = self.table.net_rate(&u, &mut k);
        let u1: Vec<f64> = u.iter().zip(&k).map(|(x, r)| x + dt * r).collect();
        let of2 = self.table.net_rate(&u1, &mut k);
        let ys = self.grid.mass.masses();
        let bins = ys.len();
        let mut clipped = 0.0;
        for (i, (x, (x1, r))) in u.iter_mut().zip(u1.iter().zip(&k)).enumerate() {
            let v = 0.5 * *x + 0.5 * (x1 + dt * r);
            if v < 0.0 {
                clipped += -v * ys[i % bins];
                *x = 0.0;
            } else {
                *x = v;
            }
        }
        half.apply(&mut u);
        clamp_roundoff(&mut u);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "field after step at t={}",
                field.t
            )));
        }
        let overflow = Overflow {
            number: 0.5 * dt * vol * (of1.number + of2.number),
            mass: 0.5 * dt * vol * (of1.mass + of2.mass),
        };
        field.values = u;
        field.t += dt;
        field.overflow.number += overflow.number;
        field.overflow.mass += overflow.mass;
        Ok(StepReport {
            clipped_mass: clipped * vol,
            overflow,
        })
    }

    /// Step of `dt`, split into halves on rejection.
    fn advance(&self, field: &mut MassField, dt: f64, depth: u32) -> Result<StepReport> {
        match self.strang_step(field, dt) {
            Err(Error::Stability { suggested, .. }) if depth < 30 => {
                let pieces = (dt / suggested).ceil().max(2.0).min(1e6) as usize;
                let h = dt / pieces as f64;
                let mut total = StepReport::default();
                for _ in 0..pieces {
                    let r = self.advance(field, h, depth + 1)?;
                    total.clipped_mass += r.clipped_mass;
                    total.overflow.number += r.overflow.number;
                    total.overflow.mass += r.overflow.mass;
                }
                Ok(total)
            }
            other => other,
        }
    }

    /// Forward run to `t_end` with nominal step `dt`, refining steps that
    /// violate the stability bound.
    pub fn run(
        &self,
        mu0: &MassField,
        t_end: f64,
        dt: f64,
        record_every: usize,
    ) -> Result<SolutionPath> {
        self.check_field(&mu0.grid)?;
        require_positive("t_end", t_end)?;
        require_positive("dt", dt)?;
        let steps = (t_end / dt).ceil().max(1.0) as usize;
        let h = t_end / steps as f64;
        let mut field = mu0.clone();
        let mut path = SolutionPath {
            grid: self.grid,
            times: vec![field.t],
            fields: vec![field.values.clone()],
            overflow: vec![field.overflow],
            clipped_mass: 0.0,
        };
        let t0 = field.t;
        for s in 1..=steps {
            let r = self.advance(&mut field, h, 0)?;
            field.t = t0 + s as f64 * h;
            path.clipped_mass += r.clipped_mass;
            if s % record_every.max(1) == 0 || s == steps {
                path.times.push(field.t);
                path.fields.push(field.values.clone());
                path.overflow.push(field.overflow);
            }
        }
        Ok(path)
    }

    /// Diffusion-only path on the given time nodes.
    pub fn diffusion_path(&self, mu0: &MassField, times: &[f64]) -> Result<SolutionPath> {
        self.check_field(&mu0.grid)?;
        let mut values = mu0.values.clone();
        let mut fields = vec![values.clone()];
        for w in times.windows(2) {
            self.diffusion(w[1] - w[0])?.apply(&mut values);
            clamp_roundoff(&mut values);
            fields.push(values.clone());
        }
        Ok(SolutionPath {
            grid: self.grid,
            times: times.to_vec(),
            overflow: vec![mu0.overflow; times.len()],
            fields,
            clipped_mass: 0.0,
        })
    }

    /// Solves the frozen-background linear equation
    /// `∂q = diffusion + K^{ν+}(q) - K^{ν-}(q)` on the time nodes of `nu`,
    /// by Strang splitting with an SSP-RK2 reaction stage that reads the
    /// background at both ends of each substep.
    pub fn linearized_solve(&self, nu: &SolutionPath, q0: &SignedMassField) -> Result<SignedPath> {
        self.check_field(&nu.grid)?;
        self.check_field(&q0.grid)?;
        for f in &nu.fields {
            if f.iter().any(|v| !(v.is_finite() && *v >= -1e-12)) {
                return Err(Error::domain("background must be finite and nonnegative"));
            }
        }
        let vol = self.grid.torus.cell_volume();
        let mut q = q0.values.clone();
        let mut of = q0.overflow;
        let mut path = SignedPath {
            grid: self.grid,
            times: nu.times.clone(),
            fields: vec![q.clone()],
            overflow: vec![of],
        };
        let n = q.len();
        let mut k = vec![0.0; n];
        let mut nu_a = vec![0.0; n];
        let mut nu_b = vec![0.0; n];
        for idx in 0..nu.times.len() - 1 {
            let h = nu.times[idx + 1] - nu.times[idx];
            let (f0, f1) = (&nu.fields[idx], &nu.fields[idx + 1]);
            let rate = self
                .table
                .max_loss_rate(f0)
                .max(self.table.max_loss_rate(f1));
            let sub = ((h * rate / self.config.stability).ceil() as usize).max(1);
            let hs = h / sub as f64;
            let half = self.diffusion(0.5 * hs)?;
            for s in 0..sub {
                let (la, lb) = (s as f64 / sub as f64, (s + 1) as f64 / sub as f64);
                for i in 0..n {
                    nu_a[i] = (1.0 - la) * f0[i] + la * f1[i];
                    nu_b[i] = (1.0 - lb) * f0[i] + lb * f1[i];
                }
                half.apply(&mut q);
                let o1 = self.table.linear_net_rate(&nu_a, &q, &mut k);
                let q1: Vec<f64> = q.iter().zip(&k).map(|(x, r)| x + hs * r).collect();
                let o2 = self.table.linear_net_rate(&nu_b, &q1, &mut k);
                for ((x, x1), r) in q.iter_mut().zip(&q1).zip(&k) {
                    *x = 0.5 * *x + 0.5 * (x1 + hs * r);
                }
                half.apply(&mut q);
                of.number += 0.5 * hs * vol * (o1.number + o2.number);
                of.mass += 0.5 * hs * vol * (o1.mass + o2.mass);
            }
            if q.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "linearised field at t={}",
                    nu.times[idx + 1]
                )));
            }
            path.fields.push(q.clone());
            path.overflow.push(of);
        }
        Ok(path)
    }

    /// `d_T = sup_s ‖⟨w, |a_s - b_s|⟩‖₁`.
    pub fn path_distance(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let diff: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
                self.grid.weighted_l1(&diff, &self.w)
            })
            .fold(0.0, f64::max)
    }

    /// Picard iteration `ν ← f(ν)` from the diffusion-only path on `steps`
    /// uniform steps over `[0, t_end]`.
    pub fn picard_solve(
        &self,
        mu0: &MassField,
        t_end: f64,
        steps: usize,
        max_sweeps: usize,
        tol: f64,
    ) -> Result<PicardOutcome> {
        require_positive("t_end", t_end)?;
        require_positive("tol", tol)?;
        if steps == 0 || max_sweeps == 0 {
            return Err(Error::config(
                "steps",
                "need at least one step and one sweep",
            ));
        }
        if !mu0.mass_l1().is_finite() {
            return Err(Error::domain("initial mass must be finite"));
        }
        let times: Vec<f64> = (0..=steps)
            .map(|k| mu0.t + t_end * k as f64 / steps as f64)
            .collect();
        let mut nu = self.diffusion_path(mu0, &times)?;
        let q0 = SignedMassField::from(mu0.clone());
        let w2 = self.w2();
        let path_w2 = |p: &SolutionPath| {
            p.fields
                .iter()
                .map(|f| self.grid.weighted_sup(f, &w2))
                .fold(0.0, f64::max)
        };
        let mut w2_sup = path_w2(&nu);
        let mut distances = Vec::new();
        let mut factors = Vec::new();
        let mut streak = 0;
        let mut converged = false;
        for _ in 0..max_sweeps {
            let q = self.linearized_solve(&nu, &q0)?;
            let dist = self.path_distance(&q.fields, &nu.fields);
            let mut fields = q.fields;
            for f in fields.iter_mut() {
                clamp_roundoff(f);
            }
            nu = SolutionPath {
                grid: self.grid,
                times: times.clone(),
                fields,
                overflow: q.overflow,
                clipped_mass: 0.0,
            };
            w2_sup = w2_sup.max(path_w2(&nu));
            let factor = distances
                .last()
                .map(|p: &f64| if *p > 0.0 { dist / p } else { 0.0 });
            distances.push(dist);
            if let Some(f) = factor {
                factors.push(f);
                streak = if f >= 1.0 { streak + 1 } else { 0 };
            }
            if dist <= tol && factor.is_none_or(|f| f < 1.0) {
                converged = true;
                break;
            }
            if streak >= 3 {
                return Err(Error::NotContracting {
                    suggested_horizon: suggested_horizon(w2_sup),
                });
            }
        }
        Ok(PicardOutcome {
            path: nu,
            distances,
            factors,
            converged,
            w2_sup,
        })
    }
}

/// Horizon at which the Lipschitz bound `2 c T` of the Picard map is 1/2.
pub fn suggested_horizon(w2_sup: f64) -> f64 {
    if w2_sup > 0.0 {
        0.25 / w2_sup
    } else {
        f64::INFINITY
    }
}

/// Free-function form of [`Solver::strang_step`].
pub fn strang_step(solver: &Solver, field: &mut MassField, dt: f64) -> Result<StepReport> {
    solver.strang_step(field, dt)
}

pub fn linearized_solve(
    solver: &Solver,
    nu: &SolutionPath,
    q0: &SignedMassField,
) -> Result<SignedPath> {
    solver.linearized_solve(nu, q0)
}

pub fn picard_solve(
    solver: &Solver,
    mu0: &MassField,
    t_end: f64,
    steps: usize,
    max_sweeps: usize,
    tol: f64,
) -> Result<PicardOutcome> {
    solver.picard_solve(mu0, t_end, steps, max_sweeps, tol)
}
