use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    bridge_collision_check, hit_record, norm, segment_entry, to_point, CollisionExperiment,
    CollisionOutcome, DriftField, PathRng, Point, ScalarField, MAX_DIM,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Horizon {
    Finite(f64),
    /// Run until collision or escape; needs constant coefficients, zero
    /// drift and `d >= 3` so the escape law `(r/ρ)^{d-2}` is exact.
    Infinite,
}

/// Step-size control for the Brownian pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrownianStepping {
    /// Diffusive step: `√(a_eff dt) <= kappa · gap`.
    pub kappa: f64,
    /// Step floor as a fraction of the collision radius.
    pub kappa_floor: f64,
    /// Largest allowed step.
    pub h: f64,
    /// Escape radius as a multiple of the initial separation (infinite horizon).
    pub escape_factor: f64,
    pub max_steps: u64,
    pub bridge: bool,
}

impl Default for BrownianStepping {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            kappa_floor: 0.05,
            h: 0.5,
            escape_factor: 10.0,
            max_steps: 5_000_000,
            bridge: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub d: usize,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub a1: ScalarField,
    pub a2: ScalarField,
    #[serde(default = "zero_drift")]
    pub b1: DriftField,
    #[serde(default = "zero_drift")]
    pub b2: DriftField,
    pub r_n: f64,
    pub horizon: Horizon,
    /// Masses weighting the recorded centre `X(T)`.
    #[serde(default = "unit_masses")]
    pub masses: (f64, f64),
    /// Declared bound `R` with `1/R <= aᵢ <= R` and `|bᵢ| <= R`, if any.
    #[serde(default)]
    pub declared_bound: Option<f64>,
    #[serde(default)]
    pub stepping: BrownianStepping,
    #[serde(default)]
    pub seed: u64,
}

fn zero_drift() -> DriftField {
    DriftField::Zero
}

fn unit_masses() -> (f64, f64) {
    (1.0, 1.0)
}

impl PairConfig {
    /// Constant-coefficient driftless pair.
    pub fn constant(
        d: usize,
        a1: f64,
        a2: f64,
        separation: f64,
        r_n: f64,
        horizon: Horizon,
    ) -> Self {
        let mut x2 = vec![0.0; d];
        x2[0] = separation;
        Self {
            d,
            x1: vec![0.0; d],
            x2,
            a1: ScalarField::constant(a1),
            a2: ScalarField::constant(a2),
            b1: DriftField::Zero,
            b2: DriftField::Zero,
            r_n,
            horizon,
            masses: (1.0, 1.0),
            declared_bound: None,
            stepping: BrownianStepping::default(),
            seed: 0,
        }
    }

    pub fn separation(&self) -> f64 {
        self.x1
            .iter()
            .zip(&self.x2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn constant_coefficients(&self) -> bool {
        self.a1.is_constant() && self.a2.is_constant() && self.b1.is_zero() && self.b2.is_zero()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > MAX_DIM {
            return Err(Error::config(
                "d",
                format!("dimension must be in 1..={MAX_DIM}, got {}", self.d),
            ));
        }
        if self.x1.len() != self.d || self.x2.len() != self.d {
            return Err(Error::config("x1", "start points must have d coordinates"));
        }
        if !(self.r_n > 0.0 && self.r_n.is_finite()) {
            return Err(Error::config(
                "r_n",
                format!("collision radius must be > 0, got {}", self.r_n),
            ));
        }
        if self.separation() <= self.r_n {
            return Err(Error::config(
                "r_n",
                format!(
                    "particles start inside the collision set: |x1 - x2| = {} <= r_n = {}",
                    self.separation(),
                    self.r_n
                ),
            ));
        }
        self.a1.validate("a1")?;
        self.a2.validate("a2")?;
        self.b1.validate("b1", self.d)?;
        self.b2.validate("b2", self.d)?;
        if let Some(r) = self.declared_bound {
            for (name, f) in [("a1", &self.a1), ("a2", &self.a2)] {
                let (lo, hi) = f.bounds();
                if lo < 1.0 / r || hi > r {
                    return Err(Error::config(
                        name,
                        format!("range [{lo}, {hi}] violates declared bound R = {r}"),
                    ));
                }
            }
            for (name, f) in [("b1", &self.b1), ("b2", &self.b2)] {
                if f.coord_bound() * (self.d as f64).sqrt() > r {
                    return Err(Error::config(
                        name,
                        format!("drift norm may exceed declared bound R = {r}"),
                    ));
                }
            }
        }
        match self.horizon {
            Horizon::Finite(r) if !(r > 0.0 && r.is_finite()) => {
                return Err(Error::config(
                    "horizon",
                    format!("horizon must be > 0, got {r}"),
                ));
            }
            Horizon::Infinite => {
                if !self.constant_coefficients() || self.d < 3 {
                    return Err(Error::config(
                        "horizon",
                        "an infinite horizon needs d >= 3, constant diffusivities and zero drift",
                    ));
                }
            }
            _ => {}
        }
        let s = &self.stepping;
        if !(s.kappa > 0.0 && s.kappa_floor > 0.0 && s.h > 0.0 && s.escape_factor > 1.0) {
            return Err(Error::config(
                "stepping",
                "kappa, kappa_floor, h must be > 0 and escape_factor > 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianState {
    pub x1: Point,
    pub x2: Point,
    pub t: f64,
}

impl BrownianState {
    pub fn start(cfg: &PairConfig) -> Self {
        Self {
            x1: to_point(&cfg.x1),
            x2: to_point(&cfg.x2),
            t: 0.0,
        }
    }
}

/// Euler–Maruyama step of both particles; exact in law for constant
/// diffusivity and zero drift.
pub fn step_brownian_pair<R: Rng + ?Sized>(
    state: &mut BrownianState,
    cfg: &PairConfig,
    dt: f64,
    rng: &mut R,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be > 0, got {dt}")));
    }
    let d = cfg.d;
    let a1 = cfg.a1.eval(&state.x1[..d]);
    let a2 = cfg.a2.eval(&state.x2[..d]);
    let mut b1 = [0.0; MAX_DIM];
    let mut b2 = [0.0; MAX_DIM];
    cfg.b1.eval_into(&state.x1[..d], &mut b1[..d]);
    cfg.b2.eval_into(&state.x2[..d], &mut b2[..d]);
    advance(state, d, dt, (a1, a2), (&b1, &b2), rng)
}

#[inline]
fn advance<R: Rng + ?Sized>(
    state: &mut BrownianState,
    d: usize,
    dt: f64,
    a: (f64, f64),
    b: (&Point, &Point),
    rng: &mut R,
) -> Result<()> {
    let s1 = (a.0 * dt).sqrt();
    let s2 = (a.1 * dt).sqrt();
    for k in 0..d {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        state.x1[k] += s1 * z1 + b.0[k] * dt;
        state.x2[k] += s2 * z2 + b.1[k] * dt;
    }
    if !(state.x1[..d]
        .iter()
        .chain(&state.x2[..d])
        .all(|v| v.is_finite()))
    {
        return Err(Error::NonFinite(format!(
            "particle position after step at t={}",
            state.t
        )));
    }
    state.t += dt;
    Ok(())
}

fn run_brownian(cfg: &PairConfig, rng: &mut PathRng) -> Result<CollisionOutcome> {
    let d = cfg.d;
    let r = cfg.r_n;
    let st = &cfg.stepping;
    let mut state = BrownianState::start(cfg);
    let escape = match cfg.horizon {
        Horizon::Infinite => Some(st.escape_factor * cfg.separation()),
        Horizon::Finite(_) => None,
    };
    let horizon = match cfg.horizon {
        Horizon::Finite(h) => h,
        Horizon::Infinite => f64::INFINITY,
    };
    let mut rel = [0.0; MAX_DIM];
    let mut b1 = [0.0; MAX_DIM];
    let mut b2 = [0.0; MAX_DIM];
    let mut steps = 0u64;
    let mut min_dist = f64::INFINITY;
    loop {
        for k in 0..d {
            rel[k] = state.x1[k] - state.x2[k];
        }
        let dist = norm(&rel[..d]);
        min_dist = min_dist.min(dist);
        if let Some(esc) = escape {
            if dist >= esc {
                // exact: a driftless constant-coefficient pair at distance ρ
                // ever meets with probability (r/ρ)^{d-2}
                let p = (r / dist).powi(d as i32 - 2);
                let hit = rng.random::<f64>() < p;
                let mut out = CollisionOutcome::miss(steps, min_dist, false);
                if hit {
                    out.hit = true;
                    out.escaped = true;
                }
                return Ok(out);
            }
        }
        if state.t >= horizon {
            return Ok(CollisionOutcome::miss(steps, min_dist, false));
        }
        if steps >= st.max_steps {
            return Ok(CollisionOutcome::miss(steps, min_dist, true));
        }
        let a1 = cfg.a1.eval(&state.x1[..d]);
        let a2 = cfg.a2.eval(&state.x2[..d]);
        if !(a1.is_finite() && a2.is_finite() && a1 > 0.0 && a2 > 0.0) {
            return Err(Error::NonFinite(format!(
                "diffusivity ({a1}, {a2}) at t={}",
                state.t
            )));
        }
        cfg.b1.eval_into(&state.x1[..d], &mut b1[..d]);
        cfg.b2.eval_into(&state.x2[..d], &mut b2[..d]);
        let a_eff = a1 + a2;
        let b_rel = (0..d).map(|k| (b1[k] - b2[k]).powi(2)).sum::<f64>().sqrt();
        let gap = dist - r;
        let mut dt = (st.kappa * gap).powi(2) / a_eff;
        let mut floor = (st.kappa_floor * r).powi(2) / a_eff;
        if b_rel > 0.0 {
            dt = dt.min(st.kappa * gap / b_rel);
            floor = floor.min(st.kappa_floor * r / b_rel);
        }
        dt = dt.max(floor).min(st.h).min(horizon - state.t);
        let before = state;
        advance(&mut state, d, dt, (a1, a2), (&b1, &b2), rng)?;
        steps += 1;
        let mut rel_after = [0.0; MAX_DIM];
        for k in 0..d {
            rel_after[k] = state.x1[k] - state.x2[k];
        }
        let dist_after = norm(&rel_after[..d]);
        let weights = cfg.masses;
        if dist_after <= r {
            let s = segment_entry(&rel[..d], &rel_after[..d], r).unwrap_or(1.0);
            return Ok(hit_record(
                d, &before.x1, &state.x1, &before.x2, &state.x2, s, before.t, dt, weights, r,
                steps, min_dist,
            ));
        }
        if st.bridge && bridge_collision_check(&rel[..d], &rel_after[..d], a_eff, dt, r, rng) {
            // place the hit where the straight-line gap interpolation is smallest
            let g0 = dist - r;
            let g1 = dist_after - r;
            let s = g0 / (g0 + g1);
            return Ok(hit_record(
                d, &before.x1, &state.x1, &before.x2, &state.x2, s, before.t, dt, weights, r,
                steps, min_dist,
            ));
        }
    }
}

impl CollisionExperiment for PairConfig {
    fn dim(&self) -> usize {
        self.d
    }

    fn collision_radius(&self) -> f64 {
        self.r_n
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn run_path(&self, rng: &mut PathRng) -> Result<CollisionOutcome> {
        run_brownian(self, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::path_rng;

    #[test]
    fn unit_step_has_unit_variance() {
        let cfg = PairConfig::constant(3, 1.0, 1.0, 1.0, 0.01, Horizon::Finite(1.0));
        let mut rng = path_rng(1, 0);
        let n = 100_000;
        let mut s2 = 0.0;
        for _ in 0..n {
            let mut st = BrownianState::start(&cfg);
            step_brownian_pair(&mut st, &cfg, 1.0, &mut rng).unwrap();
            s2 += st.x1[0] * st.x1[0];
        }
        let var = s2 / n as f64;
        // SE of a sample variance of N(0,1) is sqrt(2/n)
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "{var}");
    }

    #[test]
    fn constant_drift_moves_mean() {
        let mut cfg = PairConfig::constant(3, 1.0, 1.0, 1.0, 0.01, Horizon::Finite(1.0));
        cfg.b1 = DriftField::Constant {
            value: vec![1.0, 0.0, 0.0],
        };
        let mut rng = path_rng(2, 0);
        let n = 100_000;
        let mut m = 0.0;
        for _ in 0..n {
            let mut st = BrownianState::start(&cfg);
            step_brownian_pair(&mut st, &cfg, 0.5, &mut rng).unwrap();
            m += st.x1[0];
        }
        let mean = m / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * (0.5 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn validation_rejects_start_inside() {
        let cfg = PairConfig::constant(3, 0.5, 0.5, 0.01, 0.02, Horizon::Finite(1.0));
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("r_n"), "{err}");
        let mut cfg = PairConfig::constant(3, 0.5, 0.5, 1.0, 0.02, Horizon::Infinite);
        cfg.a1 = ScalarField::Sine {
            base: 1.0,
            amplitude: 0.5,
            wavenumber: 1.0,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = PairConfig::constant(3, 0.5, 0.5, 0.2, 0.05, Horizon::Finite(2.0));
        let a = run_brownian(&cfg, &mut path_rng(9, 17)).unwrap();
        let b = run_brownian(&cfg, &mut path_rng(9, 17)).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn hits_land_on_the_sphere() {
        let cfg = PairConfig::constant(3, 0.5, 0.5, 0.1, 0.05, Horizon::Finite(1.0));
        let mut hits = 0;
        for i in 0..2000 {
            let out = run_brownian(&cfg, &mut path_rng(3, i)).unwrap();
            if out.hit {
                hits += 1;
                assert!(out.t_hit <= 1.0 + 1e-12);
                assert!((out.separation - 0.05).abs() <= 1e-12);
                assert_eq!(out.x_hit.len(), 3);
            }
        }
        assert!(hits > 500);
    }
}
