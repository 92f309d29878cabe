//! Integrated Ornstein–Uhlenbeck pair: `dV = N b dB - N τ V dt`, `dX = V dt`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    bridge_collision_check, hit_record, norm, segment_entry, to_point, CollisionExperiment,
    CollisionOutcome, PathRng, Point, MAX_DIM,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuInit {
    /// `V(0) = 0`.
    Zero,
    /// `V(0)` drawn from the stationary law `N(0, N b²/(2τ))`.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuStepping {
    /// Base step; defaults to `(t1 - t0)/200`.
    pub h: Option<f64>,
    /// Mean displacement per step at most `kappa_v · gap`.
    pub kappa_v: f64,
    /// Conditional position standard deviation per step at most `kappa_n · gap`.
    pub kappa_n: f64,
    /// Both controls stop shrinking below `kappa_floor · r_N`.
    pub kappa_floor: f64,
    pub max_steps: u64,
    pub bridge: bool,
}

impl Default for OuStepping {
    fn default() -> Self {
        Self {
            h: None,
            kappa_v: 0.1,
            kappa_n: 0.3,
            kappa_floor: 0.1,
            max_steps: 20_000_000,
            bridge: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuPairConfig {
    pub d: usize,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Stiffness `N`.
    pub n: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub b1: f64,
    pub b2: f64,
    pub r_n: f64,
    /// Declared radius exponent, `r_N ~ N^{-alpha}`.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub t0: f64,
    pub t1: f64,
    #[serde(default = "unit_masses")]
    pub masses: (f64, f64),
    #[serde(default = "zero_init")]
    pub init: OuInit,
    #[serde(default)]
    pub stepping: OuStepping,
    #[serde(default)]
    pub seed: u64,
}

fn unit_masses() -> (f64, f64) {
    (1.0, 1.0)
}

fn zero_init() -> OuInit {
    OuInit::Zero
}

impl OuPairConfig {
    pub fn separation(&self) -> f64 {
        self.x1
            .iter()
            .zip(&self.x2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Macroscopic diffusivities `(bᵢ/τᵢ)²`.
    pub fn diffusivities(&self) -> (f64, f64) {
        ((self.b1 / self.tau1).powi(2), (self.b2 / self.tau2).powi(2))
    }

    /// `(θᵢ, σᵢ) = (N τᵢ, N bᵢ)`.
    pub fn rates(&self) -> [(f64, f64); 2] {
        [
            (self.n * self.tau1, self.n * self.b1),
            (self.n * self.tau2, self.n * self.b2),
        ]
    }

    pub fn base_step(&self) -> f64 {
        self.stepping.h.unwrap_or((self.t1 - self.t0) / 200.0)
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
        for (name, v) in [
            ("n", self.n),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("b1", self.b1),
            ("b2", self.b2),
            ("r_n", self.r_n),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        if self.separation() <= self.r_n {
            return Err(Error::config(
                "r_n",
                "particles start inside the collision set",
            ));
        }
        if !(self.t0 > 0.0 && self.t1 > self.t0 && self.t1.is_finite()) {
            return Err(Error::config(
                "t0",
                format!("need 0 < t0 < t1 < inf, got [{}, {}]", self.t0, self.t1),
            ));
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 0.0) || alpha == 0.5 {
                return Err(Error::config(
                    "alpha",
                    format!("radius exponent must be > 0 and != 1/2, got {alpha}"),
                ));
            }
        }
        let s = &self.stepping;
        if !(s.kappa_v > 0.0 && s.kappa_n > 0.0 && s.kappa_floor > 0.0)
            || s.h.is_some_and(|h| !(h > 0.0))
        {
            return Err(Error::config("stepping", "step controls must be > 0"));
        }
        Ok(())
    }
}

/// Exact one-step moments of `(V, X)` for one coordinate, per unit `σ²`
/// scaling already applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuMoments {
    /// `E[V'] = decay · V`.
    pub decay: f64,
    /// `E[X'] = X + lag · V`, `lag = (1 - e^{-θ dt})/θ`.
    pub lag: f64,
    pub var_v: f64,
    pub var_x: f64,
    pub cov: f64,
}

/// `u - 2(1 - e^{-u}) + (1 - e^{-2u})/2`, by series where the direct form
/// cancels.
fn position_factor(u: f64) -> f64 {
    if u < 0.5 {
        // coefficient of u^k is (-1)^{k+1} (2^{k-1} - 2)/k!
        let mut term = u * u / 2.0; // u^k/k! at k = 2
        let mut sum = 0.0;
        for k in 3..=24 {
            term *= u / k as f64;
            let c = (2f64.powi(k - 1) - 2.0) * if k % 2 == 1 { 1.0 } else { -1.0 };
            sum += c * term;
        }
        sum
    } else {
        u + 2.0 * (-u).exp_m1() - 0.5 * (-2.0 * u).exp_m1()
    }
}

pub fn ou_increment_moments(theta: f64, sigma: f64, dt: f64) -> OuMoments {
    let u = theta * dt;
    let em1 = (-u).exp_m1(); // e^{-u} - 1
    let s2 = sigma * sigma;
    OuMoments {
        decay: 1.0 + em1,
        lag: -em1 / theta,
        var_v: s2 / theta * (-0.5 * (-2.0 * u).exp_m1()),
        var_x: s2 / (theta * theta * theta) * position_factor(u),
        cov: s2 / (theta * theta) * 0.5 * em1 * em1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuState {
    pub x1: Point,
    pub x2: Point,
    pub v1: Point,
    pub v2: Point,
    pub t: f64,
}

impl OuState {
    pub fn start<R: Rng + ?Sized>(cfg: &OuPairConfig, rng: &mut R) -> Self {
        let mut st = Self {
            x1: to_point(&cfg.x1),
            x2: to_point(&cfg.x2),
            v1: [0.0; MAX_DIM],
            v2: [0.0; MAX_DIM],
            t: 0.0,
        };
        if cfg.init == OuInit::Stationary {
            let [(th1, s1), (th2, s2)] = cfg.rates();
            let sd1 = s1 / (2.0 * th1).sqrt();
            let sd2 = s2 / (2.0 * th2).sqrt();
            for k in 0..cfg.d {
                st.v1[k] = sd1 * rng.sample::<f64, _>(StandardNormal);
                st.v2[k] = sd2 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        st
    }
}

#[inline]
fn sample_particle<R: Rng + ?Sized>(
    x: &mut Point,
    v: &mut Point,
    d: usize,
    m: &OuMoments,
    rng: &mut R,
) {
    let sd_v = m.var_v.sqrt();
    let beta = if m.var_v > 0.0 { m.cov / m.var_v } else { 0.0 };
    let schur = if m.var_v > 0.0 {
        m.var_x - m.cov * m.cov / m.var_v
    } else {
        m.var_x
    };
    let sd_x = schur.max(0.0).sqrt();
    for k in 0..d {
        let zv: f64 = rng.sample(StandardNormal);
        let zx: f64 = rng.sample(StandardNormal);
        let nv = sd_v * zv;
        x[k] += m.lag * v[k] + beta * nv + sd_x * zx;
        v[k] = m.decay * v[k] + nv;
    }
}

/// Samples `(V, X)` at `t + dt` from the exact Gaussian transition.
pub fn step_ou_pair_exact<R: Rng + ?Sized>(
    state: &mut OuState,
    cfg: &OuPairConfig,
    dt: f64,
    rng: &mut R,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be > 0, got {dt}")));
    }
    let [(th1, s1), (th2, s2)] = cfg.rates();
    let m1 = ou_increment_moments(th1, s1, dt);
    let m2 = ou_increment_moments(th2, s2, dt);
    sample_particle(&mut state.x1, &mut state.v1, cfg.d, &m1, rng);
    sample_particle(&mut state.x2, &mut state.v2, cfg.d, &m2, rng);
    state.t += dt;
    Ok(())
}

/// Largest `dt` with `min(σ² dt³/3, a dt) <= target` for one particle.
#[inline]
fn noise_step(target: f64, sigma: f64, a: f64) -> f64 {
    (3.0 * target / (sigma * sigma)).cbrt().max(target / a)
}

fn run_ou(cfg: &OuPairConfig, rng: &mut PathRng) -> Result<CollisionOutcome> {
    let d = cfg.d;
    let r = cfg.r_n;
    let st = &cfg.stepping;
    let h = cfg.base_step();
    let rates = cfg.rates();
    let (a1, a2) = cfg.diffusivities();
    let mut state = OuState::start(cfg, rng);
    let mut steps = 0u64;
    let mut min_dist = f64::INFINITY;
    let mut rel = [0.0; MAX_DIM];
    let mut rel_after = [0.0; MAX_DIM];
    loop {
        for k in 0..d {
            rel[k] = state.x1[k] - state.x2[k];
        }
        let dist = norm(&rel[..d]);
        min_dist = min_dist.min(dist);
        if state.t >= cfg.t1 {
            return Ok(CollisionOutcome::miss(steps, min_dist, false));
        }
        if steps >= st.max_steps {
            return Ok(CollisionOutcome::miss(steps, min_dist, true));
        }
        let gap = dist - r;
        let mut dt = h.min(cfg.t1 - state.t);

        // mean displacement: particle i drifts at most |Vᵢ| min(dt, 1/θᵢ)
        let sp1 = norm(&state.v1[..d]);
        let sp2 = norm(&state.v2[..d]);
        let move_cap = (st.kappa_v * gap).max(st.kappa_floor * r);
        if sp1 / rates[0].0 + sp2 / rates[1].0 > move_cap {
            dt = dt.min(move_cap / (sp1 + sp2));
        }
        // conditional noise, split evenly between the particles
        let noise_cap = (st.kappa_n * gap).max(st.kappa_floor * r);
        let target = 0.5 * noise_cap * noise_cap;
        dt = dt
            .min(noise_step(target, rates[0].1, a1))
            .min(noise_step(target, rates[1].1, a2));

        let m1 = ou_increment_moments(rates[0].0, rates[0].1, dt);
        let m2 = ou_increment_moments(rates[1].0, rates[1].1, dt);
        let before = state;
        sample_particle(&mut state.x1, &mut state.v1, d, &m1, rng);
        sample_particle(&mut state.x2, &mut state.v2, d, &m2, rng);
        state.t += dt;
        steps += 1;
        for k in 0..d {
            rel_after[k] = state.x1[k] - state.x2[k];
        }
        if !rel_after[..d].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("OU position at t={}", state.t)));
        }
        if let Some(s) = segment_entry(&rel[..d], &rel_after[..d], r) {
            return Ok(hit_record(
                d, &before.x1, &state.x1, &before.x2, &state.x2, s, before.t, dt, cfg.masses, r,
                steps, min_dist,
            ));
        }
        if st.bridge {
            // Brownian-bridge proxy using the exact conditional position
            // variance: negligible when motion is ballistic over the step,
            // Brownian with diffusivity a₁+a₂ when velocity decorrelates
            let a_eff = (m1.var_x + m2.var_x) / dt;
            if bridge_collision_check(&rel[..d], &rel_after[..d], a_eff, dt, r, rng) {
                let g0 = dist - r;
                let g1 = norm(&rel_after[..d]) - r;
                let s = g0 / (g0 + g1);
                return Ok(hit_record(
                    d, &before.x1, &state.x1, &before.x2, &state.x2, s, before.t, dt, cfg.masses,
                    r, steps, min_dist,
                ));
            }
        }
    }
}

impl CollisionExperiment for OuPairConfig {
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
        run_ou(self, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::path_rng;

    #[test]
    fn position_factor_series_matches_direct() {
        for &u in &[0.02f64, 0.05, 0.2, 0.4999] {
            let direct = u + 2.0 * (-u).exp_m1() - 0.5 * (-2.0 * u).exp_m1();
            let series = position_factor(u);
            // the direct form loses about 3ε/u² to cancellation
            let tol = 1e-13 + 3.0 * f64::EPSILON / (u * u);
            assert!(
                (direct - series).abs() < tol * series,
                "{u}: {direct} {series}"
            );
        }
        // continuity across the switch
        let lo = position_factor(0.5 - 1e-12);
        let hi = position_factor(0.5);
        let slope = 1e-12 * (1.0 - (-0.5f64).exp()).powi(2);
        assert!((hi - lo - slope).abs() < 1e-14 * hi);
    }

    #[test]
    fn moments_match_closed_forms() {
        let (n, tau, b, t) = (3.0, 0.7, 1.3, 0.4);
        let (theta, sigma) = (n * tau, n * b);
        let m = ou_increment_moments(theta, sigma, t);
        let e = (-theta * t).exp();
        assert!((m.var_v - n * b * b / (2.0 * tau) * (1.0 - e * e)).abs() < 1e-12);
        let vx = (b / tau).powi(2) * (t - (2.0 - 2.0 * e) / theta + (1.0 - e * e) / (2.0 * theta));
        assert!((m.var_x - vx).abs() < 1e-12);
        let cov = b * b / (2.0 * tau * tau) * (1.0 - e).powi(2);
        assert!((m.cov - cov).abs() < 1e-12);
        // covariance stays PSD down to tiny steps
        for &dt in &[1e-9, 1e-6, 1e-3, 1.0, 100.0] {
            let m = ou_increment_moments(theta, sigma, dt);
            assert!(m.var_v * m.var_x - m.cov * m.cov >= 0.0, "dt={dt}");
        }
    }

    #[test]
    fn small_step_taylor_limit() {
        let (theta, sigma, dt) = (2.0, 1.0, 1e-5);
        let m = ou_increment_moments(theta, sigma, dt);
        assert!((m.decay - (1.0 - theta * dt)).abs() < 1e-9);
        assert!((m.lag - dt).abs() < 1e-9);
    }

    fn cfg() -> OuPairConfig {
        OuPairConfig {
            d: 3,
            x1: vec![0.0; 3],
            x2: vec![0.5, 0.0, 0.0],
            n: 10_000.0,
            tau1: 0.01,
            tau2: 0.01,
            b1: 0.01,
            b2: 0.01,
            r_n: 0.05,
            alpha: Some(0.55),
            t0: 0.1,
            t1: 1.0,
            masses: (1.0, 1.0),
            init: OuInit::Zero,
            stepping: OuStepping::default(),
            seed: 0,
        }
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        let mut c = cfg();
        c.t0 = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.r_n = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ou_paths_are_deterministic_and_hit_on_sphere() {
        let c = cfg();
        let mut hits = 0;
        for i in 0..300 {
            let a = run_ou(&c, &mut path_rng(5, i)).unwrap();
            let b = run_ou(&c, &mut path_rng(5, i)).unwrap();
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
            if a.hit {
                hits += 1;
                assert!(a.t_hit <= c.t1 + 1e-12);
            }
        }
        assert!(hits > 0);
    }
}
