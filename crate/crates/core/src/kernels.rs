//! Collision constants, coagulation kernels, free-motion parameter laws and
//! the sublinear weights used to dominate kernels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::special::gamma;

/// Brownian collision constant `c_d`, defined through
/// `1/c_d = ∫₀^∞ (2πt)^{-d/2} e^{-1/(2t)} dt`.
///
/// Evaluated in closed form as `2π^{d/2}/Γ(d/2 - 1)`.
pub fn c_brownian(d: usize) -> Result<f64> {
    if d < 3 {
        return Err(Error::domain(format!(
            "c_brownian needs d >= 3: ∫₀^∞ (2πt)^(-d/2) e^(-1/(2t)) dt diverges for d = {d}"
        )));
    }
    let half = d as f64 / 2.0;
    Ok(2.0 * PI.powf(half) / gamma(half - 1.0))
}

/// Ballistic (fast-radius) collision constant `π^{(d-1)/2}/Γ(d/2)`.
///
/// Equals `1/√2 · |B^{d-1}| · E|Z_d|` with `Z_d` standard normal in `R^d`.
pub fn c_ou(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::domain(format!("c_ou needs d >= 2, got {d}")));
    }
    Ok(PI.powf((d as f64 - 1.0) / 2.0) / gamma(d as f64 / 2.0))
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    PI.powf(h) / gamma(h + 1.0)
}

/// `K = c_d · a · r^{d-2}` for total diffusivity `a_sum` and radius sum `r_sum`.
pub fn brownian_kernel(a_sum: f64, r_sum: f64, d: usize) -> Result<f64> {
    require_positive("a_sum", a_sum)?;
    require_positive("r_sum", r_sum)?;
    Ok(c_brownian(d)? * a_sum * r_sum.powi(d as i32 - 2))
}

/// Mass kernel arising from integrated OU free motion in three dimensions:
/// `(y₁^{1/3} + y₂^{1/3})² √(1/y₁ + 1/y₂)`.
pub fn ou_mass_kernel(y1: f64, y2: f64) -> Result<f64> {
    require_positive("y1", y1)?;
    require_positive("y2", y2)?;
    Ok(ou_mass_kernel_unchecked(y1, y2))
}

#[inline]
pub(crate) fn ou_mass_kernel_unchecked(y1: f64, y2: f64) -> f64 {
    let s = y1.cbrt() + y2.cbrt();
    s * s * (1.0 / y1 + 1.0 / y2).sqrt()
}

/// Physical closure relating mass to the OU relaxation rate `τ` and noise `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParameterLaw {
    /// Friction drag: `τ = y^{-2/3}`, `b = y^{-5/6}`.
    Einstein,
    /// Molecular bombardment: `τ = y^{-1/3}`, `b = y^{-2/3}`.
    Mechanical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeMotion {
    /// Macroscopic diffusivity, always `(b/τ)²`.
    pub a: f64,
    pub tau: f64,
    pub b: f64,
}

pub fn diffusivity_law(law: ParameterLaw, y: f64) -> Result<FreeMotion> {
    require_positive("mass", y)?;
    let (tau, b) = match law {
        ParameterLaw::Einstein => (y.powf(-2.0 / 3.0), y.powf(-5.0 / 6.0)),
        ParameterLaw::Mechanical => (y.powf(-1.0 / 3.0), y.powf(-2.0 / 3.0)),
    };
    let ratio = b / tau;
    Ok(FreeMotion {
        a: ratio * ratio,
        tau,
        b,
    })
}

/// `coef · y^exponent`; the workhorse for diffusivity, drift and weight laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub coef: f64,
    pub exponent: f64,
}

impl PowerLaw {
    pub const fn new(coef: f64, exponent: f64) -> Self {
        Self { coef, exponent }
    }

    pub const fn constant(value: f64) -> Self {
        Self {
            coef: value,
            exponent: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        if self.exponent == 0.0 {
            self.coef
        } else {
            self.coef * y.powf(self.exponent)
        }
    }
}

/// Coagulation kernel in mass space used by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum MassKernel {
    Constant(f64),
    /// `K(y, y') = y·y'`, the gelling kernel.
    Multiplicative,
    /// [`ou_mass_kernel`].
    OrnsteinUhlenbeck,
}

impl MassKernel {
    #[inline]
    pub fn eval(&self, y1: f64, y2: f64) -> f64 {
        match *self {
            MassKernel::Constant(c) => c,
            MassKernel::Multiplicative => y1 * y2,
            MassKernel::OrnsteinUhlenbeck => ou_mass_kernel_unchecked(y1, y2),
        }
    }

    pub fn id(&self) -> String {
        match self {
            MassKernel::Constant(c) => format!("constant:{c}"),
            MassKernel::Multiplicative => "multiplicative".into(),
            MassKernel::OrnsteinUhlenbeck => "ornstein-uhlenbeck".into(),
        }
    }
}

/// Sublinear weight `w` (and optional partner `v`) dominating a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSpec {
    /// `K(y,y') <= w(y) w(y')` with `w = c₁ y^u`.
    PowerLaw { c1: f64, u: f64 },
    /// `K(y,y') <= w(y) v(y') + w(y') v(y)`.
    PairBound { w: PowerLaw, v: PowerLaw },
}

impl WeightSpec {
    /// Validates `w`: positive coefficients and `u ∈ [0, 1]` so `w` is
    /// non-decreasing and sublinear.
    pub fn new_power(c1: f64, u: f64) -> Result<Self> {
        let spec = WeightSpec::PowerLaw { c1, u };
        spec.validate()?;
        Ok(spec)
    }

    pub fn new_pair(w: PowerLaw, v: PowerLaw) -> Result<Self> {
        let spec = WeightSpec::PairBound { w, v };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, u) = match *self {
            WeightSpec::PowerLaw { c1, u } => (c1, u),
            WeightSpec::PairBound { w, v } => {
                require_positive("v.coef", v.coef)?;
                (w.coef, w.exponent)
            }
        };
        require_positive("w.coef", c)?;
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::domain(format!(
                "weight exponent u = {u} outside [0, 1]: w would not be sublinear and non-decreasing"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn w(&self, y: f64) -> f64 {
        match *self {
            WeightSpec::PowerLaw { c1, u } => PowerLaw::new(c1, u).eval(y),
            WeightSpec::PairBound { w, .. } => w.eval(y),
        }
    }

    /// Partner weight `v`, if this is a pair bound.
    #[inline]
    pub fn v(&self, y: f64) -> Option<f64> {
        match *self {
            WeightSpec::PowerLaw { .. } => None,
            WeightSpec::PairBound { v, .. } => Some(v.eval(y)),
        }
    }

    /// The bound the kernel must stay under at `(y, y')`.
    pub fn bound(&self, y: f64, yp: f64) -> f64 {
        match self.v(y) {
            None => self.w(y) * self.w(yp),
            Some(vy) => self.w(y) * self.v(yp).unwrap_or(0.0) + self.w(yp) * vy,
        }
    }
}

/// Log-spaced square grid `[lo, hi]²` with `points` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl LogGrid {
    /// 200 points over `[δ, 10⁶ δ]`.
    pub fn standard(delta: f64) -> Self {
        Self {
            lo: delta,
            hi: 1e6 * delta,
            points: 200,
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = self.points.max(2);
        let ratio = (self.hi / self.lo).ln() / (n - 1) as f64;
        (0..n).map(|i| self.lo * (ratio * i as f64).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub y: f64,
    pub y_prime: f64,
    pub kernel: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationReport {
    pub points_checked: usize,
    /// Largest observed `K / bound`.
    pub max_ratio: f64,
    pub counterexample: Option<Counterexample>,
}

impl DominationReport {
    pub fn holds(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Checks `K <= bound` on a log grid. Between nodes the check leans on
/// monotonicity: for power-law weights both sides are products of monotone
/// powers, so a ratio bounded away from 1 on a fine log grid cannot cross 1
/// between neighbouring nodes by more than the grid's relative spacing.
pub fn check_kernel_domination<K>(
    kernel: K,
    spec: &WeightSpec,
    grid: &LogGrid,
) -> Result<DominationReport>
where
    K: Fn(f64, f64) -> f64,
{
    spec.validate()?;
    require_positive("grid.lo", grid.lo)?;
    if grid.hi < grid.lo {
        return Err(Error::domain("grid.hi < grid.lo"));
    }
    let nodes = grid.nodes();
    let mut max_ratio = 0.0f64;
    let mut counterexample = None;
    let mut checked = 0;
    for &y in &nodes {
        for &yp in &nodes {
            let k = kernel(y, yp);
            let b = spec.bound(y, yp);
            checked += 1;
            let ratio = k / b;
            if ratio > max_ratio {
                max_ratio = ratio;
            }
            // one ulp-scale allowance so exactly tight kernels pass
            if k > b * (1.0 + 1e-12) && counterexample.is_none() {
                counterexample = Some(Counterexample {
                    y,
                    y_prime: yp,
                    kernel: k,
                    bound: b,
                });
            }
        }
    }
    Ok(DominationReport {
        points_checked: checked,
        max_ratio,
        counterexample,
    })
}

/// Which free-motion model is in force for a two-particle experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum CollisionModel {
    BrownianConstant {
        a1: f64,
        a2: f64,
        r1: f64,
        r2: f64,
    },
    /// Position-dependent diffusivity; only radii are fixed here.
    BrownianField {
        r1: f64,
        r2: f64,
    },
    /// Integrated OU with radius exponent `alpha > 1/2`.
    OuFast {
        tau1: f64,
        tau2: f64,
        b1: f64,
        b2: f64,
        alpha: f64,
    },
    /// Integrated OU with radius exponent `alpha < 1/2`.
    OuSlow {
        tau1: f64,
        tau2: f64,
        b1: f64,
        b2: f64,
        alpha: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub d: usize,
    pub model: CollisionModel,
    /// Mass floor; initial data carry no mass below it.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn new(d: usize, model: CollisionModel, delta: f64) -> Result<Self> {
        let spec = Self { d, model, delta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::domain("dimension must be >= 1"));
        }
        require_positive("delta", self.delta)?;
        match self.model {
            CollisionModel::BrownianConstant { a1, a2, r1, r2 } => {
                for (n, v) in [("a1", a1), ("a2", a2), ("r1", r1), ("r2", r2)] {
                    require_positive(n, v)?;
                }
            }
            CollisionModel::BrownianField { r1, r2 } => {
                require_positive("r1", r1)?;
                require_positive("r2", r2)?;
            }
            CollisionModel::OuFast {
                tau1,
                tau2,
                b1,
                b2,
                alpha,
            }
            | CollisionModel::OuSlow {
                tau1,
                tau2,
                b1,
                b2,
                alpha,
            } => {
                for (n, v) in [("tau1", tau1), ("tau2", tau2), ("b1", b1), ("b2", b2)] {
                    require_positive(n, v)?;
                }
                let fast = matches!(self.model, CollisionModel::OuFast { .. });
                if fast && alpha <= 0.5 {
                    return Err(Error::domain(format!(
                        "fast-radius regime needs alpha > 1/2, got {alpha}"
                    )));
                }
                if !fast && alpha >= 0.5 {
                    return Err(Error::domain(format!(
                        "slow-radius regime needs alpha < 1/2, got {alpha}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Runs with `d < 3` are accepted for cheap tests but fall outside the
    /// dimensions the collision limits are stated for.
    pub fn off_theory(&self) -> bool {
        self.d < 3
    }

    /// Limit collision kernel for this model (per-unit-density rate constant).
    pub fn collision_kernel(&self) -> Result<f64> {
        match self.model {
            CollisionModel::BrownianConstant { a1, a2, r1, r2 } => {
                brownian_kernel(a1 + a2, r1 + r2, self.d)
            }
            CollisionModel::BrownianField { .. } => Err(Error::NoClosedReference(
                "field diffusivity: kernel depends on position".into(),
            )),
            CollisionModel::OuFast {
                tau1, tau2, b1, b2, ..
            } => Ok(c_ou(self.d)? * (b1 * b1 / tau1 + b2 * b2 / tau2).sqrt()),
            CollisionModel::OuSlow {
                tau1, tau2, b1, b2, ..
            } => {
                let a = (b1 / tau1).powi(2) + (b2 / tau2).powi(2);
                Ok(c_brownian(self.d)? * a)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_brownian_closed_forms() {
        assert!((c_brownian(3).unwrap() - 2.0 * PI).abs() < 1e-13);
        assert!((c_brownian(4).unwrap() - 2.0 * PI * PI).abs() < 1e-12);
        assert!((c_brownian(5).unwrap() - 4.0 * PI * PI).abs() < 1e-12);
        let err = c_brownian(2).unwrap_err().to_string();
        assert!(err.contains("diverges"), "{err}");
    }

    #[test]
    fn c_ou_values() {
        assert!((c_ou(3).unwrap() - 2.0 * PI.sqrt()).abs() < 1e-13);
        assert!((c_ou(2).unwrap() - PI.sqrt()).abs() < 1e-13);
        assert!(c_ou(1).is_err());
    }

    #[test]
    fn brownian_kernel_examples() {
        assert!((brownian_kernel(1.0, 1.0, 3).unwrap() - 2.0 * PI).abs() < 1e-13);
        assert!((brownian_kernel(2.0, 0.5, 3).unwrap() - 2.0 * PI).abs() < 1e-13);
        assert!((brownian_kernel(1.0, 2.0, 4).unwrap() - 8.0 * PI * PI).abs() < 1e-11);
        assert!(brownian_kernel(-1.0, 1.0, 3).is_err());
        assert!(brownian_kernel(1.0, 0.0, 3).is_err());
    }

    #[test]
    fn ou_kernel_examples() {
        assert!((ou_mass_kernel(1.0, 1.0).unwrap() - 4.0 * 2f64.sqrt()).abs() < 1e-14);
        assert!((ou_mass_kernel(8.0, 8.0).unwrap() - 8.0).abs() < 1e-13);
        assert!(ou_mass_kernel(0.0, 1.0).is_err());
        let (a, b) = (0.37, 5.2);
        let k = ou_mass_kernel(a, b).unwrap();
        assert!((ou_mass_kernel(64.0 * a, 64.0 * b).unwrap() - 2.0 * k).abs() < 1e-12 * k);
    }

    #[test]
    fn parameter_laws() {
        let m1 = diffusivity_law(ParameterLaw::Mechanical, 1.0).unwrap();
        assert_eq!((m1.a, m1.tau, m1.b), (1.0, 1.0, 1.0));
        let m8 = diffusivity_law(ParameterLaw::Mechanical, 8.0).unwrap();
        assert!((m8.a - 0.25).abs() < 1e-15);
        let e8 = diffusivity_law(ParameterLaw::Einstein, 8.0).unwrap();
        assert!((e8.a - 0.5).abs() < 1e-15);
        for law in [ParameterLaw::Einstein, ParameterLaw::Mechanical] {
            for y in [0.01, 1.0, 3.7, 1e5] {
                let p = diffusivity_law(law, y).unwrap();
                assert_eq!(p.a, (p.b / p.tau) * (p.b / p.tau));
            }
        }
        assert!(diffusivity_law(ParameterLaw::Einstein, -1.0).is_err());
    }

    #[test]
    fn weight_rejects_superlinear() {
        assert!(WeightSpec::new_power(1.0, 1.5).is_err());
        assert!(WeightSpec::new_power(0.0, 0.5).is_err());
        assert!(WeightSpec::new_power(1.0, 1.0).is_ok());
    }

    #[test]
    fn multiplicative_kernel_is_tight() {
        let spec = WeightSpec::new_power(1.0, 1.0).unwrap();
        let r = check_kernel_domination(|y, z| y * z, &spec, &LogGrid::standard(1.0)).unwrap();
        assert!(r.holds());
        assert!((r.max_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_spec_regime_checks() {
        let fast = CollisionModel::OuFast {
            tau1: 1.0,
            tau2: 1.0,
            b1: 1.0,
            b2: 1.0,
            alpha: 0.4,
        };
        assert!(KernelSpec::new(3, fast, 1.0).is_err());
        let slow = CollisionModel::OuSlow {
            tau1: 1.0,
            tau2: 1.0,
            b1: 1.0,
            b2: 1.0,
            alpha: 0.6,
        };
        assert!(KernelSpec::new(3, slow, 1.0).is_err());
        let bc = CollisionModel::BrownianConstant {
            a1: 0.5,
            a2: 0.5,
            r1: 0.5,
            r2: 0.5,
        };
        let spec = KernelSpec::new(2, bc, 1.0).unwrap();
        assert!(spec.off_theory());
        assert!(KernelSpec::new(3, bc, 0.0).is_err());
    }
}
