//! Test functions `g(t, x)` and the analytic limit functionals.

use serde::{Deserialize, Serialize};

use crate::densities::pair_meeting_radial;
use crate::error::{Error, Result};
use crate::kernels::{c_brownian, c_ou};
use crate::special::{integrate, normal_cdf};

/// Bounded test function on `[0, ∞) × R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    Zero,
    One,
    /// `1_{[lo, hi)}(t)`.
    TimeIndicator {
        lo: f64,
        hi: f64,
    },
    /// `exp(-(t-t_c)²/(2 t_w²)) · exp(-|x-x_c|²/(2 x_w²))`; `x_center = None`
    /// drops the spatial factor.
    GaussianBump {
        t_center: f64,
        t_width: f64,
        #[serde(default)]
        x_center: Option<Vec<f64>>,
        #[serde(default = "unit")]
        x_width: f64,
    },
    /// `1_{[t_lo,t_hi)}(t) · Πᵢ 1_{[loᵢ,hiᵢ)}(xᵢ)`.
    IntervalTensor {
        t: (f64, f64),
        x: Vec<(f64, f64)>,
    },
}

fn unit() -> f64 {
    1.0
}

impl TestFunction {
    #[inline]
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::One => 1.0,
            TestFunction::TimeIndicator { lo, hi } => f64::from(u8::from(t >= *lo && t < *hi)),
            TestFunction::GaussianBump {
                t_center,
                t_width,
                x_center,
                x_width,
            } => {
                let dt = t - t_center;
                let mut e = -dt * dt / (2.0 * t_width * t_width);
                if let Some(c) = x_center {
                    let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    e -= r2 / (2.0 * x_width * x_width);
                }
                e.exp()
            }
            TestFunction::IntervalTensor {
                t: (tl, th),
                x: boxes,
            } => {
                let inside = t >= *tl
                    && t < *th
                    && x.iter()
                        .zip(boxes)
                        .all(|(xi, (l, h))| *xi >= *l && *xi < *h);
                f64::from(u8::from(inside))
            }
        }
    }

    /// True when `g` ignores the collision position.
    pub fn time_only(&self) -> bool {
        match self {
            TestFunction::GaussianBump { x_center, .. } => x_center.is_none(),
            TestFunction::IntervalTensor { .. } => false,
            _ => true,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, TestFunction::Zero)
    }

    pub fn sup_norm(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            1.0
        }
    }

    /// Time interval outside which `g` vanishes (or is below `1e-16` for bumps).
    pub fn time_support(&self) -> (f64, f64) {
        match self {
            TestFunction::Zero | TestFunction::One => (0.0, f64::INFINITY),
            TestFunction::TimeIndicator { lo, hi } => (lo.max(0.0), *hi),
            TestFunction::GaussianBump {
                t_center, t_width, ..
            } => (
                (t_center - 8.6 * t_width).max(0.0),
                t_center + 8.6 * t_width,
            ),
            TestFunction::IntervalTensor { t, .. } => (t.0.max(0.0), t.1),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            TestFunction::TimeIndicator { lo, hi } if !(hi > lo) => {
                Err(Error::config("g", "empty time interval"))
            }
            TestFunction::GaussianBump {
                t_width,
                x_center,
                x_width,
                ..
            } => {
                if !(*t_width > 0.0 && *x_width > 0.0) {
                    return Err(Error::config("g", "bump widths must be > 0"));
                }
                if x_center.as_ref().is_some_and(|c| c.len() != d) {
                    return Err(Error::config("g", "bump centre has wrong dimension"));
                }
                Ok(())
            }
            TestFunction::IntervalTensor { t, x } => {
                if x.len() != d || !(t.1 > t.0) || x.iter().any(|(l, h)| !(h > l)) {
                    return Err(Error::config(
                        "g",
                        "interval tensor needs d non-empty intervals",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `∫ N(z; m, v·I) g(t, z) dz`, the spatial factor of `g` averaged over an
    /// isotropic Gaussian meeting point.
    fn spatial_average(&self, t: f64, m: &[f64], v: f64) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::One => 1.0,
            TestFunction::TimeIndicator { .. } => self.eval(t, m),
            TestFunction::GaussianBump {
                t_center,
                t_width,
                x_center,
                x_width,
            } => {
                let dt = t - t_center;
                let tf = (-dt * dt / (2.0 * t_width * t_width)).exp();
                match x_center {
                    None => tf,
                    Some(c) => {
                        let w2 = x_width * x_width;
                        let r2: f64 = m.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                        let d = m.len() as f64;
                        tf * (w2 / (v + w2)).powf(d / 2.0) * (-r2 / (2.0 * (v + w2))).exp()
                    }
                }
            }
            TestFunction::IntervalTensor { t: (tl, th), x } => {
                if !(t >= *tl && t < *th) {
                    return 0.0;
                }
                let s = v.sqrt();
                m.iter()
                    .zip(x)
                    .map(|(mi, (l, h))| normal_cdf((h - mi) / s) - normal_cdf((l - mi) / s))
                    .product()
            }
        }
    }
}

/// Which limit theorem the estimator targets; fixes the scaling prefactor and
/// the kernel constant of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Unscaled probability of ever meeting, `(r/|Δ|)^{d-2}`.
    EverCollide,
    /// `N · E[g 1_{T<R}]` with `r_N = r N^{-1/(d-2)}`.
    Brownian,
    /// `N^{-1/2} r_N^{1-d} E[g]`.
    OuFast,
    /// `r_N^{2-d} E[g]`.
    OuSlow,
}

impl Regime {
    pub fn tag(&self) -> &'static str {
        match self {
            Regime::EverCollide => "ever-collide",
            Regime::Brownian => "brownian",
            Regime::OuFast => "ou-fast",
            Regime::OuSlow => "ou-slow",
        }
    }
}

/// Everything the reference integral needs: constant free-motion
/// diffusivities, starts and a kernel constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitProblem {
    pub d: usize,
    pub a1: f64,
    pub a2: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Rate constant multiplying `∫∫ p₁ p₂ g`.
    pub kernel: f64,
    /// Time window of the functional (`[0, R)` or `[t0, t1]`).
    pub window: (f64, f64),
}

impl LimitProblem {
    pub fn brownian(
        d: usize,
        a1: f64,
        a2: f64,
        x1: Vec<f64>,
        x2: Vec<f64>,
        r: f64,
        horizon: f64,
    ) -> Result<Self> {
        let kernel = c_brownian(d)? * (a1 + a2) * r.powi(d as i32 - 2);
        Ok(Self {
            d,
            a1,
            a2,
            x1,
            x2,
            kernel,
            window: (0.0, horizon),
        })
    }

    pub fn ou_fast(
        d: usize,
        tau: (f64, f64),
        b: (f64, f64),
        x1: Vec<f64>,
        x2: Vec<f64>,
        window: (f64, f64),
    ) -> Result<Self> {
        let kernel = c_ou(d)? * (b.0 * b.0 / tau.0 + b.1 * b.1 / tau.1).sqrt();
        Ok(Self {
            d,
            a1: (b.0 / tau.0).powi(2),
            a2: (b.1 / tau.1).powi(2),
            x1,
            x2,
            kernel,
            window,
        })
    }

    pub fn ou_slow(
        d: usize,
        tau: (f64, f64),
        b: (f64, f64),
        x1: Vec<f64>,
        x2: Vec<f64>,
        window: (f64, f64),
    ) -> Result<Self> {
        let a1 = (b.0 / tau.0).powi(2);
        let a2 = (b.1 / tau.1).powi(2);
        Ok(Self {
            d,
            a1,
            a2,
            x1,
            x2,
            kernel: c_brownian(d)? * (a1 + a2),
            window,
        })
    }

    /// `kernel · ∫_{window} ∫ p₁(0,x₁;s,z) p₂(0,x₂;s,z) g(s,z) dz ds`.
    ///
    /// `p₁p₂` factors as the pair-meeting density in `x₁-x₂` times an
    /// isotropic Gaussian in `z` with mean `(a₂x₁+a₁x₂)/(a₁+a₂)` and variance
    /// `a₁a₂ s/(a₁+a₂)`, which makes the spatial integral closed-form for
    /// every built-in `g` and leaves a 1-D time quadrature.
    pub fn reference(&self, g: &TestFunction) -> Result<f64> {
        g.validate(self.d)?;
        if g.is_zero() {
            return Ok(0.0);
        }
        let a = self.a1 + self.a2;
        let dist = self
            .x1
            .iter()
            .zip(&self.x2)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let mean: Vec<f64> = self
            .x1
            .iter()
            .zip(&self.x2)
            .map(|(p, q)| (self.a2 * p + self.a1 * q) / a)
            .collect();
        let (gs, ge) = g.time_support();
        let lo = self.window.0.max(gs);
        let hi = self.window.1.min(ge);
        if !(hi > lo) {
            return Ok(0.0);
        }
        if !hi.is_finite() {
            return Err(Error::NoClosedReference("unbounded time window".into()));
        }
        let d = self.d;
        let f = |s: f64| {
            if s <= 0.0 {
                return 0.0;
            }
            let v = self.a1 * self.a2 * s / a;
            pair_meeting_radial(d, a, dist, s) * g.spatial_average(s, &mean, v)
        };
        // split at the density peak so the quadrature sees the bulk
        let peak = (dist * dist / (d as f64 * a)).clamp(lo, hi);
        let mut total = 0.0;
        for (p, q) in [(lo, peak), (peak, hi)] {
            if q > p {
                total += integrate(f, p, q, 1e-11, 1e-300);
            }
        }
        Ok(self.kernel * total)
    }
}

/// `(r/|Δ|)^{d-2}`.
pub fn ever_collide_probability(d: usize, r: f64, dist: f64) -> Result<f64> {
    if d < 3 {
        return Err(Error::domain(
            "ever-collide law needs d >= 3 (recurrent otherwise)",
        ));
    }
    if !(dist > r && r > 0.0) {
        return Err(Error::domain("need 0 < r < |Δ|"));
    }
    Ok((r / dist).powi(d as i32 - 2))
}

/// `∫_0^∞` of the pair-meeting density, `|Δ|^{2-d}/(c_d a)`.
pub fn time_integrated_meeting(d: usize, a_sum: f64, dist: f64) -> Result<f64> {
    Ok(dist.powi(2 - d as i32) / (c_brownian(d)? * a_sum))
}
