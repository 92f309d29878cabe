//! Heat kernels, pair-meeting densities, the extremal drifted density with
//! its two-sided bounds, density-ratio bounds and the Aronson envelope.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::kernels::PowerLaw;
use crate::special::shifted_first_moment_tail;

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_dims(d: usize, pts: &[&[f64]]) -> Result<()> {
    if d == 0 {
        return Err(Error::domain("dimension must be >= 1"));
    }
    for p in pts {
        if p.len() != d {
            return Err(Error::domain(format!(
                "point has {} coordinates, expected {d}",
                p.len()
            )));
        }
    }
    Ok(())
}

/// Isotropic Gaussian with generator `(a/2)Δ` run for time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub d: usize,
    pub a: f64,
    pub t: f64,
    pub center: Vec<f64>,
}

pub fn gaussian_density(law: &GaussianLaw, x: &[f64]) -> Result<f64> {
    require_positive("t", law.t)?;
    require_positive("a", law.a)?;
    check_dims(law.d, &[&law.center, x])?;
    Ok(gaussian_radial(
        law.d,
        law.a * law.t,
        sq_dist(x, &law.center),
    ))
}

/// `(2π v)^{-d/2} e^{-r²/(2v)}` with `v = a·t`.
#[inline]
pub(crate) fn gaussian_radial(d: usize, var: f64, r2: f64) -> f64 {
    (2.0 * PI * var).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * var)).exp()
}

/// `∫ p₁(0,x₁;t,z) p₂(0,x₂;t,z) dz`: two independent Gaussians meeting at `z`
/// collapse to a single Gaussian in the separation with diffusivity `a₁+a₂`.
pub fn pair_meeting_density(a1: f64, a2: f64, x1: &[f64], x2: &[f64], t: f64) -> Result<f64> {
    require_positive("t", t)?;
    require_positive("a1", a1)?;
    require_positive("a2", a2)?;
    if x1.len() != x2.len() || x1.is_empty() {
        return Err(Error::domain(
            "x1 and x2 must have the same nonzero dimension",
        ));
    }
    Ok(gaussian_radial(x1.len(), (a1 + a2) * t, sq_dist(x1, x2)))
}

/// Pair-meeting density as a function of separation distance only.
#[inline]
pub fn pair_meeting_radial(d: usize, a_sum: f64, dist: f64, t: f64) -> f64 {
    gaussian_radial(d, a_sum * t, dist * dist)
}

/// Two-sided bound data for a diffusion with diffusivity `a` and a drift whose
/// every coordinate is bounded by `drift_bound` in absolute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBoundLaw {
    pub d: usize,
    pub drift_bound: f64,
    pub t: f64,
    pub start: Vec<f64>,
    pub a: f64,
}

/// One coordinate of the drifted bound: `(2πat)^{-1/2} ∫_{|Δ|/√(at)}^∞ z e^{-(z - s)²/2} dz`
/// with `s = sign · B √(t/a)`; `sign = +1` is the upper bound (drift toward the
/// target), `-1` the lower bound.
///
/// Normalisation lives here: the unit-diffusivity statement is mapped to
/// diffusivity `a` by scaling space by `√a`, which turns the drift bound `B`
/// into `B/√a` while leaving time alone, so the shift is `B√t/√a`.
#[inline]
pub(crate) fn drift_bound_1d(delta: f64, a: f64, t: f64, b: f64, sign: f64) -> f64 {
    let at = a * t;
    let lower = delta.abs() / at.sqrt();
    let shift = sign * b * (t / a).sqrt();
    shifted_first_moment_tail(lower, shift) / (2.0 * PI * at).sqrt()
}

/// Returns `(lower, upper)` at target `x`.
pub fn drift_density_bounds(law: &DriftBoundLaw, x: &[f64]) -> Result<(f64, f64)> {
    require_positive("t", law.t)?;
    require_positive("a", law.a)?;
    if !(law.drift_bound >= 0.0 && law.drift_bound.is_finite()) {
        return Err(Error::domain(format!(
            "drift bound must be finite and >= 0, got {}",
            law.drift_bound
        )));
    }
    check_dims(law.d, &[&law.start, x])?;
    let mut lo = 1.0;
    let mut hi = 1.0;
    for (xi, si) in x.iter().zip(&law.start) {
        let delta = xi - si;
        lo *= drift_bound_1d(delta, law.a, law.t, law.drift_bound, -1.0);
        hi *= drift_bound_1d(delta, law.a, law.t, law.drift_bound, 1.0);
    }
    Ok((lo, hi))
}

/// Kernel `q^{t,x,x'}(y)` of the drift semigroup: the upper drifted bound with
/// mass-dependent diffusivity `a(y)` and drift magnitude `B(y)`.
///
/// For `B > 0` this is not a probability kernel: each coordinate integrates to
/// `2[(1+c²)Φ(c) + cφ(c)] > 1` with `c = B√(t/a)` (see [`extremal_mass_1d`]).
pub fn extremal_drift_density(
    y: f64,
    b_law: &PowerLaw,
    a_law: &PowerLaw,
    t: f64,
    x: &[f64],
    xp: &[f64],
) -> Result<f64> {
    require_positive("y", y)?;
    require_positive("t", t)?;
    let a = a_law.eval(y);
    let b = b_law.eval(y);
    require_positive("a(y)", a)?;
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::domain(format!(
            "B(y) must be finite and >= 0, got {b}"
        )));
    }
    check_dims(x.len(), &[xp])?;
    Ok(x.iter()
        .zip(xp)
        .map(|(xi, pi)| drift_bound_1d(xi - pi, a, t, b, 1.0))
        .product())
}

/// Total mass of one coordinate of the extremal kernel with shift `c`.
pub fn extremal_mass_1d(c: f64) -> f64 {
    use crate::special::{normal_cdf, normal_pdf};
    2.0 * ((1.0 + c * c) * normal_cdf(c) + c * normal_pdf(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioRegime {
    /// `B/√a` and `a` non-increasing in mass.
    A,
    /// `a` and `B` non-increasing, `B/√a` non-decreasing.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioCheck {
    pub ratio: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Confirms the monotonicity preconditions of `regime` for power-law laws.
pub fn ratio_regime_admits(regime: RatioRegime, a_law: &PowerLaw, b_law: &PowerLaw) -> Result<()> {
    require_positive("a.coef", a_law.coef)?;
    require_positive("B.coef", b_law.coef)?;
    let (pa, pb) = (a_law.exponent, b_law.exponent);
    let ratio_exp = pb - pa / 2.0;
    let ok = match regime {
        RatioRegime::A => pa <= 0.0 && ratio_exp <= 0.0,
        RatioRegime::B => pa <= 0.0 && pb <= 0.0 && ratio_exp >= 0.0,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "laws a ~ y^{pa}, B ~ y^{pb} do not satisfy the monotonicity of regime {regime:?}"
        )))
    }
}

/// Checks `q(y)/q(y') <= bound` for `y >= y'`, where the bound is
/// `(a(y)/a(y'))^{-d/2}` in regime A and `(B(y)a(y')/(B(y')a(y)))^d` in regime B.
#[allow(clippy::too_many_arguments)]
pub fn density_ratio_check(
    regime: RatioRegime,
    a_law: &PowerLaw,
    b_law: &PowerLaw,
    y: f64,
    yp: f64,
    t: f64,
    x: &[f64],
    xp: &[f64],
) -> Result<RatioCheck> {
    ratio_regime_admits(regime, a_law, b_law)?;
    require_positive("y'", yp)?;
    if y < yp {
        return Err(Error::domain(format!("need y >= y', got y={y}, y'={yp}")));
    }
    let d = x.len() as f64;
    let q = extremal_drift_density(y, b_law, a_law, t, x, xp)?;
    let qp = extremal_drift_density(yp, b_law, a_law, t, x, xp)?;
    let bound = match regime {
        RatioRegime::A => (a_law.eval(y) / a_law.eval(yp)).powf(-d / 2.0),
        RatioRegime::B => {
            (b_law.eval(y) * a_law.eval(yp) / (b_law.eval(yp) * a_law.eval(y))).powf(d)
        }
    };
    let ratio = if qp > 0.0 {
        q / qp
    } else if q == 0.0 {
        // both underflowed; treat as equal
        1.0
    } else {
        f64::INFINITY
    };
    Ok(RatioCheck {
        ratio,
        bound,
        holds: ratio <= bound * (1.0 + 1e-10),
    })
}

/// Aronson envelope `(C⁻¹ t^{-d/2} e^{-C|Δ|²/t} e^{-Ct}, C t^{-d/2} e^{-|Δ|²/(Ct)} e^{Ct})`.
pub fn aronson_envelope(c: f64, d: usize, t: f64, dist: f64) -> Result<(f64, f64)> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::domain(format!(
            "Aronson constant must be >= 1, got {c}"
        )));
    }
    require_positive("t", t)?;
    let base = t.powf(-(d as f64) / 2.0);
    let r2 = dist * dist;
    let lower = base / c * (-c * r2 / t - c * t).exp();
    let upper = base * c * (-r2 / (c * t) + c * t).exp();
    Ok((lower, upper))
}

/// One observation `(t, |Δ|, density)` for fitting the envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub t: f64,
    pub dist: f64,
    pub density: f64,
}

/// Smallest `C >= 1` (to relative `1e-9`) whose envelope contains every
/// sample. Containment is monotone in `C`, so bisection is exact up to
/// tolerance. Zero densities are skipped since no finite `C` covers them.
pub fn fit_aronson_constant(d: usize, samples: &[DensitySample]) -> Result<f64> {
    let fits = |c: f64| -> bool {
        samples.iter().filter(|s| s.density > 0.0).all(|s| {
            let (lo, hi) = aronson_envelope(c, d, s.t, s.dist).expect("validated inputs");
            lo <= s.density && s.density <= hi
        })
    };
    for s in samples {
        require_positive("sample t", s.t)?;
    }
    if fits(1.0) {
        return Ok(1.0);
    }
    let mut hi = 2.0;
    while !fits(hi) {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::domain(
                "no Aronson constant below 1e8 fits the samples",
            ));
        }
    }
    let mut lo = hi / 2.0;
    while (hi - lo) > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
