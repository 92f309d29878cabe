//! Coefficient fields for the particle diffusions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive scalar diffusivity field `a(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScalarField {
    Constant {
        value: f64,
    },
    /// `base + amplitude · sin(wavenumber · x₁)`.
    Sine {
        base: f64,
        amplitude: f64,
        wavenumber: f64,
    },
}

impl ScalarField {
    pub const fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            ScalarField::Constant { value } => value,
            ScalarField::Sine {
                base,
                amplitude,
                wavenumber,
            } => base + amplitude * (wavenumber * x[0]).sin(),
        }
    }

    /// `(inf, sup)` over `R^d`.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            ScalarField::Constant { value } => (value, value),
            ScalarField::Sine {
                base, amplitude, ..
            } => (base - amplitude.abs(), base + amplitude.abs()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ScalarField::Constant { .. })
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::config(name, format!("diffusivity must be bounded below by a positive constant, got range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Bounded drift field `b(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftField {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// Divergence-free zero-mean cellular flow in `d = 4`, rescaled as
    /// `amplitude · b(x/λ)/λ` with
    /// `b = (sin x₁ cos x₂, -sin x₂ cos x₁, sin x₃ cos x₄, -sin x₄ cos x₃)`.
    TaylorGreen {
        amplitude: f64,
        lambda: f64,
    },
    /// `bᵢ(x) = magnitude · sgn(targetᵢ - xᵢ)`: the drift that pushes hardest
    /// toward `target` under a per-coordinate bound.
    SignToward {
        magnitude: f64,
        target: Vec<f64>,
    },
}

impl DriftField {
    pub fn is_zero(&self) -> bool {
        match self {
            DriftField::Zero => true,
            DriftField::Constant { value } => value.iter().all(|v| *v == 0.0),
            DriftField::TaylorGreen { amplitude, .. } => *amplitude == 0.0,
            DriftField::SignToward { magnitude, .. } => *magnitude == 0.0,
        }
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DriftField::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            DriftField::Constant { value } => out.copy_from_slice(&value[..out.len()]),
            DriftField::TaylorGreen { amplitude, lambda } => {
                let s = amplitude / lambda;
                let z: [f64; 4] = [x[0] / lambda, x[1] / lambda, x[2] / lambda, x[3] / lambda];
                out[0] = s * z[0].sin() * z[1].cos();
                out[1] = -s * z[1].sin() * z[0].cos();
                out[2] = s * z[2].sin() * z[3].cos();
                out[3] = -s * z[3].sin() * z[2].cos();
            }
            DriftField::SignToward { magnitude, target } => {
                for ((o, xi), ti) in out.iter_mut().zip(x).zip(target) {
                    let diff = ti - xi;
                    *o = if diff > 0.0 {
                        *magnitude
                    } else if diff < 0.0 {
                        -magnitude
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    /// Per-coordinate sup-norm bound.
    pub fn coord_bound(&self) -> f64 {
        match self {
            DriftField::Zero => 0.0,
            DriftField::Constant { value } => value.iter().fold(0.0, |m, v| m.max(v.abs())),
            DriftField::TaylorGreen { amplitude, lambda } => amplitude.abs() / lambda,
            DriftField::SignToward { magnitude, .. } => magnitude.abs(),
        }
    }

    pub fn validate(&self, name: &str, d: usize) -> Result<()> {
        match self {
            DriftField::Zero => {}
            DriftField::Constant { value } => {
                if value.len() != d {
                    return Err(Error::config(
                        name,
                        format!(
                            "constant drift has {} components, expected {d}",
                            value.len()
                        ),
                    ));
                }
            }
            DriftField::TaylorGreen { lambda, .. } => {
                if d != 4 {
                    return Err(Error::config(
                        name,
                        "the cellular flow is defined for d = 4 only",
                    ));
                }
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::config(
                        name,
                        format!("lambda must be > 0, got {lambda}"),
                    ));
                }
            }
            DriftField::SignToward { target, .. } => {
                if target.len() != d {
                    return Err(Error::config(
                        name,
                        format!("target has {} components, expected {d}", target.len()),
                    ));
                }
            }
        }
        if !self.coord_bound().is_finite() {
            return Err(Error::config(name, "drift must be bounded"));
        }
        Ok(())
    }
}
