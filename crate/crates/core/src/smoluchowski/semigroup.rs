//! Per-bin spatial semigroups on the torus as separable Fourier multipliers.
//!
//! Heat flow is the lattice semigroup `exp(t a Δ_h / 2)` rather than the
//! continuum multiplier truncated at Nyquist: its kernel is a positive
//! random-walk law, so nonnegative fields stay nonnegative and no mass is
//! created by clipping. Per-axis variance is still exactly `a t`.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::{MassField, Torus};
use crate::densities::drift_bound_1d;
use crate::error::{Error, Result};
use crate::kernels::PowerLaw;

/// A per-bin convolution whose Fourier multiplier factorises over axes.
#[derive(Clone)]
pub struct SpectralOperator {
    torus: Torus,
    /// `factors[j][m]`: 1-D multiplier of bin `j` at frequency index `m`.
    factors: Vec<Vec<f64>>,
    identity: bool,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralOperator")
            .field("torus", &self.torus)
            .field("bins", &self.factors.len())
            .field("identity", &self.identity)
            .finish()
    }
}

fn wavenumber(torus: &Torus, m: usize) -> f64 {
    let n = torus.cells as i64;
    let signed = if (m as i64) <= n / 2 {
        m as i64
    } else {
        m as i64 - n
    };
    2.0 * PI * signed as f64 / torus.length
}

fn heat_factors(torus: &Torus, a: f64, dt: f64) -> Vec<f64> {
    let h = torus.spacing();
    (0..torus.cells)
        .map(|m| {
            let k = wavenumber(torus, m);
            // symbol of the second difference: -(2 - 2 cos kh) / h²
            (-a * dt * (1.0 - (k * h).cos()) / (h * h)).exp()
        })
        .collect()
}

/// Point samples of the upper drifted kernel wrapped onto the circle,
/// normalised to unit sum, then transformed. The kernel is even, so its
/// transform is a real cosine sum.
fn drift_factors(torus: &Torus, a: f64, b: f64, dt: f64) -> Vec<f64> {
    let n = torus.cells;
    let h = torus.spacing();
    let reach = 8.0 * (a * dt).sqrt() + 2.0 * b * dt;
    let images = (reach / torus.length).ceil() as i64 + 1;
    let mut k = vec![0.0; n];
    for (m, km) in k.iter_mut().enumerate() {
        for i in -images..=images {
            let off = m as f64 * h + i as f64 * torus.length;
            *km += drift_bound_1d(off, a, dt, b, 1.0);
        }
    }
    let total: f64 = k.iter().sum();
    (0..n)
        .map(|m| {
            k.iter()
                .enumerate()
                .map(|(p, kp)| kp * (2.0 * PI * (m * p % n) as f64 / n as f64).cos())
                .sum::<f64>()
                / total
        })
        .collect()
}

impl SpectralOperator {
    fn with_factors(torus: Torus, factors: Vec<Vec<f64>>, identity: bool) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            torus,
            factors,
            identity,
            forward: planner.plan_fft_forward(torus.cells),
            inverse: planner.plan_fft_inverse(torus.cells),
        }
    }

    /// `P_dt`: multiplier `exp(-a_j dt Σ (1 - cos k h) / h²)` for bin `j`.
    pub fn heat(torus: Torus, a: &[f64], dt: f64) -> Result<Self> {
        check_dt(dt)?;
        check_rates("a", a)?;
        let factors = a.iter().map(|&aj| heat_factors(&torus, aj, dt)).collect();
        Ok(Self::with_factors(torus, factors, dt == 0.0))
    }

    /// `Q_dt` with drift bound `b_j`; bins with `b_j = 0` use the heat multiplier.
    pub fn drift(torus: Torus, a: &[f64], b: &[f64], dt: f64) -> Result<Self> {
        check_dt(dt)?;
        check_rates("a", a)?;
        if a.len() != b.len() || b.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::domain(
                "drift bounds must be finite, >= 0 and one per bin",
            ));
        }
        if dt == 0.0 {
            return Self::heat(torus, a, 0.0);
        }
        let factors = a
            .iter()
            .zip(b)
            .map(|(&aj, &bj)| {
                if bj == 0.0 {
                    heat_factors(&torus, aj, dt)
                } else {
                    drift_factors(&torus, aj, bj, dt)
                }
            })
            .collect();
        Ok(Self::with_factors(torus, factors, false))
    }

    pub fn bins(&self) -> usize {
        self.factors.len()
    }

    /// Applies the operator in place to cell-major `values`.
    pub fn apply(&self, values: &mut [f64]) {
        if self.identity {
            return;
        }
        let bins = self.bins();
        let n_cells = self.torus.n_cells();
        debug_assert_eq!(values.len(), n_cells * bins);
        let slices: Vec<Vec<f64>> = {
            let src: &[f64] = values;
            (0..bins)
                .into_par_iter()
                .map(|j| {
                    let mut buf: Vec<Complex64> = (0..n_cells)
                        .map(|c| Complex64::new(src[c * bins + j], 0.0))
                        .collect();
                    if buf.iter().any(|z| z.re != 0.0) {
                        self.convolve(&mut buf, &self.factors[j]);
                    }
                    buf.into_iter().map(|z| z.re).collect()
                })
                .collect()
        };
        for (j, s) in slices.into_iter().enumerate() {
            for (c, v) in s.into_iter().enumerate() {
                values[c * bins + j] = v;
            }
        }
    }

    fn convolve(&self, data: &mut [Complex64], factors: &[f64]) {
        let n = self.torus.cells;
        let scale = 1.0 / n as f64;
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![
            Complex64::new(0.0, 0.0);
            self.forward
                .get_inplace_scratch_len()
                .max(self.inverse.get_inplace_scratch_len())
        ];
        for axis in 0..self.torus.d {
            let stride = n.pow(axis as u32);
            let outer = n.pow((self.torus.d - 1 - axis) as u32);
            for o in 0..outer {
                for i in 0..stride {
                    let base = o * stride * n + i;
                    for (m, l) in line.iter_mut().enumerate() {
                        *l = data[base + m * stride];
                    }
                    self.forward.process_with_scratch(&mut line, &mut scratch);
                    for (l, f) in line.iter_mut().zip(factors) {
                        *l *= f * scale;
                    }
                    self.inverse.process_with_scratch(&mut line, &mut scratch);
                    for (m, l) in line.iter().enumerate() {
                        data[base + m * stride] = *l;
                    }
                }
            }
        }
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!(
            "dt must be finite and >= 0, got {dt}"
        )));
    }
    Ok(())
}

fn check_rates(name: &str, a: &[f64]) -> Result<()> {
    if a.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::domain(format!(
            "{name} must be positive and finite in every bin"
        )));
    }
    Ok(())
}

/// `P_dt μ`, each bin diffusing at `a(y_j)`.
pub fn apply_heat_semigroup(field: &mut MassField, a: &PowerLaw, dt: f64) -> Result<()> {
    let rates: Vec<f64> = field.masses().iter().map(|&y| a.eval(y)).collect();
    SpectralOperator::heat(field.grid.torus, &rates, dt)?.apply(&mut field.values);
    clamp_roundoff(&mut field.values);
    Ok(())
}

/// `Q_dt μ` with drift-magnitude law `b`.
pub fn apply_drift_semigroup(
    field: &mut MassField,
    a: &PowerLaw,
    b: &PowerLaw,
    dt: f64,
) -> Result<()> {
    let ys = field.masses();
    let rates: Vec<f64> = ys.iter().map(|&y| a.eval(y)).collect();
    let bounds: Vec<f64> = ys.iter().map(|&y| b.eval(y)).collect();
    SpectralOperator::drift(field.grid.torus, &rates, &bounds, dt)?.apply(&mut field.values);
    clamp_roundoff(&mut field.values);
    Ok(())
}

/// FFT round-off leaves tiny negative values where the field is zero.
pub(crate) fn clamp_roundoff(values: &mut [f64]) {
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::grid::{MassGrid, SolverGrid};
    use super::*;

    fn grid(d: usize, n: usize, l: f64, bins: usize) -> SolverGrid {
        SolverGrid {
            torus: Torus::new(d, l, n).unwrap(),
            mass: MassGrid::new(1.0, 2.0, bins).unwrap(),
        }
    }

    fn bump(g: SolverGrid) -> MassField {
        let c = g.torus.length / 2.0;
        MassField::from_fn(g, |x, j| {
            x.iter()
                .map(|xi| (-(xi - c).powi(2) / 0.5).exp())
                .product::<f64>()
                * (1.0 + j as f64)
        })
        .unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let mut f = bump(grid(2, 16, 8.0, 3));
        let before = f.values.clone();
        apply_heat_semigroup(&mut f, &PowerLaw::constant(1.0), 0.0).unwrap();
        assert_eq!(before, f.values);
        assert!(apply_heat_semigroup(&mut f, &PowerLaw::constant(1.0), -1.0).is_err());
    }

    #[test]
    fn point_mass_variance_grows_by_a_dt() {
        let g = grid(1, 256, 20.0, 2);
        let mut f = MassField::zeros(g);
        let centre = 128;
        f.values[g.index(centre, 0)] = 1.0;
        f.values[g.index(centre, 1)] = 1.0;
        let law = PowerLaw::new(2.0, -1.0);
        apply_heat_semigroup(&mut f, &law, 0.5).unwrap();
        let h = g.torus.spacing();
        for j in 0..2 {
            let xc = g.torus.centre(centre)[0];
            let (mut m0, mut m2) = (0.0, 0.0);
            for c in 0..g.torus.n_cells() {
                let v = f.values[g.index(c, j)];
                m0 += v;
                m2 += v * (g.torus.centre(c)[0] - xc).powi(2);
            }
            let var = m2 / m0;
            let expected = law.eval(g.mass.y(j)) * 0.5;
            assert!(
                (var / expected - 1.0).abs() < 5e-3,
                "bin {j}: {var} vs {expected}"
            );
            let _ = h;
        }
    }

    #[test]
    fn coarse_point_mass_stays_nonnegative() {
        // a continuum multiplier cut at Nyquist rings here
        let g = grid(3, 8, 8.0, 2);
        let mut f = MassField::zeros(g);
        f.values[g.index(0, 1)] = 1.0;
        apply_heat_semigroup(&mut f, &PowerLaw::constant(1.0), 0.05).unwrap();
        let min = f.values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min > -1e-15, "{min}");
        assert!((f.values.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn semigroup_law_and_integral() {
        let g = grid(3, 16, 8.0, 2);
        let law = PowerLaw::new(1.0, -1.0 / 3.0);
        let mut a = bump(g);
        let mut b = a.clone();
        let before: Vec<f64> = (0..2)
            .map(|j| a.values.iter().skip(j).step_by(2).sum())
            .collect();
        apply_heat_semigroup(&mut a, &law, 0.3).unwrap();
        apply_heat_semigroup(&mut a, &law, 0.2).unwrap();
        apply_heat_semigroup(&mut b, &law, 0.5).unwrap();
        let norm: f64 = b.values.iter().map(|v| v.abs()).sum();
        let diff: f64 = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff <= 1e-10 * norm, "{diff}");
        for (j, s0) in before.iter().enumerate() {
            let s1: f64 = a.values.iter().skip(j).step_by(2).sum();
            assert!((s1 - s0).abs() <= 1e-12 * s0);
        }
    }

    #[test]
    fn drift_without_bound_is_heat() {
        let g = grid(2, 16, 8.0, 3);
        let mut a = bump(g);
        let mut b = a.clone();
        let law = PowerLaw::new(1.0, -1.0 / 3.0);
        apply_heat_semigroup(&mut a, &law, 0.25).unwrap();
        apply_drift_semigroup(&mut b, &law, &PowerLaw::constant(0.0), 0.25).unwrap();
        let diff = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-10);
    }

    #[test]
    fn drift_profile_is_wider_and_keeps_integral() {
        let g = grid(1, 256, 16.0, 2);
        let mut heat = MassField::zeros(g);
        heat.values[g.index(128, 0)] = 1.0;
        let mut drift = heat.clone();
        apply_heat_semigroup(&mut heat, &PowerLaw::constant(1.0), 0.25).unwrap();
        apply_drift_semigroup(
            &mut drift,
            &PowerLaw::constant(1.0),
            &PowerLaw::constant(1.0),
            0.25,
        )
        .unwrap();
        let xc = g.torus.centre(128)[0];
        let moment = |f: &MassField| -> (f64, f64) {
            let mut m0 = 0.0;
            let mut m2 = 0.0;
            for c in 0..g.torus.n_cells() {
                let v = f.values[g.index(c, 0)];
                m0 += v;
                m2 += v * (g.torus.centre(c)[0] - xc).powi(2);
            }
            (m0, m2 / m0)
        };
        let (h0, h2) = moment(&heat);
        let (d0, d2) = moment(&drift);
        assert!((d0 - h0).abs() < 1e-6 && (h0 - 1.0).abs() < 1e-12);
        assert!(d2 > h2 * 1.05, "{d2} vs {h2}");
    }
}
