//! Coagulation operators on the pivot grid with the fixed-pivot split.

use rayon::prelude::*;

use super::grid::{MassGrid, Overflow};
use crate::kernels::MassKernel;

/// Where the merger of pivots `i` and `l` lands: `eta` of a particle at
/// pivot `lower`, `1 - eta` at `lower + 1`. Number and mass are both
/// conserved. `lower == bins` marks overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Split {
    lower: usize,
    eta: f64,
}

/// Kernel values and merger targets for every pivot pair.
#[derive(Debug, Clone)]
pub struct CoagTable {
    bins: usize,
    ys: Vec<f64>,
    k: Vec<f64>,
    split: Vec<Split>,
}

impl CoagTable {
    pub fn new(kernel: &MassKernel, mass: &MassGrid) -> Self {
        let bins = mass.bins;
        let ys = mass.masses();
        let mut k = vec![0.0; bins * bins];
        let mut split = Vec::with_capacity(bins * bins);
        for i in 0..bins {
            for l in 0..bins {
                k[i * bins + l] = kernel.eval(ys[i], ys[l]);
                split.push(split_of(&ys, ys[i] + ys[l]));
            }
        }
        Self { bins, ys, k, split }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn masses(&self) -> &[f64] {
        &self.ys
    }

    #[inline]
    pub fn kernel(&self, i: usize, l: usize) -> f64 {
        self.k[i * self.bins + l]
    }

    /// Largest row sum `max_j Σ_l K(y_j, y_l)`.
    pub fn max_row_sum(&self) -> f64 {
        self.k
            .chunks_exact(self.bins)
            .map(|r| r.iter().sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Loss rates `c_j = Σ_l K(y_j, y_l) μ_l` for one cell.
    #[inline]
    pub fn loss_rates(&self, mu: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.k[j * self.bins..(j + 1) * self.bins];
            *o = row.iter().zip(mu).map(|(k, m)| k * m).sum();
        }
    }

    #[inline]
    fn deposit(&self, s: Split, amount: f64, y: f64, out: &mut [f64], of: &mut Overflow) {
        if s.lower >= self.bins {
            of.number += amount;
            of.mass += amount * y;
            return;
        }
        out[s.lower] += s.eta * amount;
        if s.eta < 1.0 {
            out[s.lower + 1] += (1.0 - s.eta) * amount;
        }
    }

    /// `K⁺(μ)` for one cell, added to `out`; overflow is per unit volume.
    pub fn gain_cell(&self, mu: &[f64], out: &mut [f64], of: &mut Overflow) {
        let b = self.bins;
        for i in 0..b {
            if mu[i] == 0.0 {
                continue;
            }
            // unordered pairs: i == l counted once with the factor 1/2
            let diag = 0.5 * self.k[i * b + i] * mu[i] * mu[i];
            self.deposit(self.split[i * b + i], diag, 2.0 * self.ys[i], out, of);
            for l in i + 1..b {
                if mu[l] == 0.0 {
                    continue;
                }
                let rate = self.k[i * b + l] * mu[i] * mu[l];
                self.deposit(
                    self.split[i * b + l],
                    rate,
                    self.ys[i] + self.ys[l],
                    out,
                    of,
                );
            }
        }
    }

    /// `K⁻(μ)` for one cell, added to `out`.
    pub fn loss_cell(&self, mu: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.k[j * self.bins..(j + 1) * self.bins];
            *o += mu[j] * row.iter().zip(mu).map(|(k, m)| k * m).sum::<f64>();
        }
    }

    /// `K^{ν+}(q)`: a `q`-particle at `y_l` absorbing a background particle at
    /// `y_i`, weighted by `y_l / (y_i + y_l)`.
    pub fn linear_gain_cell(&self, nu: &[f64], q: &[f64], out: &mut [f64], of: &mut Overflow) {
        let b = self.bins;
        for i in 0..b {
            if nu[i] == 0.0 {
                continue;
            }
            for l in 0..b {
                if q[l] == 0.0 {
                    continue;
                }
                let v = self.ys[i] + self.ys[l];
                let rate = self.ys[l] / v * self.k[i * b + l] * nu[i] * q[l];
                self.deposit(self.split[i * b + l], rate, v, out, of);
            }
        }
    }

    /// Net coagulation rate `K⁺(μ) - K⁻(μ)` over all cells. Returns the
    /// spatially summed overflow rate (per unit volume, caller multiplies by
    /// cell volume).
    pub fn net_rate(&self, values: &[f64], out: &mut [f64]) -> Overflow {
        let b = self.bins;
        out.par_chunks_mut(b)
            .zip(values.par_chunks(b))
            .map(|(o, mu)| {
                let mut of = Overflow::default();
                o.iter_mut().for_each(|x| *x = 0.0);
                self.gain_cell(mu, o, &mut of);
                let mut loss = vec![0.0; b];
                self.loss_cell(mu, &mut loss);
                for (x, l) in o.iter_mut().zip(loss) {
                    *x -= l;
                }
                of
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(Overflow::default(), sum_overflow)
    }

    /// Net rate of the linear operator `K^{ν+}(q) - K^{ν-}(q)` over all cells.
    pub fn linear_net_rate(&self, nu: &[f64], q: &[f64], out: &mut [f64]) -> Overflow {
        let b = self.bins;
        out.par_chunks_mut(b)
            .zip(nu.par_chunks(b).zip(q.par_chunks(b)))
            .map(|(o, (n, qc))| {
                let mut of = Overflow::default();
                o.iter_mut().for_each(|x| *x = 0.0);
                self.linear_gain_cell(n, qc, o, &mut of);
                let mut c = vec![0.0; b];
                self.loss_rates(n, &mut c);
                for ((x, cj), qj) in o.iter_mut().zip(c).zip(qc) {
                    *x -= cj * qj;
                }
                of
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(Overflow::default(), sum_overflow)
    }

    /// Largest loss rate `max_{cell, j} Σ_l K(y_j, y_l) μ_l`.
    pub fn max_loss_rate(&self, values: &[f64]) -> f64 {
        let b = self.bins;
        values
            .par_chunks(b)
            .map(|mu| {
                let mut c = vec![0.0; b];
                self.loss_rates(mu, &mut c);
                c.into_iter().fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }
}

fn sum_overflow(a: Overflow, b: Overflow) -> Overflow {
    Overflow {
        number: a.number + b.number,
        mass: a.mass + b.mass,
    }
}

fn split_of(ys: &[f64], v: f64) -> Split {
    let bins = ys.len();
    let top = ys[bins - 1];
    if v > top {
        return Split {
            lower: bins,
            eta: 1.0,
        };
    }
    if v == top {
        return Split {
            lower: bins - 1,
            eta: 1.0,
        };
    }
    // v >= 2δ > y_0, so a bracketing pair exists
    let k = ys.partition_point(|&y| y <= v) - 1;
    let eta = (ys[k + 1] - v) / (ys[k + 1] - ys[k]);
    Split { lower: k, eta }
}

/// `K⁺(μ)` and `K⁻(μ)` of a single cell, as fresh vectors.
pub fn coag_gain(table: &CoagTable, mu: &[f64]) -> (Vec<f64>, Overflow) {
    let mut out = vec![0.0; table.bins()];
    let mut of = Overflow::default();
    table.gain_cell(mu, &mut out, &mut of);
    (out, of)
}

pub fn coag_loss(table: &CoagTable, mu: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; table.bins()];
    table.loss_cell(mu, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(kernel: MassKernel, rho: f64, bins: usize) -> CoagTable {
        CoagTable::new(&kernel, &MassGrid::new(1.0, rho, bins).unwrap())
    }

    #[test]
    fn single_bin_constant_kernel() {
        let t = table(MassKernel::Constant(1.0), 1.5, 6);
        let mut mu = vec![0.0; 6];
        mu[1] = 3.0;
        let loss = coag_loss(&t, &mu);
        assert_eq!(loss[1], 9.0);
        let (gain, of) = coag_gain(&t, &mu);
        // 2·1.5 = 3 lies between 2.25 and 3.375
        assert!(gain[2] > 0.0 && gain[3] > 0.0);
        assert!((gain.iter().sum::<f64>() - 4.5).abs() < 1e-12);
        let ys = t.masses();
        let m: f64 = gain.iter().zip(ys).map(|(g, y)| g * y).sum();
        assert!((m - 4.5 * 3.0).abs() < 1e-12);
        assert_eq!(of, Overflow::default());
    }

    #[test]
    fn exact_doubling_lands_on_pivot() {
        let s = split_of(&[1.0, 2.0, 4.0], 2.0);
        assert_eq!(s, Split { lower: 1, eta: 1.0 });
        assert_eq!(split_of(&[1.0, 2.0, 4.0], 8.0).lower, 3);
    }

    #[test]
    fn overflow_is_accounted() {
        let t = table(MassKernel::Multiplicative, 2.0, 3);
        let mu = [0.0, 0.0, 1.0];
        let (gain, of) = coag_gain(&t, &mu);
        assert!(gain.iter().all(|g| *g == 0.0));
        assert_eq!(of.number, 0.5 * 16.0);
        assert_eq!(of.mass, 0.5 * 16.0 * 8.0);
        let loss = coag_loss(&t, &mu);
        let ys = t.masses();
        let lost: f64 = loss.iter().zip(ys).map(|(l, y)| l * y).sum();
        assert_eq!(lost, of.mass);
    }

    #[test]
    fn linear_operator_reduces_to_full_one_on_diagonal() {
        let t = table(MassKernel::OrnsteinUhlenbeck, 1.7, 8);
        let mu = [0.3, 0.1, 0.7, 0.0, 0.2, 0.05, 0.0, 0.01];
        let mut a = vec![0.0; 8];
        let of_a = t.net_rate(&mu, &mut a);
        let mut b = vec![0.0; 8];
        let of_b = t.linear_net_rate(&mu, &mu, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{a:?} {b:?}");
        }
        assert!((of_a.mass - of_b.mass).abs() < 1e-12);
    }
}
