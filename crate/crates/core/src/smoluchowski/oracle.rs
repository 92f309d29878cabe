//! Space-homogeneous reference: adaptive Dormand–Prince 5(4) on the pivot
//! equations `μ̇ = K⁺(μ) - K⁻(μ)`.

use serde::{Deserialize, Serialize};

use super::coag::CoagTable;
use super::grid::Overflow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub overflow: Vec<Overflow>,
    pub steps: usize,
    pub rejected: usize,
}

const MAX_STEPS: usize = 20_000_000;

impl OracleTrajectory {
    pub fn number(&self, k: usize) -> f64 {
        self.states[k].iter().sum()
    }

    /// `⟨f, μ⟩` at output `k`.
    pub fn moment(&self, k: usize, f: &[f64]) -> f64 {
        self.states[k].iter().zip(f).map(|(m, w)| m * w).sum()
    }
}

// Dormand–Prince tableau; the equations are autonomous so the nodes are unused
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// State is `μ` followed by overflow number and mass.
fn rhs(table: &CoagTable, u: &[f64], out: &mut [f64]) {
    let b = table.bins();
    let mu = &u[..b];
    out.iter_mut().for_each(|x| *x = 0.0);
    let mut of = Overflow::default();
    table.gain_cell(mu, &mut out[..b], &mut of);
    let mut loss = vec![0.0; b];
    table.loss_cell(mu, &mut loss);
    for (o, l) in out[..b].iter_mut().zip(loss) {
        *o -= l;
    }
    out[b] = of.number;
    out[b + 1] = of.mass;
}

/// Integrates from `μ₀` at `t = 0` and reports the state at each of the
/// increasing `times`. Fails with the last valid time when the step size
/// collapses, as it does at blow-up. Explicit, so stiff kernels on wide
/// grids (rates `K(y_J, ·) μ` far above `1/T`) exhaust the step budget.
pub fn homogeneous_oracle(
    table: &CoagTable,
    mu0: &[f64],
    times: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<OracleTrajectory> {
    let b = table.bins();
    if mu0.len() != b {
        return Err(Error::config(
            "mu0",
            format!("expected {b} bins, got {}", mu0.len()),
        ));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::config(
            "times",
            "output times must be nonnegative and increasing",
        ));
    }
    let n = b + 2;
    let mut u = mu0.to_vec();
    u.extend([0.0, 0.0]);
    let mut t = 0.0;
    let mut h: f64 = 1e-3;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut traj = OracleTrajectory {
        times: Vec::new(),
        states: Vec::new(),
        overflow: Vec::new(),
        steps: 0,
        rejected: 0,
    };
    rhs(table, &u, &mut k[0]);
    for &target in times {
        while t < target {
            if traj.steps + traj.rejected >= MAX_STEPS {
                return Err(Error::Integration {
                    last_time: t,
                    reason: format!(
                        "step budget of {MAX_STEPS} exhausted (stiff kernel on too many bins?)"
                    ),
                });
            }
            let step = h.min(target - t);
            for s in 1..7 {
                for i in 0..n {
                    stage[i] = u[i] + step * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
                }
                rhs(table, &stage, &mut k[s]);
            }
            // stage now holds the 5th-order solution (FSAL row)
            let mut err: f64 = 0.0;
            for i in 0..n {
                let e = step * (0..7).map(|j| (B5[j] - B4[j]) * k[j][i]).sum::<f64>();
                let scale = atol + rtol * u[i].abs().max(stage[i].abs());
                err = err.max((e / scale).abs());
            }
            if !err.is_finite() {
                return Err(Error::Integration {
                    last_time: t,
                    reason: "non-finite state".into(),
                });
            }
            if err <= 1.0 {
                t += step;
                u.copy_from_slice(&stage);
                k.swap(0, 6);
                traj.steps += 1;
            } else {
                traj.rejected += 1;
            }
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = step * fac;
            if h < 1e-14 * t.max(1.0) {
                return Err(Error::Integration {
                    last_time: t,
                    reason: "step size collapsed (blow-up?)".into(),
                });
            }
        }
        traj.times.push(t);
        traj.states.push(u[..b].to_vec());
        traj.overflow.push(Overflow {
            number: u[b],
            mass: u[b + 1],
        });
    }
    Ok(traj)
}
