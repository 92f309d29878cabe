//! Moment bounds along a solver path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::semigroup::clamp_roundoff;
use super::solver::{PicardOutcome, SolutionPath, Solver};
use crate::densities::gaussian_radial;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    /// `‖⟨y, μ_t⟩‖₁`, overflow excluded.
    pub mass_l1: f64,
    pub number_l1: f64,
    /// `h(t) = ‖⟨w², μ_t⟩‖_∞`.
    pub w2_sup: f64,
    /// `(h₀⁻¹ - 2Ct)⁻¹`, infinite past the horizon.
    pub riccati_bound: f64,
    /// `max_x (⟨wv, μ_t⟩ - ⟨wv, P_t μ₀⟩)` for pair-bound weights.
    pub wv_excess: Option<f64>,
    pub min_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    /// `sup_s ‖⟨w², P_s μ₀⟩‖_∞` over a probe schedule.
    pub h0: f64,
    /// Measured constant `C` of the moment inequality.
    pub inequality_constant: f64,
    /// `1 / (2 C h₀)`.
    pub t_star: f64,
    /// `sup_t ‖⟨wv, P_t μ₀⟩‖_∞`, when `v` is configured.
    pub wv_sup: Option<f64>,
    /// Linear Gronwall bound `h₀ e^{2 c C t}` at the final time.
    pub gronwall_bound: Option<f64>,
    pub picard_distances: Vec<f64>,
    pub contraction_factors: Vec<f64>,
    /// `y`-weighted fraction of `P_T μ₀` in the outer eighth of the box.
    pub wrap_fraction: f64,
    pub off_theory: bool,
    pub violations: Vec<String>,
}

impl MomentReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn attach_picard(&mut self, out: &PicardOutcome) {
        self.picard_distances = out.distances.clone();
        self.contraction_factors = out.factors.clone();
    }

    /// CSV columns `t, mass_l1, w2_sup, riccati_bound, contraction_factor`;
    /// the k-th row carries the k-th sweep's contraction factor.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "t",
            "mass_l1",
            "w2_sup",
            "riccati_bound",
            "contraction_factor",
        ])?;
        for (k, r) in self.rows.iter().enumerate() {
            w.write_record([
                format!("{:e}", r.t),
                format!("{:e}", r.mass_l1),
                format!("{:e}", r.w2_sup),
                format!("{:e}", r.riccati_bound),
                self.contraction_factors
                    .get(k)
                    .map(|f| format!("{f:e}"))
                    .unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Largest ratio on the pivot grid of
/// `(y/(y+y')) w²(y+y') p(y+y') - w²(y) p(y)` over
/// `w(y) w(y') [p(y) + p(y')]`, with `p` the heat kernel at diffusivity
/// `a(y)`, probed over a range of times and separations. Clamped at 0.
pub fn measure_inequality_constant(solver: &Solver) -> f64 {
    let cfg = &solver.config;
    let d = cfg.d;
    let ys = solver.grid.mass.masses();
    let a = |y: f64| cfg.diffusivity.eval(y);
    let w = |y: f64| cfg.weights.w(y);
    let a_ref = a(ys[0]);
    let mut c: f64 = 0.0;
    for ti in -6..=4 {
        let t = 10f64.powi(ti);
        for dist_scale in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let r2 = (dist_scale * dist_scale) * a_ref * t;
            let p = |y: f64| gaussian_radial(d, a(y) * t, r2);
            for &y in &ys {
                for &yp in &ys {
                    let s = y + yp;
                    let lhs = y / s * w(s).powi(2) * p(s) - w(y).powi(2) * p(y);
                    let rhs = w(y) * w(yp) * (p(y) + p(yp));
                    if rhs > 1e-300 && lhs.is_finite() {
                        c = c.max(lhs / rhs);
                    }
                }
            }
        }
    }
    c
}

fn y_weighted_band_fraction(solver: &Solver, values: &[f64]) -> f64 {
    let g = &solver.grid;
    let l = g.torus.length;
    let ys = g.mass.masses();
    let (mut band, mut total) = (0.0, 0.0);
    for (cell, mu) in values.chunks_exact(g.mass.bins).enumerate() {
        let m: f64 = mu.iter().zip(&ys).map(|(v, y)| v * y).sum();
        let x = g.torus.centre(cell);
        let outer = x[..g.torus.d]
            .iter()
            .any(|&xi| xi < l / 8.0 || xi > 7.0 * l / 8.0);
        total += m;
        if outer {
            band += m;
        }
    }
    if total > 0.0 {
        band / total
    } else {
        0.0
    }
}

/// Checks the moment bounds along `path` (which must start at `μ₀`).
pub fn moment_monitor(solver: &Solver, path: &SolutionPath) -> Result<MomentReport> {
    let g = solver.grid;
    let mu0 = &path.fields[0];
    let t0 = path.times[0];
    let w2 = solver.w2();
    let wv = solver.wv();
    let ys = g.mass.masses();
    let mut violations = Vec::new();

    // h0 over the path times and a geometric probe schedule
    let a_max = solver.diffusivities().iter().copied().fold(0.0, f64::max);
    let l2 = g.torus.length.powi(2);
    let mut probes: Vec<f64> = path.times.iter().map(|t| t - t0).collect();
    probes.extend((0..12).map(|k| 1e-3 * l2 / a_max * 10f64.powf(k as f64 / 3.0)));
    let mut h0 = g.weighted_sup(mu0, &w2);
    for &s in &probes {
        if s > 0.0 {
            let mut v = mu0.clone();
            solver.heat(s)?.apply(&mut v);
            clamp_roundoff(&mut v);
            h0 = h0.max(g.weighted_sup(&v, &w2));
        }
    }
    let c = measure_inequality_constant(solver);
    let t_star = if c > 0.0 && h0 > 0.0 {
        1.0 / (2.0 * c * h0)
    } else {
        f64::INFINITY
    };

    // diffusion-only comparison path on the same nodes
    let free = solver.diffusion_path(&path.field(0), &path.times)?;
    let homogeneous = path.field(0).uniformity_defect() < 1e-12;
    let wrap_fraction = if homogeneous {
        0.0
    } else {
        y_weighted_band_fraction(solver, free.fields.last().expect("non-empty path"))
    };
    if wrap_fraction > 1e-6 {
        violations.push(format!(
            "box too small: wrap-band mass fraction {wrap_fraction:.3e} > 1e-6"
        ));
    }

    let mut rows = Vec::with_capacity(path.times.len());
    let mut wv_sup: Option<f64> = None;
    for (k, (&t, f)) in path.times.iter().zip(&path.fields).enumerate() {
        let h = g.weighted_sup(f, &w2);
        let dt = t - t0;
        let riccati_bound = if dt < t_star {
            1.0 / (1.0 / h0 - 2.0 * c * dt)
        } else {
            f64::INFINITY
        };
        if h > riccati_bound * (1.0 + 1e-9) {
            violations.push(format!(
                "t={t}: h(t) = {h:e} exceeds Riccati bound {riccati_bound:e}"
            ));
        }
        let wv_excess = wv.as_ref().map(|wv| {
            let here = g.weighted_profile(f, wv);
            let there = g.weighted_profile(&free.fields[k], wv);
            let sup = there.iter().copied().fold(0.0, f64::max);
            wv_sup = Some(wv_sup.unwrap_or(0.0).max(sup));
            here.iter()
                .zip(&there)
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max)
        });
        if let Some(e) = wv_excess {
            if e > 1e-6 {
                violations.push(format!("t={t}: ⟨wv, μ_t⟩ exceeds ⟨wv, P_t μ0⟩ by {e:e}"));
            }
        }
        let min_value = f.iter().copied().fold(f64::INFINITY, f64::min);
        if min_value < -1e-12 {
            violations.push(format!("t={t}: negative entry {min_value:e}"));
        }
        rows.push(MomentRow {
            t,
            mass_l1: g.weighted_l1(f, &ys),
            number_l1: g.weighted_l1(f, &vec![1.0; ys.len()]),
            w2_sup: h,
            riccati_bound,
            wv_excess,
            min_value,
        });
    }
    for w in rows.windows(2) {
        if w[1].mass_l1 > w[0].mass_l1 * (1.0 + 1e-8) {
            violations.push(format!(
                "t={}: mass increased from {:e} to {:e}",
                w[1].t, w[0].mass_l1, w[1].mass_l1
            ));
        }
    }
    let gronwall_bound = wv_sup.map(|cw| {
        let span = path.times.last().expect("non-empty") - t0;
        let bound = |dt: f64| h0 * (2.0 * cw * c * dt).exp();
        for r in &rows {
            if r.w2_sup > bound(r.t - t0) * (1.0 + 1e-9) {
                violations.push(format!("t={}: h(t) exceeds linear Gronwall bound", r.t));
            }
        }
        bound(span)
    });
    Ok(MomentReport {
        rows,
        h0,
        inequality_constant: c,
        t_star,
        wv_sup,
        gronwall_bound,
        picard_distances: Vec::new(),
        contraction_factors: Vec::new(),
        wrap_fraction,
        off_theory: g.torus.off_theory(),
        violations,
    })
}
