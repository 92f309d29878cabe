use coagdiff::densities::{density_ratio_check, RatioRegime};
use coagdiff::kernels::{MassKernel, PowerLaw, WeightSpec};
use coagdiff::smoluchowski::{
    apply_heat_semigroup, coag_gain, coag_loss, CoagTable, MassField, MassGrid, SignedMassField, Solver, SolverConfig,
};
use proptest::prelude::*;

fn kernel() -> impl Strategy<Value = MassKernel> {
    prop_oneof![
        (0.1f64..5.0).prop_map(MassKernel::Constant),
        Just(MassKernel::Multiplicative),
        Just(MassKernel::OrnsteinUhlenbeck),
    ]
}

fn small_solver(kernel: MassKernel, bins: usize) -> Solver {
    Solver::new(SolverConfig {
        d: 2,
        length: 6.0,
        cells: 4,
        delta: 1.0,
        rho: 2.0,
        bins,
        kernel,
        diffusivity: PowerLaw::new(1.0, -1.0 / 3.0),
        drift: None,
        weights: WeightSpec::PowerLaw { c1: 1.0, u: 1.0 },
        dt: 0.01,
        t_end: 0.1,
        record_every: 1,
        stability: 0.5,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coagulation_is_mass_neutral_and_halves_number(
        k in kernel(),
        rho in 1.2f64..3.0,
        mu in prop::collection::vec(0.0f64..2.0, 2..12),
    ) {
        let table = CoagTable::new(&k, &MassGrid::new(1.0, rho, mu.len()).unwrap());
        let ys = table.masses();
        let (gain, of) = coag_gain(&table, &mu);
        let loss = coag_loss(&table, &mu);
        let gm: f64 = gain.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() + of.mass;
        let lm: f64 = loss.iter().zip(ys).map(|(l, y)| l * y).sum();
        prop_assert!((gm - lm).abs() <= 1e-12 * lm.max(1e-300), "{gm} vs {lm}");
        // each merger consumes two particles and creates one
        let gn = gain.iter().sum::<f64>() + of.number;
        let ln: f64 = loss.iter().sum();
        prop_assert!((2.0 * gn - ln).abs() <= 1e-12 * ln.max(1e-300));
        prop_assert!(gain.iter().all(|g| *g >= 0.0));
    }

    #[test]
    fn heat_flow_keeps_mass_and_sign(
        seed_values in prop::collection::vec(0.0f64..1.0, 16 * 3),
        dt in 1e-3f64..2.0,
        exponent in -1.0f64..0.0,
    ) {
        let s = small_solver(MassKernel::Constant(1.0), 3);
        let mut f = MassField::from_values(s.grid, seed_values).unwrap();
        let before = f.mass_l1();
        apply_heat_semigroup(&mut f, &PowerLaw::new(1.0, exponent), dt).unwrap();
        prop_assert!(f.min_value() >= 0.0);
        prop_assert!((f.mass_l1() / before - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_field_stays_uniform(k in kernel(), level in 0.01f64..0.5) {
        let s = small_solver(k, 6);
        let mu0 = MassField::uniform(s.grid, &[level, level / 2.0]).unwrap();
        let path = s.run(&mu0, 0.05, 0.01, 5).unwrap();
        let last = path.last();
        prop_assert!(last.uniformity_defect() < 1e-12, "{}", last.uniformity_defect());
        prop_assert!(last.mass_l1() <= mu0.mass_l1() * (1.0 + 1e-12));
    }

    #[test]
    fn linearized_flow_keeps_sign_and_contracts(
        k in kernel(),
        nu_vals in prop::collection::vec(0.0f64..0.05, 16 * 5),
        q_vals in prop::collection::vec(-1.0f64..1.0, 16 * 5),
    ) {
        let s = small_solver(k, 5);
        let nu0 = MassField::from_values(s.grid, nu_vals).unwrap();
        let nu = s.run(&nu0, 0.1, 0.01, 1).unwrap();
        let ys = s.grid.mass.masses();
        let weighted = |v: &[f64]| -> f64 {
            v.chunks_exact(5).map(|c| c.iter().zip(&ys).map(|(x, y)| x.abs() * y).sum::<f64>()).sum()
        };
        // positive data stay positive
        let pos: Vec<f64> = q_vals.iter().map(|v| v.abs()).collect();
        let qp = s.linearized_solve(&nu, &SignedMassField::from_values(s.grid, pos).unwrap()).unwrap();
        for f in &qp.fields {
            prop_assert!(f.iter().all(|v| *v >= -1e-14));
        }
        // signed data: the y-weighted L1 norm does not grow
        let q0 = SignedMassField::from_values(s.grid, q_vals.clone()).unwrap();
        let q = s.linearized_solve(&nu, &q0).unwrap();
        let start = weighted(&q_vals);
        for f in &q.fields {
            prop_assert!(weighted(f) <= start * (1.0 + 1e-10), "{} > {start}", weighted(f));
        }
    }

    #[test]
    fn density_ratio_bound_regime_a(
        pa in -1.0f64..0.0,
        slack in 0.0f64..1.0,
        a0 in 0.1f64..10.0,
        b0 in 0.1f64..10.0,
        yp in 0.01f64..10.0,
        grow in 1.0f64..100.0,
        t in 0.01f64..10.0,
        x in prop::collection::vec(-3.0f64..3.0, 1..4),
    ) {
        let a = PowerLaw::new(a0, pa);
        let b = PowerLaw::new(b0, pa / 2.0 - slack);
        let xp = vec![0.0; x.len()];
        let c = density_ratio_check(RatioRegime::A, &a, &b, yp * grow, yp, t, &x, &xp).unwrap();
        prop_assert!(c.holds, "{c:?}");
    }
}
