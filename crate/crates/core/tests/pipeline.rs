use proptest::prelude::*;

use pershock::cell::{admissibility, solve_cell, CellSolution};
use pershock::eigen::{solve_principal, translate_difference};
use pershock::elliptic::SolverOptions;
use pershock::evolve::{
    evolve, perturb, EvolveOptions, EvolveSetup, Perturbation, PerturbationKind,
};
use pershock::flux::{Fourier, Polynomial, SeparableFlux};
use pershock::grid::{l1_distance, CylinderField, CylinderGrid, Grid, TorusGrid};
use pershock::linalg::LinearSolver;
use pershock::massshock::{check_mass_shock, solve_mass_shock, MassShockOptions};
use pershock::shock::{
    construct_shock, ordering, solve_truncated, verify_shock, ShockOptions, ShockProfile,
};

fn burgers_cells(m1: usize) -> (SeparableFlux, CellSolution, CellSolution) {
    let b = SeparableFlux::burgers();
    let tg = TorusGrid::new(m1, None).unwrap();
    let o = SolverOptions::default();
    let m = solve_cell(&b, 1.0, tg, &o).unwrap();
    let p = solve_cell(&b, -1.0, tg, &o).unwrap();
    (b, m, p)
}

fn burgers_profile(r: i64, m1: usize) -> (SeparableFlux, ShockProfile) {
    let (b, m, p) = burgers_cells(m1);
    let g = CylinderGrid::symmetric(r, m1, None).unwrap();
    let ts = solve_truncated(&b, &m, &p, g, None, &ShockOptions::default()).unwrap();
    let sp = ShockProfile::from_truncated(&ts, &m, &p);
    (b, sp)
}

#[test]
fn burgers_construct_and_verify() {
    let (b, m, p) = burgers_cells(20);
    let sp = construct_shock(&b, &m, &p, &[6, 10, 15], &ShockOptions::default()).unwrap();
    let rep = verify_shock(&sp, &b, &ShockOptions::default()).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(sp.cauchy.last().unwrap() <= &1e-4);
    let (_, k, y) = sp.normalization.unwrap();
    assert!((0.0..1.0).contains(&y));
    assert_eq!(sp.grid().x_left(), -sp.r - k);
}

#[test]
fn heterogeneous_sequence_passes_verification() {
    let f = SeparableFlux::new(
        Fourier {
            terms: vec![(0, 1.0, 0.0), (1, 0.5, 0.0)],
        },
        Fourier::default(),
        Polynomial::new(vec![0.0, 0.0, 1.0]),
    )
    .unwrap();
    let tg = TorusGrid::new(12, Some(6)).unwrap();
    let o = SolverOptions::default();
    let adm = admissibility(&f, 1.0, -1.0, 17, tg, &o, 1e-8).unwrap();
    assert!(adm.pass);
    let m = solve_cell(&f, 1.0, tg, &o).unwrap();
    let p = solve_cell(&f, -1.0, tg, &o).unwrap();
    let sp = construct_shock(&f, &m, &p, &[6, 8, 10, 12], &ShockOptions::default()).unwrap();
    let rep = verify_shock(&sp, &f, &ShockOptions::default()).unwrap();
    assert!(rep.pass, "{rep:?}");
}

#[test]
fn krylov_and_direct_agree() {
    let (b, m, p) = burgers_cells(10);
    let g = CylinderGrid::symmetric(6, 10, None).unwrap();
    let direct = solve_truncated(&b, &m, &p, g, None, &ShockOptions::default()).unwrap();
    let mut opts = ShockOptions::default();
    opts.solver.linear = LinearSolver::krylov();
    let krylov = solve_truncated(&b, &m, &p, g, None, &opts).unwrap();
    let d = direct
        .field
        .values()
        .iter()
        .zip(krylov.field.values())
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    assert!(d <= 1e-8, "{d}");
}

#[test]
fn profile_csv_round_trip() {
    let (_, sp) = burgers_profile(4, 8);
    let mut buf = Vec::new();
    sp.field
        .write_csv(&mut buf, &["config_hash=abc".into()])
        .unwrap();
    let back = CylinderField::read_csv(std::io::Cursor::new(buf)).unwrap();
    assert_eq!(back.grid(), sp.grid());
    assert!(l1_distance(&back, &sp.field).unwrap() < 1e-14);
}

#[test]
fn eigen_from_profile_matches_translate() {
    let (b, sp) = burgers_profile(12, 20);
    let td = translate_difference(&sp, &b, 1).unwrap();
    let pe = solve_principal(&td, 10, &SolverOptions::default()).unwrap();
    assert!(pe.diagnostics.min_value > 0.0);
    assert!(pe.diagnostics.l1_gap < 1e-6);
    assert!(pe.diagnostics.slice_identity < 1e-9);
}

#[test]
fn mass_shocks_are_ordered_in_q() {
    let (b, sp) = burgers_profile(14, 20);
    let opts = MassShockOptions::default();
    let qs = [-1.5, -0.5, 0.5, 1.0, 2.5];
    let sols: Vec<_> = qs
        .iter()
        .map(|&q| solve_mass_shock(&sp, &b, q, &opts).unwrap())
        .collect();
    for s in &sols {
        let ch = check_mass_shock(&sp, s).unwrap();
        assert!(ch.mass_error <= 1e-6 * s.q_target.abs().max(1.0));
        assert!(
            ch.sign_violation <= 1e-12 && ch.sandwich_violation <= 1e-10,
            "{ch:?}"
        );
        assert!(s.verified, "q {}: {:?}", s.q_target, s.verification);
    }
    // q = 2.5 needs the second translate
    assert_eq!(sols[4].k, -2);
    let common = CylinderGrid::symmetric(11, 20, None).unwrap();
    for w in sols.windows(2) {
        let lo = w[0].v_bar.restrict(&common).unwrap();
        let hi = w[1].v_bar.restrict(&common).unwrap();
        let worst = lo
            .values()
            .iter()
            .zip(hi.values())
            .fold(f64::NEG_INFINITY, |a, (x, y)| a.max(x - y));
        assert!(worst <= 1e-10, "{worst}");
        let a = w[0].profile(&sp);
        let b = w[1].profile(&sp);
        assert!(ordering(&b, &a, &common, 1e-10).unwrap().constant_sign);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn perturbations_stay_in_the_band(
        amp in -3.0f64..3.0,
        center in -3.0f64..3.0,
        width in 0.3f64..3.0,
        dipole in any::<bool>(),
    ) {
        let (_, sp) = burgers_profile(8, 8);
        let pert = Perturbation {
            kind: if dipole { PerturbationKind::Dipole } else { PerturbationKind::Bump },
            amplitude: amp,
            center,
            width,
            target_mass: None,
        };
        let (u0, info) = perturb(&sp, &pert).unwrap();
        prop_assert!(u0.max_value() <= 1.0 + 1e-12);
        prop_assert!(u0.min_value() >= -1.0 - 1e-12);
        prop_assert!(info.amplitude.abs() <= amp.abs() + 1e-15);
        let g = *u0.grid();
        // untouched within 2 units of the ends
        for i in 0..g.n1() {
            let x = g.x1(i);
            if x < -6.0 || x > 6.0 {
                prop_assert_eq!(u0.get(i, 0), sp.field.get(i, 0));
            }
        }
    }

    #[test]
    fn evolution_conserves_mass_and_stays_in_band(
        amp in -1.0f64..1.0,
        center in -2.0f64..2.0,
        width in 0.5f64..2.0,
        dipole in any::<bool>(),
    ) {
        let (b, sp) = burgers_profile(12, 8);
        let pert = Perturbation {
            kind: if dipole { PerturbationKind::Dipole } else { PerturbationKind::Bump },
            amplitude: amp,
            center,
            width,
            target_mass: None,
        };
        let (u0, info) = perturb(&sp, &pert).unwrap();
        let g = *u0.grid();
        let setup = EvolveSetup {
            model: &b,
            u0,
            base: sp.field.clone(),
            refs: vec![],
            end_states: Some(sp.end_states(&g).unwrap()),
        };
        let opts = EvolveOptions { t_end: 1.0, dt: 0.025, ..EvolveOptions::default() };
        let tr = evolve(&setup, &opts).unwrap();
        // the ends are pinned, so only what reaches them leaks out
        for s in &tr.samples {
            prop_assert!((s.mass - info.mass).abs() <= 1e-10 * s.t.max(1.0), "{} vs {}", s.mass, info.mass);
        }
        prop_assert!(tr.sandwich_violation.unwrap() <= 1e-12);
    }
}
