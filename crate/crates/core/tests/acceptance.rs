//! Acceptance suite. Prints one line per criterion and exits nonzero when
//! any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pershock::cell::{lax_rates, scan_homogenized, solve_cell, CellSolution};
use pershock::eigen::{principal_sequence, translate_difference};
use pershock::elliptic::SolverOptions;
use pershock::evolve::{
    evolve_pair, stability_experiment, EvolveOptions, Perturbation, PerturbationKind,
};
use pershock::flux::{FluxModel, ForcedLinearFlux, Fourier, Polynomial, SeparableFlux};
use pershock::grid::{CylinderField, CylinderGrid, Grid, TorusGrid};
use pershock::massshock::{solve_mass_shock, MassShockOptions};
use pershock::shock::{construct_shock, solve_truncated, verify_shock, ShockOptions, ShockProfile};

struct Outcome {
    pass: bool,
    detail: String,
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn heterogeneous() -> SeparableFlux {
    SeparableFlux::new(
        Fourier {
            terms: vec![(0, 1.0, 0.0), (1, 0.5, 0.0)],
        },
        Fourier::default(),
        Polynomial::new(vec![0.0, 0.0, 1.0]),
    )
    .unwrap()
}

fn cells(model: &dyn FluxModel, tg: TorusGrid) -> (CellSolution, CellSolution) {
    let o = SolverOptions::default();
    (
        solve_cell(model, 1.0, tg, &o).unwrap(),
        solve_cell(model, -1.0, tg, &o).unwrap(),
    )
}

/// Burgers profile at `R = 15` from the pinned truncated solve, centred at
/// the origin by symmetry.
fn burgers_r15() -> (SeparableFlux, ShockProfile) {
    let b = SeparableFlux::burgers();
    let (m, p) = cells(&b, TorusGrid::new(20, None).unwrap());
    let g = CylinderGrid::symmetric(15, 20, None).unwrap();
    let ts = solve_truncated(&b, &m, &p, g, None, &ShockOptions::default()).unwrap();
    let sp = ShockProfile::from_truncated(&ts, &m, &p);
    (b, sp)
}

fn max_node_error(f: &CylinderField, exact: impl Fn(f64) -> f64) -> f64 {
    let g = f.grid();
    let mut e = 0.0f64;
    for i in 0..g.n1() {
        for j in 0..g.n2() {
            e = e.max((f.get(i, j) - exact(g.x1(i))).abs());
        }
    }
    e
}

/// Least-squares shift `c` of `-tanh(x - c)` by golden section.
fn fit_tanh_shift(f: &CylinderField) -> f64 {
    let g = f.grid();
    let cost = |c: f64| -> f64 {
        (0..g.n1())
            .map(|i| (f.get(i, 0) + (g.x1(i) - c).tanh()).powi(2))
            .sum()
    };
    let (mut a, mut b) = (-3.0f64, 3.0f64);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c1 = b - r * (b - a);
        let c2 = a + r * (b - a);
        if cost(c1) < cost(c2) {
            b = c2;
        } else {
            a = c1;
        }
    }
    0.5 * (a + b)
}

fn criterion_1() -> Outcome {
    let model = ForcedLinearFlux::default();
    let d = 1.0 + 4.0 * PI * PI;
    let (alpha, beta) = (-1.0 / d, -2.0 * PI / d);
    let o = SolverOptions::default();
    let mut errors = Vec::new();
    for m1 in [16, 32, 64] {
        let tg = TorusGrid::new(m1, None).unwrap();
        let c = solve_cell(&model, 0.0, tg, &o).unwrap();
        let h = tg.h1();
        let e2: f64 = (0..tg.n1())
            .map(|i| {
                let x = tg.x1(i);
                let exact = alpha * (2.0 * PI * x).sin() + beta * (2.0 * PI * x).cos();
                h * (c.v.get(i, 0) - exact).powi(2)
            })
            .sum();
        errors.push(e2.sqrt());
    }
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let tg = TorusGrid::new(32, None).unwrap();
    let abar_err = [-1.5, -0.3, 0.0, 0.7, 2.0]
        .iter()
        .map(|&p| (solve_cell(&model, p, tg, &o).unwrap().abar[0] - p).abs())
        .fold(0.0, f64::max);
    let pass = orders.iter().all(|&q| q >= 1.9) && abar_err <= 1e-8;
    outcome(
        pass,
        format!(
            "L2 errors {}, orders {orders:.3?}, max |Abar1(p) - p| = {abar_err:.2e}",
            sci(&errors)
        ),
    )
}

fn criterion_2() -> Outcome {
    let set: Vec<(&str, SeparableFlux)> = vec![
        ("burgers", SeparableFlux::burgers()),
        ("heterogeneous", heterogeneous()),
        (
            "mixed cubic",
            SeparableFlux::new(
                Fourier {
                    terms: vec![(0, 0.8, 0.0), (1, 0.3, 0.2), (2, 0.0, 0.1)],
                },
                Fourier {
                    terms: vec![(1, 0.4, 0.0)],
                },
                Polynomial::new(vec![0.0, 1.0, 0.0, 1.0 / 3.0]),
            )
            .unwrap(),
        ),
    ];
    let tg = TorusGrid::new(16, Some(16)).unwrap();
    let ps: Vec<f64> = (0..21).map(|i| -2.0 + 0.2 * i as f64).collect();
    let o = SolverOptions::default();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, model) in &set {
        let sols = scan_homogenized(model, &ps, tg, &o).unwrap();
        // oracle: f(p) times the mean of phi, both evaluated independently
        let mean_phi: f64 = model
            .phi
            .terms
            .iter()
            .filter(|t| t.0 == 0)
            .map(|t| t.1)
            .sum();
        let e = sols
            .iter()
            .map(|s| {
                let fp: f64 = model
                    .f
                    .coeffs
                    .iter()
                    .rev()
                    .fold(0.0, |acc, c| acc * s.p + c);
                (s.abar[0] - fp * mean_phi).abs()
            })
            .fold(0.0, f64::max);
        worst = worst.max(e);
        parts.push(format!("{name} {e:.2e}"));
    }
    outcome(
        worst <= 1e-8,
        format!("max gap over 21 samples: {}", parts.join(", ")),
    )
}

fn criterion_3() -> Outcome {
    let t0 = Instant::now();
    let b = SeparableFlux::burgers();
    let (m, p) = cells(&b, TorusGrid::new(20, None).unwrap());
    let sp = construct_shock(&b, &m, &p, &[6, 10, 15], &ShockOptions::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let c = fit_tanh_shift(&sp.field);
    let err = max_node_error(&sp.field, |x| -(x - c).tanh());
    let pass = err <= 5e-3
        && (sp.alpha - 1.0).abs() <= 1e-6
        && (sp.alpha_r - 1.0).abs() <= 1e-6
        && secs <= 60.0;
    outcome(
        pass,
        format!(
            "stopped at R = {}, fitted c = {c:.5}, max node error {err:.2e}, alpha = {:.10}, alpha_R = {:.10}, {secs:.2} s",
            sp.r, sp.alpha, sp.alpha_r
        ),
    )
}

fn heterogeneous_shock() -> (SeparableFlux, ShockProfile) {
    let f = heterogeneous();
    let (m, p) = cells(&f, TorusGrid::new(16, Some(8)).unwrap());
    let sp = construct_shock(&f, &m, &p, &[6, 8, 10, 12], &ShockOptions::default()).unwrap();
    (f, sp)
}

fn criterion_4() -> Outcome {
    let (f, sp) = heterogeneous_shock();
    let opts = ShockOptions::default();
    let rep = verify_shock(&sp, &f, &opts).unwrap();
    let u = &sp.field;
    let g = *u.grid();
    let (vm, vp) = sp.end_states(&g).unwrap();
    // sandwich and strict monotonicity recomputed node by node
    let mut sandwich_bad = 0usize;
    for k in 0..g.len() {
        let (lo, hi) = (vp.values()[k], vm.values()[k]);
        if u.values()[k] < lo - opts.eps || u.values()[k] > hi + opts.eps {
            sandwich_bad += 1;
        }
    }
    let tol = opts.solver.tol;
    let (mut violations, mut strict, mut unresolved) = (0usize, 0usize, 0usize);
    for i in 1..g.n1() - 1 - g.m1() {
        for j in 0..g.n2() {
            let gap = u.get(i, j) - u.get(i + g.m1(), j);
            if gap < -tol {
                violations += 1;
            } else if gap > tol {
                strict += 1;
            } else {
                unresolved += 1;
            }
        }
    }
    let alpha_ok = rep.alpha_spread <= 1e-6 && rep.alpha_r >= sp.alpha - 1e-6;
    let pass = sandwich_bad == 0 && alpha_ok && violations == 0;
    outcome(
        pass,
        format!(
            "R = {}, sandwich violations {sandwich_bad}, alpha spread {:.2e}, alpha_R - alpha = {:.2e}, monotonicity: {violations} violations, {strict} strict, {unresolved} with gap below {tol:e}",
            sp.r,
            rep.alpha_spread,
            rep.alpha_r - sp.alpha
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let b = SeparableFlux::burgers();
    let (m, p) = cells(&b, TorusGrid::new(20, None).unwrap());
    let burgers = construct_shock(&b, &m, &p, &[6, 10, 15], &ShockOptions::default()).unwrap();
    let (f, het) = heterogeneous_shock();
    let cases: [(&str, &dyn FluxModel, &ShockProfile, f64); 2] = [
        ("burgers", &b, &burgers, 2.0),
        ("heterogeneous", &f, &het, 1.0),
    ];
    for (name, model, sp, expect) in cases {
        let rep = verify_shock(sp, model, &ShockOptions::default()).unwrap();
        let (am, ap) = lax_rates(model, &sp.minus, &sp.plus);
        let (rm, rp) = (rep.rate_minus.unwrap_or(0.0), rep.rate_plus.unwrap_or(0.0));
        let ok = rm.abs() >= am.abs() / 2.0 * 0.9
            && rp.abs() >= ap.abs() / 2.0 * 0.9
            && (am - expect).abs() < 1e-8
            && (ap + expect).abs() < 1e-8;
        pass &= ok;
        parts.push(format!(
            "{name}: a- = {am:.4}, a+ = {ap:.4}, r- = {rm:.4}, r+ = {rp:.4}"
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let (b, sp) = burgers_r15();
    let td = translate_difference(&sp, &b, 1).unwrap();
    let seq = principal_sequence(&td, &[6, 10, 14], &SolverOptions::default()).unwrap();
    let gaps: Vec<f64> = seq.iter().map(|e| e.diagnostics.l1_gap).collect();
    let last = &seq[2].diagnostics;
    let positive = seq.iter().all(|e| e.diagnostics.min_value > 0.0);
    let mass_ok = seq.iter().all(|e| (e.diagnostics.mass - 2.0).abs() <= 1e-8);
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let pass = positive && mass_ok && decreasing && gaps[2] <= 5e-3;
    outcome(
        pass,
        format!(
            "min p_1,14 = {:.3e}, mass = {:.12}, l1 gaps over R = 6, 10, 14: {}",
            last.min_value,
            last.mass,
            sci(&gaps)
        ),
    )
}

fn criterion_7() -> Outcome {
    let (b, sp) = burgers_r15();
    let opts = MassShockOptions::default();
    let s = solve_mass_shock(&sp, &b, 1.0, &opts).unwrap();
    let err = max_node_error(&s.v_bar, |x| -(x - 0.5).tanh());
    let mass_err = (s.q_achieved - 1.0).abs();
    let ubar = sp.field.restrict(s.v_bar.grid()).unwrap();
    let below = s
        .v_bar
        .values()
        .iter()
        .zip(ubar.values())
        .filter(|(v, u)| v < u)
        .count();
    let zero = solve_mass_shock(&sp, &b, 0.0, &opts).unwrap();
    let exact = zero.v_bar.values() == sp.field.values();
    let pass = err <= 5e-3 && mass_err <= 1e-6 && below == 0 && exact;
    outcome(
        pass,
        format!(
            "k = {}, R = {}, max error vs -tanh(x - 0.5) {err:.2e}, mass error {mass_err:.1e}, nodes with V < U: {below}, q = 0 returns U exactly: {exact}, {} Picard steps",
            s.k, s.r, s.iterations
        ),
    )
}

fn criterion_8() -> Outcome {
    let t0 = Instant::now();
    let (b, sp) = burgers_r15();
    let evo = EvolveOptions {
        dt: 0.0125,
        t_end: 50.0,
        ..Default::default()
    };
    let mopts = MassShockOptions::default();
    let dipole = Perturbation {
        kind: PerturbationKind::Dipole,
        amplitude: 0.3,
        center: 0.0,
        width: 2.0,
        target_mass: None,
    };
    let a = stability_experiment(&sp, &b, &dipole, &evo, &mopts).unwrap();
    let bump = Perturbation {
        kind: PerturbationKind::Bump,
        amplitude: 0.0,
        center: 1.0,
        width: 2.0,
        target_mass: Some(1.0),
    };
    let bb = stability_experiment(&sp, &b, &bump, &evo, &mopts).unwrap();
    let secs = t0.elapsed().as_secs_f64();

    let a_ok = a.max_increase <= 1e-10 && a.decay_ratio <= 0.1 && !a.perturbation.clipped;
    let du = bb.trajectory.distance_series(0);
    let dv = bb.trajectory.distance_series(1);
    let du_end = *du.last().unwrap();
    let b_ok = bb.decay_ratio <= 0.1 && bb.max_increase <= 1e-10 && (du_end - 1.0).abs() <= 5e-2;
    let drift = a
        .trajectory
        .mass_drift_rate
        .max(bb.trajectory.mass_drift_rate);
    let pass = a_ok && b_ok && drift <= 1e-8 && secs <= 300.0;
    outcome(
        pass,
        format!(
            "(a) dipole: d_U(50)/d_U(0) = {:.3e}, largest step increase {:.1e}; (b) bump q = {:.6}: d_V {:.3e} -> {:.3e}, largest step increase {:.1e}, d_U(50) = {du_end:.4}; mass drift {drift:.1e}/unit time; {secs:.1} s",
            a.decay_ratio,
            a.max_increase,
            bb.perturbation.mass,
            dv[0],
            dv[dv.len() - 1],
            bb.max_increase
        ),
    )
}

/// Random admissible data: `v+ + theta (v- - v+)` with `theta` in `[0, 1]`,
/// one on the left end and zero on the right. The second member is lifted
/// by a compactly supported nonnegative bump, the third by a signed one.
fn random_triple(
    rng: &mut ChaCha8Rng,
    grid: CylinderGrid,
) -> (CylinderField, CylinderField, CylinderField) {
    let r = grid.half_length().unwrap() as f64;
    let c: f64 = rng.random_range(-3.0..3.0);
    let w: f64 = rng.random_range(0.5..2.0);
    let modes: Vec<(f64, f64)> = (1..=3)
        .map(|_| {
            (
                rng.random_range(-0.15..0.15),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let env = move |x: f64| {
        let z = x / (r - 2.0);
        if z.abs() >= 1.0 {
            0.0
        } else {
            (0.5 * PI * z).cos().powi(2)
        }
    };
    let theta = move |x: f64| -> f64 {
        let base = 0.5 - 0.5 * ((x - c) / w).tanh();
        let wiggle: f64 = modes
            .iter()
            .enumerate()
            .map(|(k, (a, ph))| a * ((k + 1) as f64 * x + ph).sin())
            .sum();
        let t = base + env(x) * wiggle;
        if x <= -r + 2.0 {
            1.0
        } else if x >= r - 2.0 {
            0.0
        } else {
            t.clamp(0.0, 1.0)
        }
    };
    let bc: f64 = rng.random_range(-2.0..2.0);
    let amp: f64 = rng.random_range(0.1..0.6);
    let lift = move |x: f64| {
        let z = (x - bc) / 2.5;
        if z.abs() >= 1.0 {
            0.0
        } else {
            amp * (0.5 * PI * z).cos().powi(2)
        }
    };
    let dc: f64 = rng.random_range(-2.0..2.0);
    let damp: f64 = rng.random_range(0.2..0.6);
    let swing = move |x: f64| {
        let z = (x - dc) / 3.0;
        if z.abs() >= 1.0 {
            0.0
        } else {
            damp * (PI * z).sin()
        }
    };
    // Burgers end states are the constants 1 and -1
    let u = CylinderField::from_fn(grid, |x, _| -1.0 + 2.0 * theta(x));
    let v = CylinderField::from_fn(grid, |x, _| -1.0 + 2.0 * (theta(x) + lift(x)).min(1.0));
    let w = CylinderField::from_fn(grid, |x, _| {
        -1.0 + 2.0 * (theta(x) + swing(x)).clamp(0.0, 1.0)
    });
    (u, v, w)
}

fn criterion_9() -> Outcome {
    let b = SeparableFlux::burgers();
    let grid = CylinderGrid::symmetric(10, 20, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let opts = EvolveOptions {
        dt: 0.0125,
        t_end: 10.0,
        ..Default::default()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let (u, v, w) = random_triple(&mut rng, grid);
        let ordered = evolve_pair(&b, &u, &v, &opts).unwrap();
        let crossing = evolve_pair(&b, &u, &w, &opts).unwrap();
        let ok = ordered.ordered
            && ordered.order_violation <= 1e-10
            && ordered.max_increase <= 1e-10
            && crossing.max_increase <= 1e-10;
        pass &= ok;
        parts.push(format!(
            "draw {k}: ordered d {:.3e} -> {:.3e} with order violation {:.1e}; crossing d {:.3e} -> {:.3e}; largest step increase {:.1e}",
            ordered.d0,
            ordered.d_final,
            ordered.order_violation,
            crossing.d0,
            crossing.d_final,
            ordered.max_increase.max(crossing.max_increase)
        ));
    }
    outcome(pass, parts.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "cell oracle", criterion_1),
        (2, "homogenized flux identity", criterion_2),
        (3, "Burgers shock oracle", criterion_3),
        (4, "heterogeneous truncated suite", criterion_4),
        (5, "tail rates", criterion_5),
        (6, "principal eigenfunction", criterion_6),
        (7, "mass-prescribed shock", criterion_7),
        (8, "stability experiments", criterion_8),
        (9, "order preservation and L1 contraction", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let t0 = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} {tag} [{name}] {} ({:.2} s)",
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of 9 criteria pass", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
