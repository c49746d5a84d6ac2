//! The shock `V = U + W` with prescribed excess mass `int W = q`.
//!
//! `W` solves, on `Omega_R` with the Robin condition and `int W = q`,
//!
//! ```text
//! -Lap W + div(b_k W) + div B(x, W) = 0,
//! B(x, r) = chi_R(x1) r (r - p_{k,R}) G(x, r),
//! G(x, r) = int_0^1 int_0^1 s d2A~(x, U + s t r + s (1 - t) p_k) dt ds,
//! ```
//!
//! where `A~` is the flux cut off at `r0` and `p_k` is taken with the sign of
//! `tau_k U - U`. The nonlinear term is handled by damped Picard iteration
//! on the factored linear Robin operator.

use log::{debug, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::eigen::{translate_difference, TranslateDifference};
use crate::elliptic::{
    BoundaryCondition, Coefficients, Discretization, EllipticProblem, RobinOperator, SolverOptions,
};
use crate::error::{Error, Result};
use crate::flux::{with_cutoff, FluxModel};
use crate::grid::{l1_distance, CylinderField, CylinderGrid, Grid};
use crate::quad::gauss_legendre_unit;
use crate::shock::{verify_shock, ShockOptions, ShockProfile, ShockReport};

/// Gauss points per direction for `G`.
pub const G_QUADRATURE_POINTS: usize = 8;

#[derive(Clone, Debug)]
pub struct MassShockOptions {
    pub solver: SolverOptions,
    /// Picard damping `W <- (1 - theta) W + theta L(W)`.
    pub theta: f64,
    /// Stop when the L1 norm of the update is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Half-length of `Omega_R`; the largest admissible one by default.
    pub r: Option<i64>,
    /// Halvings of `q` allowed when Picard does not converge.
    pub max_continuation: usize,
    /// Largest `|k|` tried when selecting the translate.
    pub max_translate: Option<i64>,
    pub verify: ShockOptions,
}

impl Default for MassShockOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            theta: 0.5,
            tol: 1e-10,
            max_iter: 400,
            r: None,
            max_continuation: 4,
            max_translate: None,
            verify: ShockOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MassShockSolution {
    pub q_target: f64,
    pub q_achieved: f64,
    pub k: i64,
    pub r: i64,
    /// Perturbation `W_R` on `Omega_R`.
    pub w: CylinderField,
    /// `U + W_R` on `Omega_R`.
    pub v_bar: CylinderField,
    /// `p_{k,R}` with the sign of `tau_k U - U`.
    pub p_kr: CylinderField,
    /// Sign of `V - U`; zero when `q = 0`.
    pub ordering_sign: i32,
    pub iterations: usize,
    /// L1 norm of each Picard update.
    pub updates: Vec<f64>,
    pub continuation_steps: usize,
    /// Window L1 distances between successive `R` in [`mass_shock_limit`].
    pub cauchy: Vec<f64>,
    pub verification: Option<ShockReport>,
    pub verified: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MassShockSummary {
    pub q_target: f64,
    pub q_achieved: f64,
    pub k: i64,
    pub r: i64,
    pub iterations: usize,
    pub ordering_sign: i32,
    pub verified: bool,
}

impl MassShockSolution {
    pub fn summary(&self) -> MassShockSummary {
        MassShockSummary {
            q_target: self.q_target,
            q_achieved: self.q_achieved,
            k: self.k,
            r: self.r,
            iterations: self.iterations,
            ordering_sign: self.ordering_sign,
            verified: self.verified,
        }
    }

    /// `V` wrapped as a profile with the base profile's cells.
    pub fn profile(&self, base: &ShockProfile) -> ShockProfile {
        ShockProfile {
            field: self.v_bar.clone(),
            r: self.r,
            r_sequence: vec![self.r],
            cauchy: Vec::new(),
            normalization: None,
            ..base.clone()
        }
    }
}

/// `chi_R`: one on `|x1| <= R - 1`, zero for `|x1| >= R - 1/2`, `C2`.
pub fn cutoff_chi(x1: f64, r: f64) -> f64 {
    let d = r - x1.abs();
    if d >= 1.0 {
        1.0
    } else if d <= 0.5 {
        0.0
    } else {
        let t = (d - 0.5) / 0.5;
        t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// Integer `k` with the smallest `|k|` such that `tau_k U - U` has the sign
/// of `q` and mass at least `|q|`, together with its translate difference.
pub fn select_translate(
    sp: &ShockProfile,
    model: &dyn FluxModel,
    q: f64,
    max_translate: Option<i64>,
) -> Result<TranslateDifference> {
    if q == 0.0 || !q.is_finite() {
        return Err(Error::Validation(format!("no translate for q = {q}")));
    }
    let g = sp.grid();
    let limit = max_translate.unwrap_or(g.length() as i64 / 2 - 2).max(1);
    // tau_{-1} U - U has the sign of p_minus - p_plus
    let dir = if (sp.p_minus > sp.p_plus) == (q > 0.0) {
        -1
    } else {
        1
    };
    let mut best = 0.0f64;
    for m in 1..=limit {
        let k = dir * m;
        let td = match translate_difference(sp, model, k) {
            Ok(td) => td,
            Err(Error::Domain(_)) => break,
            Err(e) => return Err(e),
        };
        let signed_mass = td.signed.integral();
        best = best.max(td.mass);
        if signed_mass * q > 0.0 && td.mass >= q.abs() {
            return Ok(td);
        }
    }
    Err(Error::Domain(format!(
        "|q| = {} exceeds every translate mass on the cylinder (largest {best:.6}); use a larger R",
        q.abs()
    )))
}

struct Picard<'a> {
    model: &'a dyn FluxModel,
    grid: CylinderGrid,
    op: RobinOperator<CylinderGrid>,
    disc: Discretization<CylinderGrid>,
    ubar: Vec<f64>,
    pk: Vec<f64>,
    pkr: Vec<f64>,
    chi: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Picard<'_> {
    /// `B(x, r)` at every node.
    fn nonlinear(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid;
        let n2 = g.n2();
        let two_d = g.dim() == 2;
        let pairs: Vec<(f64, f64)> = (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let chi = self.chi[idx / n2];
                let r = w[idx];
                if chi == 0.0 || r == 0.0 {
                    return (0.0, 0.0);
                }
                let x = g.point(idx / n2, idx % n2);
                let (u, p) = (self.ubar[idx], self.pk[idx]);
                let mut acc = [0.0, 0.0];
                for (s, ws) in self.nodes.iter().zip(&self.weights) {
                    for (t, wt) in self.nodes.iter().zip(&self.weights) {
                        let v = u + s * t * r + s * (1.0 - t) * p;
                        let d = self.model.dvv(x, v);
                        let c = ws * wt * s;
                        acc[0] += c * d[0];
                        acc[1] += c * d[1];
                    }
                }
                let f = chi * r * (r - self.pkr[idx]);
                (f * acc[0], if two_d { f * acc[1] } else { 0.0 })
            })
            .collect();
        pairs.into_iter().unzip()
    }

    /// One application of the linear solution map `L_R`.
    fn apply(&self, w: &[f64], q: f64) -> Result<Vec<f64>> {
        let (b1, b2) = self.nonlinear(w);
        let mut src = vec![0.0; w.len()];
        self.disc.divergence(&b1, &b2, &mut src);
        src.iter_mut().for_each(|v| *v = -*v);
        let (f, _, _) = self.op.solve(Some(&src), q)?;
        Ok(f.into_values())
    }

    fn iterate(
        &self,
        mut w: Vec<f64>,
        q: f64,
        opts: &MassShockOptions,
        updates: &mut Vec<f64>,
    ) -> Result<Vec<f64>> {
        let g = self.grid;
        let mut best = f64::INFINITY;
        for it in 0..opts.max_iter {
            let lw = self.apply(&w, q)?;
            let mut upd = 0.0;
            for i in 0..g.n1() {
                for j in 0..g.n2() {
                    let idx = g.index(i, j);
                    let d = opts.theta * (lw[idx] - w[idx]);
                    upd += g.weight(i, j) * d.abs();
                    w[idx] += d;
                }
            }
            updates.push(upd);
            debug!("picard {it}: |dW|_1 = {upd:e}");
            if !upd.is_finite() || upd > 1e3 * best.max(opts.tol) {
                return Err(Error::PicardDivergence(format!(
                    "update grew to {upd:e} after {} steps; try a smaller theta or a larger R",
                    it + 1
                )));
            }
            best = best.min(upd);
            if upd <= opts.tol * q.abs().max(1.0) {
                return Ok(w);
            }
        }
        Err(Error::PicardDivergence(format!(
            "no convergence in {} steps (last update {:e}); try a smaller theta or a larger R",
            opts.max_iter,
            updates.last().copied().unwrap_or(f64::NAN)
        )))
    }
}

/// Solves for the shock with `int (V - U) = q`. `q = 0` returns `U`.
pub fn solve_mass_shock(
    sp: &ShockProfile,
    model: &dyn FluxModel,
    q: f64,
    opts: &MassShockOptions,
) -> Result<MassShockSolution> {
    solve_from(sp, model, q, opts, None)
}

/// [`solve_mass_shock`] over increasing half-lengths `rs`, each warm-started
/// from the previous `W`, until `V` on `(-w, w)` changes by at most
/// `window_tol` in L1. `w` is the first half-length when absent.
pub fn mass_shock_limit(
    sp: &ShockProfile,
    model: &dyn FluxModel,
    q: f64,
    rs: &[i64],
    window_half: Option<i64>,
    window_tol: f64,
    opts: &MassShockOptions,
) -> Result<MassShockSolution> {
    if rs.len() < 2 || rs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!(
            "need at least two increasing half-lengths, got {rs:?}"
        )));
    }
    let g = *sp.grid();
    let window = CylinderGrid::symmetric(window_half.unwrap_or(rs[0]), g.m1(), g.m2())?;
    let mut prev: Option<MassShockSolution> = None;
    let mut cauchy = Vec::new();
    for &r in rs {
        let o = MassShockOptions {
            r: Some(r),
            ..opts.clone()
        };
        let mut sol = solve_from(sp, model, q, &o, prev.as_ref().map(|p| &p.w))?;
        if let Some(p) = &prev {
            let d = l1_distance(&p.v_bar.restrict(&window)?, &sol.v_bar.restrict(&window)?)?;
            debug!("mass shock window distance R = {} to {r}: {d:e}", p.r);
            cauchy.push(d);
            if d <= window_tol {
                sol.cauchy = cauchy;
                return Ok(sol);
            }
        }
        sol.cauchy = cauchy.clone();
        prev = Some(sol);
    }
    Err(Error::NonConvergence {
        iterations: rs.len(),
        residual: *cauchy.last().unwrap_or(&f64::NAN),
        best: prev.map(|p| p.v_bar.into_values()).unwrap_or_default(),
    })
}

/// `w` on `grid`, zero where `grid` reaches past it.
fn zero_extend(w: &CylinderField, grid: &CylinderGrid) -> Result<Vec<f64>> {
    let src = w.grid();
    src.check_resolution(grid)?;
    let n2 = grid.n2();
    let m1 = grid.m1() as i64;
    let mut out = vec![0.0; grid.len()];
    for i in 0..grid.n1() {
        let k = (grid.x_left() - src.x_left()) * m1 + i as i64;
        if k >= 0 && (k as usize) < src.n1() {
            for j in 0..n2 {
                out[i * n2 + j] = w.get(k as usize, j);
            }
        }
    }
    Ok(out)
}

fn solve_from(
    sp: &ShockProfile,
    model: &dyn FluxModel,
    q: f64,
    opts: &MassShockOptions,
    warm: Option<&CylinderField>,
) -> Result<MassShockSolution> {
    if !q.is_finite() {
        return Err(Error::Validation("q must be finite".into()));
    }
    if !(opts.theta > 0.0 && opts.theta <= 1.0) {
        return Err(Error::Validation(format!(
            "theta = {} not in (0, 1]",
            opts.theta
        )));
    }
    if q == 0.0 {
        let g = *sp.grid();
        return Ok(MassShockSolution {
            q_target: 0.0,
            q_achieved: 0.0,
            k: 0,
            r: sp.r,
            w: CylinderField::zeros(g),
            v_bar: sp.field.clone(),
            p_kr: CylinderField::zeros(g),
            ordering_sign: 0,
            iterations: 0,
            updates: Vec::new(),
            continuation_steps: 0,
            cauchy: Vec::new(),
            verification: None,
            verified: true,
        });
    }
    let td = select_translate(sp, model, q, opts.max_translate)?;
    let tg = *td.field.grid();
    let fit = (-tg.x_left()).min(tg.x_right());
    let r = opts.r.unwrap_or(fit);
    if r < 2 || r > fit {
        return Err(Error::Domain(format!(
            "Omega_{r} does not fit in ({}, {}) for k = {}",
            tg.x_left(),
            tg.x_right(),
            td.k
        )));
    }
    let grid = CylinderGrid::symmetric(r, tg.m1(), tg.m2())?;
    let sign = if td.signed.integral() > 0.0 {
        1.0
    } else {
        -1.0
    };

    let b1 = td.b1.restrict(&grid)?;
    let b2 = td.b2.restrict(&grid)?;
    let problem = EllipticProblem::new(
        grid,
        Coefficients::Linear {
            b1: b1.values(),
            b2: b2.values(),
        },
        BoundaryCondition::RobinConservative,
    );
    let op = RobinOperator::new(&problem, &opts.solver)?;
    let (pkr, _, _) = op.solve(None, td.mass)?;
    let pkr: Vec<f64> = pkr.values().iter().map(|v| sign * v).collect();

    let r0 = 2.0 * sp.minus.v.max_abs().max(sp.plus.v.max_abs()) + 1.0;
    let cut = with_cutoff(model, r0);
    let (nodes, weights) = gauss_legendre_unit(G_QUADRATURE_POINTS);
    let picard = Picard {
        model: &cut,
        grid,
        op,
        disc: Discretization::new(grid),
        ubar: sp.field.restrict(&grid)?.into_values(),
        pk: td.signed.restrict(&grid)?.into_values(),
        pkr,
        chi: (0..grid.n1())
            .map(|i| cutoff_chi(grid.x1(i), r as f64))
            .collect(),
        nodes,
        weights,
    };

    let mut updates = Vec::new();
    let start: Vec<f64> = match warm {
        Some(w) => {
            let mut v = zero_extend(w, &grid)?;
            let m: f64 = picard.op.weights().iter().zip(&v).map(|(a, b)| a * b).sum();
            if m != 0.0 {
                v.iter_mut().for_each(|x| *x *= q / m);
            }
            v
        }
        None => picard.pkr.iter().map(|p| q / td.mass * p.abs()).collect(),
    };
    let mut continuation_steps = 0;
    let w = match picard.iterate(start.clone(), q, opts, &mut updates) {
        Ok(w) => w,
        Err(Error::PicardDivergence(msg)) if opts.max_continuation > 0 => {
            warn!("{msg}; continuing in q");
            let mut levels = 1;
            let w = loop {
                // reach q through q / 2^levels, ..., q / 2, q
                let mut w = start
                    .iter()
                    .map(|v| v / (1 << levels) as f64)
                    .collect::<Vec<_>>();
                let mut failed = None;
                for l in (0..=levels).rev() {
                    let ql = q / (1 << l) as f64;
                    let prev = picard
                        .op
                        .weights()
                        .iter()
                        .zip(&w)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                    if prev != 0.0 {
                        w.iter_mut().for_each(|v| *v *= ql / prev);
                    }
                    match picard.iterate(w.clone(), ql, opts, &mut updates) {
                        Ok(next) => w = next,
                        Err(e) => {
                            failed = Some(e);
                            break;
                        }
                    }
                }
                continuation_steps = levels;
                match failed {
                    None => break w,
                    Some(e) if levels >= opts.max_continuation => return Err(e),
                    Some(_) => levels += 1,
                }
            };
            w
        }
        Err(e) => return Err(e),
    };

    let w = CylinderField::new(grid, w)?;
    let v_bar = sp.field.restrict(&grid)?.zip_with(&w, |a, b| a + b)?;
    let q_achieved = w.integral();
    let p_kr = CylinderField::new(grid, picard.pkr.clone())?;
    let mut sol = MassShockSolution {
        q_target: q,
        q_achieved,
        k: td.k,
        r,
        w,
        v_bar,
        p_kr,
        ordering_sign: if q > 0.0 { 1 } else { -1 },
        iterations: updates.len(),
        updates,
        continuation_steps,
        cauchy: Vec::new(),
        verification: None,
        verified: false,
    };
    let report = verify_shock(&sol.profile(sp), model, &opts.verify)?;
    sol.verified = report.pass;
    if !report.pass {
        warn!("mass shock failed verification: {report:?}");
    }
    sol.verification = Some(report);
    Ok(sol)
}

/// Independent targets solved concurrently.
pub fn solve_mass_shocks(
    sp: &ShockProfile,
    model: &dyn FluxModel,
    qs: &[f64],
    opts: &MassShockOptions,
) -> Vec<Result<MassShockSolution>> {
    qs.par_iter()
        .map(|&q| solve_mass_shock(sp, model, q, opts))
        .collect()
}

/// Sign checks of a solution: largest violation of `V - U` having the sign
/// of `q`, of `|W| <= |p_{k,R}|`, and of the sandwich between `U` and
/// `tau_k U`.
#[derive(Clone, Debug, Serialize)]
pub struct MassShockChecks {
    pub sign_violation: f64,
    pub bound_violation: f64,
    pub sandwich_violation: f64,
    pub mass_error: f64,
}

pub fn check_mass_shock(sp: &ShockProfile, sol: &MassShockSolution) -> Result<MassShockChecks> {
    let g = *sol.w.grid();
    let s = sol.ordering_sign as f64;
    let w = sol.w.values();
    let sign_violation = w.iter().map(|v| (-s * v).max(0.0)).fold(0.0, f64::max);
    let bound_violation = w
        .iter()
        .zip(sol.p_kr.values())
        .map(|(a, b)| (a.abs() - b.abs()).max(0.0))
        .fold(0.0, f64::max);
    let sandwich_violation = if sol.k == 0 {
        0.0
    } else {
        let u = sp.field.restrict(&g)?;
        let t = sp.field.translate(sol.k).restrict(&g)?;
        let (lo, hi) = if s > 0.0 { (&u, &t) } else { (&t, &u) };
        let mut worst = 0.0f64;
        for ((v, a), b) in sol.v_bar.values().iter().zip(lo.values()).zip(hi.values()) {
            worst = worst.max(a - v).max(v - b);
        }
        worst
    };
    Ok(MassShockChecks {
        sign_violation,
        bound_violation,
        sandwich_violation,
        mass_error: (sol.q_achieved - sol.q_target).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_cell;
    use crate::flux::SeparableFlux;
    use crate::grid::TorusGrid;
    use crate::shock::solve_truncated;

    fn burgers_profile(r: i64, m1: usize) -> (SeparableFlux, ShockProfile) {
        let b = SeparableFlux::burgers();
        let t = TorusGrid::new(m1, None).unwrap();
        let o = SolverOptions::default();
        let minus = solve_cell(&b, 1.0, t, &o).unwrap();
        let plus = solve_cell(&b, -1.0, t, &o).unwrap();
        let grid = CylinderGrid::symmetric(r, m1, None).unwrap();
        let ts = solve_truncated(&b, &minus, &plus, grid, None, &ShockOptions::default()).unwrap();
        let sp = ShockProfile::from_truncated(&ts, &minus, &plus);
        (b, sp)
    }

    #[test]
    fn chi_shape() {
        assert_eq!(cutoff_chi(0.0, 5.0), 1.0);
        assert_eq!(cutoff_chi(4.0, 5.0), 1.0);
        assert_eq!(cutoff_chi(-4.5, 5.0), 0.0);
        assert_eq!(cutoff_chi(5.0, 5.0), 0.0);
        let m = cutoff_chi(4.25, 5.0);
        assert!((m - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_target_returns_base() {
        let (b, sp) = burgers_profile(6, 10);
        let s = solve_mass_shock(&sp, &b, 0.0, &MassShockOptions::default()).unwrap();
        assert_eq!(s.v_bar.values(), sp.field.values());
        assert_eq!(s.ordering_sign, 0);
    }

    #[test]
    fn burgers_translate_by_half() {
        let (b, sp) = burgers_profile(10, 20);
        for (q, c) in [(1.0, 0.5), (-1.0, -0.5)] {
            let s = solve_mass_shock(&sp, &b, q, &MassShockOptions::default()).unwrap();
            assert_eq!(s.k, if q > 0.0 { -1 } else { 1 });
            assert!((s.q_achieved - q).abs() < 1e-6);
            let g = *s.v_bar.grid();
            let err = (0..g.n1())
                .map(|i| (s.v_bar.get(i, 0) + (g.x1(i) - c).tanh()).abs())
                .fold(0.0, f64::max);
            assert!(err < 5e-3, "q {q}: err {err}");
            let ch = check_mass_shock(&sp, &s).unwrap();
            assert!(ch.sign_violation <= 1e-12, "{ch:?}");
            assert!(ch.sandwich_violation <= 1e-10, "{ch:?}");
            assert!(s.verified, "{:?}", s.verification);
        }
    }

    #[test]
    fn limit_over_r_settles() {
        let (b, sp) = burgers_profile(14, 20);
        let s = mass_shock_limit(
            &sp,
            &b,
            1.0,
            &[6, 9, 12],
            Some(4),
            1e-4,
            &MassShockOptions::default(),
        )
        .unwrap();
        assert!(!s.cauchy.is_empty());
        assert!(*s.cauchy.last().unwrap() <= 1e-4);
        assert!((s.q_achieved - 1.0).abs() < 1e-6);
        let g = *s.v_bar.grid();
        let err = (0..g.n1())
            .map(|i| (s.v_bar.get(i, 0) + (g.x1(i) - 0.5).tanh()).abs())
            .fold(0.0, f64::max);
        assert!(err < 5e-3, "{err}");
        assert!(
            mass_shock_limit(&sp, &b, 1.0, &[6], None, 1e-4, &MassShockOptions::default()).is_err()
        );
    }

    #[test]
    fn target_too_large() {
        let (b, sp) = burgers_profile(4, 10);
        let r = solve_mass_shock(&sp, &b, 50.0, &MassShockOptions::default());
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
