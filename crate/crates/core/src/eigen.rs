//! Translate differences `p_k = |tau_k U - U|` of a shock profile and the
//! positive solution of the Robin problem
//! `-Lap p + div(b_k p) = 0` in `Omega_R`, `-d1 p + b_k1 p = 0` on `x1 = +-R`,
//! with prescribed mass.

use rayon::prelude::*;
use serde::Serialize;

use crate::elliptic::{
    solve_stationary, BoundaryCondition, Coefficients, Discretization, EllipticProblem,
    SolverOptions,
};
use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::grid::{l1_distance, CylinderField, CylinderGrid, Grid};
use crate::quad::gauss_legendre_unit;
use crate::shock::ShockProfile;

/// Gauss points used for the `s`-integral of `b_k`.
pub const B_QUADRATURE_POINTS: usize = 8;

#[derive(Clone, Debug)]
pub struct TranslateDifference {
    pub k: i64,
    /// `tau_k U - U` on the common cylinder.
    pub signed: CylinderField,
    /// `|tau_k U - U|`.
    pub field: CylinderField,
    pub mass: f64,
    /// `b_k = int_0^1 dA/dv(x, s U + (1 - s) tau_k U) ds`, by component.
    pub b1: CylinderField,
    pub b2: CylinderField,
    /// False when the flux has no exact second derivative or is not
    /// polynomial, so the quadrature is not exact.
    pub b_exact: bool,
    pub a_minus: f64,
    pub a_plus: f64,
}

/// `p_k` and `b_k` of a profile on the cylinder where both `U` and
/// `tau_k U` are defined.
pub fn translate_difference(
    sp: &ShockProfile,
    model: &dyn FluxModel,
    k: i64,
) -> Result<TranslateDifference> {
    let u = &sp.field;
    let shifted = u.shift_e1(k)?;
    let common = *shifted.grid();
    let base = u.restrict(&common)?;
    let signed = shifted.zip_with(&base, |a, b| a - b)?;
    let field = signed.map(f64::abs);
    let mass = field.integral();
    let (b1, b2) = b_coefficients(model, &base, &shifted)?;
    let (a_minus, a_plus) = crate::cell::lax_rates(model, &sp.minus, &sp.plus);
    Ok(TranslateDifference {
        k,
        signed,
        field,
        mass,
        b1,
        b2,
        b_exact: model.exact_dvv(),
        a_minus,
        a_plus,
    })
}

/// `int_0^1 dA/dv(x, s u + (1 - s) w) ds` by Gauss-Legendre quadrature.
pub fn b_coefficients(
    model: &dyn FluxModel,
    u: &CylinderField,
    w: &CylinderField,
) -> Result<(CylinderField, CylinderField)> {
    u.check_same_grid(w)?;
    let g = *u.grid();
    let (s, wts) = gauss_legendre_unit(B_QUADRATURE_POINTS);
    let mut b1 = Vec::with_capacity(g.len());
    let mut b2 = Vec::with_capacity(g.len());
    for i in 0..g.n1() {
        for j in 0..g.n2() {
            let x = g.point(i, j);
            let (a, c) = (u.get(i, j), w.get(i, j));
            let mut acc = [0.0, 0.0];
            for (sq, wq) in s.iter().zip(&wts) {
                let d = model.dv(x, sq * a + (1.0 - sq) * c);
                acc[0] += wq * d[0];
                acc[1] += wq * d[1];
            }
            b1.push(acc[0]);
            b2.push(acc[1]);
        }
    }
    Ok((CylinderField::new(g, b1)?, CylinderField::new(g, b2)?))
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenDiagnostics {
    pub min_value: f64,
    pub mass: f64,
    pub target_mass: f64,
    /// Largest slice-averaged face flux `-d1 <p> + <b1 p>`.
    pub slice_identity: f64,
    /// Largest ratio of slice mass to the fitted envelope `C exp(a x1 / 2)`
    /// on the outer halves; at most one when the envelope holds.
    pub envelope_ratio: f64,
    /// Fraction of the mass in `|x1| > 0.9 R`.
    pub outer_mass_fraction: f64,
    /// `||p_{k,R} - p_k||_{L1(Omega_R)}` plus the mass of `p_k` outside
    /// `Omega_R`.
    pub l1_gap: f64,
}

#[derive(Clone, Debug)]
pub struct PrincipalEigen {
    pub k: i64,
    pub r: i64,
    pub field: CylinderField,
    pub diagnostics: EigenDiagnostics,
    pub residual: f64,
}

/// Solves the Robin problem on `Omega_R` with mass `td.mass`.
pub fn solve_principal(
    td: &TranslateDifference,
    r: i64,
    opts: &SolverOptions,
) -> Result<PrincipalEigen> {
    if !(td.mass > 0.0) {
        return Err(Error::Validation(format!(
            "translate difference has mass {}, need a positive mass",
            td.mass
        )));
    }
    let tg = td.field.grid();
    let grid = CylinderGrid::symmetric(r, tg.m1(), tg.m2())?;
    if grid.x_left() < tg.x_left() || grid.x_right() > tg.x_right() {
        return Err(Error::Domain(format!(
            "Omega_{r} is not inside ({}, {})",
            tg.x_left(),
            tg.x_right()
        )));
    }
    let b1 = td.b1.restrict(&grid)?;
    let b2 = td.b2.restrict(&grid)?;
    let problem = EllipticProblem::new(
        grid,
        Coefficients::Linear {
            b1: b1.values(),
            b2: b2.values(),
        },
        BoundaryCondition::RobinConservative,
    )
    .with_mass(td.mass);
    let rep = solve_stationary(&problem, &CylinderField::zeros(grid), opts)?;
    let field = rep.solution;
    let diagnostics = diagnostics(td, &field, &b1)?;
    Ok(PrincipalEigen {
        k: td.k,
        r,
        field,
        diagnostics,
        residual: rep.residual,
    })
}

/// [`solve_principal`] for several `R`, concurrently.
pub fn principal_sequence(
    td: &TranslateDifference,
    rs: &[i64],
    opts: &SolverOptions,
) -> Result<Vec<PrincipalEigen>> {
    rs.par_iter()
        .map(|&r| solve_principal(td, r, opts))
        .collect()
}

fn diagnostics(
    td: &TranslateDifference,
    p: &CylinderField,
    b1: &CylinderField,
) -> Result<EigenDiagnostics> {
    let g = *p.grid();
    let r = g.half_length().unwrap_or(g.length() as i64 / 2) as f64;
    let disc = Discretization::new(g);
    let a1: Vec<f64> = b1
        .values()
        .iter()
        .zip(p.values())
        .map(|(b, v)| b * v)
        .collect();
    let slice_identity = (0..g.n1() - 1)
        .map(|i| disc.x1_face_flux(p.values(), &a1, i).abs())
        .fold(0.0, f64::max);

    let slices = p.slice_integrals();
    let xs: Vec<f64> = (0..g.n1()).map(|i| g.x1(i)).collect();
    let envelope = |rate: f64, side: f64| -> f64 {
        let inner: Vec<usize> = (0..g.n1())
            .filter(|&i| side * xs[i] > 0.0 && side * xs[i] <= r / 2.0)
            .collect();
        let c = inner
            .iter()
            .map(|&i| slices[i] / (rate * xs[i] / 2.0).exp())
            .fold(0.0, f64::max);
        (0..g.n1())
            .filter(|&i| side * xs[i] > r / 2.0)
            .map(|i| slices[i] / (c * (rate * xs[i] / 2.0).exp()))
            .fold(0.0, f64::max)
    };
    let envelope_ratio = envelope(td.a_plus, 1.0).max(envelope(td.a_minus, -1.0));

    let total = p.integral();
    let outer: f64 = (0..g.n1())
        .filter(|&i| xs[i].abs() > 0.9 * r)
        .map(|i| g.weight1(i) * slices[i])
        .sum();

    let inside = td.field.restrict(&g)?;
    let l1_inside = l1_distance(p, &inside)?;
    let outside = td.field.integral() - inside.integral();
    Ok(EigenDiagnostics {
        min_value: p.min_value(),
        mass: total,
        target_mass: td.mass,
        slice_identity,
        envelope_ratio,
        outer_mass_fraction: outer / total,
        l1_gap: l1_inside + outside.max(0.0),
    })
}
