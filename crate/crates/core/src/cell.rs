//! Periodic cell states `v(., p)`, the homogenized flux and the
//! admissibility of a pair of end states.

use rayon::prelude::*;
use serde::Serialize;

use crate::elliptic::{
    solve_stationary, BoundaryCondition, Coefficients, EllipticProblem, SolverOptions,
};
use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::grid::{Field, Grid, TorusField, TorusGrid};

/// Periodic solution of the cell problem with mean `p`.
#[derive(Clone, Debug)]
pub struct CellSolution {
    pub p: f64,
    pub v: TorusField,
    /// Cell average of `A(x, v(x, p))`.
    pub abar: [f64; 2],
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `-Lap v + div A(x, v) = 0` on the torus with `<v> = p`, starting
/// from the constant `p`.
pub fn solve_cell(
    model: &dyn FluxModel,
    p: f64,
    grid: TorusGrid,
    opts: &SolverOptions,
) -> Result<CellSolution> {
    if !p.is_finite() {
        return Err(Error::Validation(format!(
            "cell mean must be finite, got {p}"
        )));
    }
    let problem =
        EllipticProblem::new(grid, Coefficients::Flux(model), BoundaryCondition::Periodic)
            .with_mean(p);
    let rep = solve_stationary(&problem, &Field::constant(grid, p), opts)?;
    let abar = homogenized_flux(&rep.solution, model);
    Ok(CellSolution {
        p,
        v: rep.solution,
        abar,
        residual: rep.residual,
        iterations: rep.iterations,
    })
}

/// Torus average of `A(x, v(x))`.
pub fn homogenized_flux(v: &TorusField, model: &dyn FluxModel) -> [f64; 2] {
    let g = v.grid();
    let mut s = [0.0, 0.0];
    for i in 0..g.n1() {
        for j in 0..g.n2() {
            let a = model.flux(g.point(i, j), v.get(i, j));
            s[0] += a[0];
            s[1] += a[1];
        }
    }
    let n = g.len() as f64;
    [s[0] / n, s[1] / n]
}

/// Homogenized flux at each `p`, solved concurrently; output keeps the
/// input order.
pub fn scan_homogenized(
    model: &dyn FluxModel,
    ps: &[f64],
    grid: TorusGrid,
    opts: &SolverOptions,
) -> Result<Vec<CellSolution>> {
    ps.par_iter()
        .map(|&p| solve_cell(model, p, grid, opts))
        .collect()
}

/// Smallest `v(x, hi) - v(x, lo)` over the nodes.
pub fn comparison_gap(lo: &CellSolution, hi: &CellSolution) -> Result<f64> {
    lo.v.check_same_grid(&hi.v)?;
    Ok(hi
        .v
        .values()
        .iter()
        .zip(lo.v.values())
        .map(|(a, b)| a - b)
        .fold(f64::INFINITY, f64::min))
}

/// Forward difference `(v(., p + delta) - v(., p)) / delta`.
pub fn p_derivative(
    model: &dyn FluxModel,
    p: f64,
    delta: f64,
    grid: TorusGrid,
    opts: &SolverOptions,
) -> Result<TorusField> {
    let a = solve_cell(model, p, grid, opts)?;
    let b = solve_cell(model, p + delta, grid, opts)?;
    b.v.zip_with(&a.v, |x, y| (x - y) / delta)
}

#[derive(Clone, Debug, Serialize)]
pub struct Conjugate {
    pub p_plus: f64,
    pub alpha: f64,
    /// Final `Abar1(p_plus) - Abar1(p_minus)`.
    pub g: f64,
    pub iterations: usize,
}

/// Bisection for `Abar1(p) = Abar1(p_minus)` on `bracket`.
pub fn find_conjugate(
    model: &dyn FluxModel,
    p_minus: f64,
    bracket: (f64, f64),
    grid: TorusGrid,
    opts: &SolverOptions,
) -> Result<Conjugate> {
    let (mut lo, mut hi) = if bracket.0 <= bracket.1 {
        bracket
    } else {
        (bracket.1, bracket.0)
    };
    if lo <= p_minus && p_minus <= hi {
        return Err(Error::Validation(format!(
            "bracket [{lo}, {hi}] contains p_minus = {p_minus}"
        )));
    }
    let alpha = solve_cell(model, p_minus, grid, opts)?.abar[0];
    let g = |p: f64| -> Result<f64> { Ok(solve_cell(model, p, grid, opts)?.abar[0] - alpha) };
    let (mut g_lo, g_hi) = (g(lo)?, g(hi)?);
    if g_lo == 0.0 {
        return Ok(Conjugate {
            p_plus: lo,
            alpha,
            g: 0.0,
            iterations: 0,
        });
    }
    if g_hi == 0.0 {
        return Ok(Conjugate {
            p_plus: hi,
            alpha,
            g: 0.0,
            iterations: 0,
        });
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::Bracket { lo, hi, g_lo, g_hi });
    }
    let mut it = 0;
    loop {
        it += 1;
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if gm.abs() <= 1e-9 || hi - lo <= 1e-14 * (1.0 + mid.abs()) || it >= 200 {
            return Ok(Conjugate {
                p_plus: mid,
                alpha,
                g: gm,
                iterations: it,
            });
        }
        if gm.signum() == g_lo.signum() {
            lo = mid;
            g_lo = gm;
        } else {
            hi = mid;
        }
    }
}

/// Lax rates `a- = int min_x' dA1/dv(x, v(x, p-)) dx1` and
/// `a+ = int max_x' dA1/dv(x, v(x, p+)) dx1`.
pub fn lax_rates(model: &dyn FluxModel, minus: &CellSolution, plus: &CellSolution) -> (f64, f64) {
    let extremal = |sol: &CellSolution, take_min: bool| {
        let g = sol.v.grid();
        (0..g.n1())
            .map(|i| {
                let vals = (0..g.n2()).map(|j| model.dv(g.point(i, j), sol.v.get(i, j))[0]);
                if take_min {
                    vals.fold(f64::INFINITY, f64::min)
                } else {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .sum::<f64>()
            / g.n1() as f64
    };
    (extremal(minus, true), extremal(plus, false))
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub p_minus: f64,
    pub p_plus: f64,
    pub alpha: f64,
    pub rh_gap: f64,
    /// Minimum over the samples of the signed gap `alpha - Abar1(p)` divided
    /// by the parabola `(p - p+)(p- - p) / ((p- - p+)/2)^2`, which vanishes at
    /// both ends; equals one for Burgers.
    pub oleinik_margin: f64,
    /// Minimum of the raw signed gap.
    pub oleinik_min_gap: f64,
    /// Sample where the normalized margin is attained.
    pub oleinik_argmin: f64,
    pub n_samples: usize,
    /// Spacing of the sampled `p` values.
    pub sample_spacing: f64,
    pub a_minus: f64,
    pub a_plus: f64,
    pub rh_ok: bool,
    pub oleinik_ok: bool,
    pub lax_ok: bool,
    pub pass: bool,
}

/// Checks the jump condition, the sampled Oleinik condition and the Lax
/// rates for the pair `(p-, p+)`.
pub fn admissibility(
    model: &dyn FluxModel,
    p_minus: f64,
    p_plus: f64,
    n_samples: usize,
    grid: TorusGrid,
    opts: &SolverOptions,
    rh_tol: f64,
) -> Result<AdmissibilityReport> {
    if p_minus == p_plus {
        return Err(Error::Validation(format!(
            "end states must be distinct, got p- = p+ = {p_minus}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::Validation("need at least one Oleinik sample".into()));
    }
    let minus = solve_cell(model, p_minus, grid, opts)?;
    let plus = solve_cell(model, p_plus, grid, opts)?;
    let alpha = 0.5 * (minus.abar[0] + plus.abar[0]);
    let rh_gap = (minus.abar[0] - plus.abar[0]).abs();

    let ps: Vec<f64> = (1..=n_samples)
        .map(|i| p_plus + (p_minus - p_plus) * i as f64 / (n_samples + 1) as f64)
        .collect();
    let sols = scan_homogenized(model, &ps, grid, opts)?;
    let sign = if p_plus < p_minus { 1.0 } else { -1.0 };
    let half = 0.5 * (p_minus - p_plus);
    let mut margin = f64::INFINITY;
    let mut min_gap = f64::INFINITY;
    let mut argmin = ps[0];
    for s in &sols {
        let gap = sign * (alpha - s.abar[0]);
        let bump = (s.p - p_plus) * (p_minus - s.p) / (half * half);
        let ratio = gap / bump;
        if ratio < margin {
            margin = ratio;
            argmin = s.p;
        }
        min_gap = min_gap.min(gap);
    }
    let (a_minus, a_plus) = lax_rates(model, &minus, &plus);
    let rh_ok = rh_gap <= rh_tol;
    let oleinik_ok = margin > 0.0 && min_gap > 0.0;
    let lax_ok = a_minus > 0.0 && a_plus < 0.0;
    Ok(AdmissibilityReport {
        p_minus,
        p_plus,
        alpha,
        rh_gap,
        oleinik_margin: margin,
        oleinik_min_gap: min_gap,
        oleinik_argmin: argmin,
        n_samples,
        sample_spacing: (p_minus - p_plus).abs() / (n_samples + 1) as f64,
        a_minus,
        a_plus,
        rh_ok,
        oleinik_ok,
        lax_ok,
        pass: rh_ok && oleinik_ok && lax_ok,
    })
}
