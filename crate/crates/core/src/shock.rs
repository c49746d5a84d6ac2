//! Truncated shock problems on `(-R, R) x T^{N-1}`, their normalization,
//! the limit profile over an increasing sequence of `R`, and checks of the
//! structural properties a standing shock must have.

use log::{debug, info, warn};
use serde::Serialize;

use crate::cell::CellSolution;
use crate::elliptic::{
    face_flux_profile, residual, rms, solve_stationary, BoundaryCondition, Coefficients,
    EllipticProblem, Pin, SolverOptions,
};
use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::grid::{l1_distance, CylinderField, CylinderGrid, Field, Grid, TorusField};

#[derive(Clone, Copy, Debug)]
pub struct ShockOptions {
    pub solver: SolverOptions,
    /// Target unit-window mean for normalization; midpoint of the end states
    /// when absent.
    pub p_bar: Option<f64>,
    /// Half-width of the window on which successive profiles are compared;
    /// the first `R` when absent.
    pub window_half: Option<i64>,
    pub window_tol: f64,
    /// Slack for the pointwise order checks.
    pub eps: f64,
    pub alpha_tol: f64,
    /// Residual allowed in [`verify_shock`].
    pub residual_tol: f64,
    /// Largest admissible end-state gap at the far ends.
    pub gap_tol: f64,
}

impl Default for ShockOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            p_bar: None,
            window_half: None,
            window_tol: 1e-4,
            eps: 1e-9,
            alpha_tol: 1e-6,
            residual_tol: 1e-8,
            gap_tol: 1e-3,
        }
    }
}

/// `+1` when the profile decreases from `p-` to `p+`, `-1` otherwise.
fn orientation(p_minus: f64, p_plus: f64) -> f64 {
    if p_plus < p_minus {
        1.0
    } else {
        -1.0
    }
}

/// `field` on `target`, filled with the periodic end states where `target`
/// reaches past the field's cylinder.
pub fn extend_with_end_states(
    field: &CylinderField,
    minus: &TorusField,
    plus: &TorusField,
    target: &CylinderGrid,
) -> Result<CylinderField> {
    let g = field.grid();
    g.check_resolution(target)?;
    if minus.grid() != &g.torus() || plus.grid() != &g.torus() {
        return Err(Error::GridMismatch(
            "end states and profile resolution".into(),
        ));
    }
    let m1 = g.m1() as i64;
    let (lo, hi) = (g.x_left() * m1, g.x_right() * m1);
    let t0 = target.x_left() * m1;
    let n2 = g.n2();
    let mut values = Vec::with_capacity(target.len());
    for i in 0..target.n1() {
        let k = t0 + i as i64;
        for j in 0..n2 {
            let v = if k < lo {
                minus.periodic(k, j)
            } else if k > hi {
                plus.periodic(k, j)
            } else {
                field.get((k - lo) as usize, j)
            };
            values.push(v);
        }
    }
    Field::new(*target, values)
}

/// Order checks on a truncated solution.
#[derive(Clone, Debug, Serialize)]
pub struct TruncatedChecks {
    /// Largest amount by which the field leaves the end-state band.
    pub sandwich_violation: f64,
    /// Largest deviation of the face fluxes from their mean.
    pub alpha_spread: f64,
    /// `alpha_R - alpha`, signed so that it should be non-negative.
    pub alpha_excess: f64,
    /// Largest `tau_1 U - U` (signed by orientation); should be `<= 0`.
    pub monotone_violation: f64,
    /// Smallest `U - tau_1 U` over interior columns (signed by orientation).
    pub min_strict_gap: f64,
    pub sandwich_ok: bool,
    pub alpha_ok: bool,
    pub monotone_ok: bool,
}

#[derive(Clone, Debug)]
pub struct TruncatedShock {
    pub field: CylinderField,
    pub p_minus: f64,
    pub p_plus: f64,
    /// `1/2 (Abar1(p-) + Abar1(p+))`.
    pub alpha: f64,
    pub alpha_profile: Vec<f64>,
    pub alpha_r: f64,
    /// RMS residual of the physical equation.
    pub residual: f64,
    pub iterations: usize,
    pub checks: TruncatedChecks,
}

impl TruncatedShock {
    pub fn grid(&self) -> &CylinderGrid {
        self.field.grid()
    }
}

fn linear_blend(minus: &CylinderField, plus: &CylinderField) -> CylinderField {
    let g = *minus.grid();
    let (a, len) = (g.x_left() as f64, g.length() as f64);
    let n2 = g.n2();
    let mut values = Vec::with_capacity(g.len());
    for i in 0..g.n1() {
        let lam = (g.x1(i) - a) / len;
        for j in 0..n2 {
            values.push((1.0 - lam) * minus.get(i, j) + lam * plus.get(i, j));
        }
    }
    Field::new(g, values).expect("blend of finite fields")
}

/// Solves `-Lap U + div A(x, U) = 0` on `grid` with `U = v(., p-)` on the
/// left end and `U = v(., p+)` on the right end.
///
/// The solve first pins the value at the central node to that of the
/// initial guess, which removes the near-translation invariance of long
/// cylinders, and then drops the pin unless the pinned solution already
/// satisfies the dropped equation to tolerance.
pub fn solve_truncated(
    model: &dyn FluxModel,
    minus: &CellSolution,
    plus: &CellSolution,
    grid: CylinderGrid,
    initial: Option<&CylinderField>,
    opts: &ShockOptions,
) -> Result<TruncatedShock> {
    if minus.p == plus.p {
        return Err(Error::Validation("end states must be distinct".into()));
    }
    let vm = minus.v.tile(&grid)?;
    let vp = plus.v.tile(&grid)?;
    let n2 = grid.n2();
    let last = grid.n1() - 1;
    let bc = BoundaryCondition::Dirichlet {
        left: (0..n2).map(|j| vm.get(0, j)).collect(),
        right: (0..n2).map(|j| vp.get(last, j)).collect(),
    };
    let init = match initial {
        Some(f) => {
            if f.grid() != &grid {
                return Err(Error::GridMismatch("initial guess grid".into()));
            }
            f.clone()
        }
        None => linear_blend(&vm, &vp),
    };
    let center = grid.index(grid.n1() / 2, 0);
    let base = EllipticProblem::new(grid, Coefficients::Flux(model), bc);
    let pinned = base.clone().with_pin(Pin {
        node: center,
        value: init.values()[center],
    });
    let tol = opts.solver.tol;
    let rep = solve_stationary(&pinned, &init, &opts.solver)?;
    let mut field = rep.solution;
    let mut iterations = rep.iterations;
    let mut res = rms(&residual(&base, field.values())?);
    if res > tol {
        debug!("pinned residual {res:e} above tolerance; releasing the pin");
        match solve_stationary(&base, &field, &opts.solver) {
            Ok(free) if free.residual <= tol => {
                iterations += free.iterations;
                field = free.solution;
                res = free.residual;
            }
            _ => {
                let band = (vm.values()[center], vp.values()[center]);
                let (f, r, it) = secant_pin(&base, field, center, band, &opts.solver)?;
                iterations += it;
                field = f;
                res = r;
            }
        }
    }
    let alpha = 0.5 * (minus.abar[0] + plus.abar[0]);
    let alpha_profile = face_flux_profile(model, &field);
    let alpha_r = alpha_profile.iter().sum::<f64>() / alpha_profile.len() as f64;
    let checks = truncated_checks(
        &field,
        &vm,
        &vp,
        &alpha_profile,
        alpha_r,
        alpha,
        orientation(minus.p, plus.p),
        opts,
    );
    Ok(TruncatedShock {
        field,
        p_minus: minus.p,
        p_plus: plus.p,
        alpha,
        alpha_profile,
        alpha_r,
        residual: res,
        iterations,
        checks,
    })
}

/// Secant iteration on the pinned value until the equation dropped at the
/// pin holds. Translation is nearly free on long cylinders, so the dropped
/// residual is an almost linear function of the pinned value with a small
/// slope.
fn secant_pin(
    base: &EllipticProblem<'_, CylinderGrid>,
    start: CylinderField,
    center: usize,
    band: (f64, f64),
    solver: &SolverOptions,
) -> Result<(CylinderField, f64, usize)> {
    let (lo, hi) = (band.0.min(band.1), band.0.max(band.1));
    let margin = 1e-3 * (hi - lo);
    let dropped = |f: &CylinderField| -> Result<(f64, f64)> {
        let r = residual(base, f.values())?;
        Ok((r[center], rms(&r)))
    };
    let pinned_at = |c: f64, guess: &CylinderField| {
        let p = base.clone().with_pin(Pin {
            node: center,
            value: c,
        });
        solve_stationary(&p, guess, solver)
    };
    let mut c_prev = start.values()[center];
    let (mut r_prev, mut best_res) = dropped(&start)?;
    let mut best = start;
    let mut c = (c_prev + 1e-3 * (hi - lo)).clamp(lo + margin, hi - margin);
    let mut iterations = 0;
    for _ in 0..40 {
        let rep = pinned_at(c, &best)?;
        iterations += rep.iterations;
        let (r, res) = dropped(&rep.solution)?;
        if res < best_res {
            best_res = res;
            best = rep.solution;
        }
        if best_res <= solver.tol || r == r_prev {
            break;
        }
        let next = c - r * (c - c_prev) / (r - r_prev);
        c_prev = c;
        r_prev = r;
        c = next.clamp(lo + margin, hi - margin);
    }
    if best_res > solver.tol {
        warn!("pin release stopped at residual {best_res:e}");
    }
    Ok((best, best_res, iterations))
}

/// Band `[min(v-, v+), max(v-, v+)]` violation.
pub(crate) fn sandwich_violation(u: &CylinderField, vm: &CylinderField, vp: &CylinderField) -> f64 {
    u.values()
        .iter()
        .zip(vm.values().iter().zip(vp.values()))
        .map(|(&x, (&a, &b))| (a.min(b) - x).max(x - a.max(b)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `(max sign*(tau_1 u - u), min over interior columns of sign*(u - tau_1 u))`.
fn monotonicity(u: &CylinderField, sign: f64) -> (f64, f64) {
    let g = u.grid();
    let (m1, n2, n1) = (g.m1(), g.n2(), g.n1());
    let mut worst = f64::NEG_INFINITY;
    let mut strict = f64::INFINITY;
    for i in 0..n1 - m1 {
        for j in 0..n2 {
            let d = sign * (u.get(i + m1, j) - u.get(i, j));
            worst = worst.max(d);
            // the end columns carry boundary data
            if i > 0 && i + m1 < n1 - 1 {
                strict = strict.min(-d);
            }
        }
    }
    (worst, strict)
}

#[allow(clippy::too_many_arguments)]
fn truncated_checks(
    u: &CylinderField,
    vm: &CylinderField,
    vp: &CylinderField,
    alpha_profile: &[f64],
    alpha_r: f64,
    alpha: f64,
    sign: f64,
    opts: &ShockOptions,
) -> TruncatedChecks {
    let sandwich_violation = sandwich_violation(u, vm, vp);
    let alpha_spread = alpha_profile
        .iter()
        .fold(0.0f64, |m, a| m.max((a - alpha_r).abs()));
    let alpha_excess = sign * (alpha_r - alpha);
    let (monotone_violation, min_strict_gap) = monotonicity(u, sign);
    TruncatedChecks {
        sandwich_violation,
        alpha_spread,
        alpha_excess,
        monotone_violation,
        min_strict_gap,
        sandwich_ok: sandwich_violation <= opts.eps,
        alpha_ok: alpha_spread <= opts.alpha_tol && alpha_excess >= -opts.alpha_tol,
        monotone_ok: monotone_violation <= opts.eps,
    }
}

#[derive(Clone, Debug)]
pub struct NormalizationResult {
    pub p_bar: f64,
    pub x_r: f64,
    pub k_r: i64,
    pub y_r: f64,
    /// `tau_{k_R} U_R` on the relabelled cylinder.
    pub field: CylinderField,
}

/// Unit-window means `M(a) = int_a^{a+1} <U>(x1) dx1` at node-aligned `a`
/// from `x_left - 1` to `x_right`, with the field extended by its end
/// states. Returns `(a, M(a))` pairs.
pub fn window_means(
    field: &CylinderField,
    minus: &TorusField,
    plus: &TorusField,
) -> Result<Vec<(f64, f64)>> {
    let g = *field.grid();
    let m1 = g.m1();
    let ext_grid = CylinderGrid::with_extent(g.x_left() - 1, g.length() + 2, m1, g.m2())?;
    let ext = extend_with_end_states(field, minus, plus, &ext_grid)?;
    let s = ext.slice_integrals();
    let h = g.h1();
    let mut out = Vec::with_capacity(s.len() - m1);
    // running trapezoid over m1 sub-intervals
    let mut acc: f64 = (0..m1).map(|k| 0.5 * (s[k] + s[k + 1])).sum();
    for a in 0..s.len() - m1 {
        if a > 0 {
            acc += 0.5 * (s[a + m1 - 1] + s[a + m1]) - 0.5 * (s[a - 1] + s[a]);
        }
        out.push((ext_grid.x1(a), acc * h));
    }
    Ok(out)
}

/// Locates `x_R` with `M(x_R) = p_bar` and shifts the field by `floor(x_R)`.
pub fn normalize(
    field: &CylinderField,
    minus: &CellSolution,
    plus: &CellSolution,
    p_bar: f64,
) -> Result<NormalizationResult> {
    let (lo, hi) = (minus.p.min(plus.p), minus.p.max(plus.p));
    if !(p_bar > lo && p_bar < hi) {
        return Err(Error::Validation(format!(
            "p_bar = {p_bar} must lie strictly between {lo} and {hi}"
        )));
    }
    let means = window_means(field, &minus.v, &plus.v)?;
    let mut x_r = None;
    for w in means.windows(2) {
        let (a0, m0) = w[0];
        let (a1, m1) = w[1];
        let (d0, d1) = (m0 - p_bar, m1 - p_bar);
        if d0 == 0.0 {
            x_r = Some(a0);
            break;
        }
        if d0.signum() != d1.signum() {
            x_r = Some(a0 + (a1 - a0) * d0 / (d0 - d1));
            break;
        }
    }
    let x_r = x_r.ok_or_else(|| {
        Error::Normalization(format!("window mean never crosses p_bar = {p_bar}"))
    })?;
    let k_r = x_r.floor() as i64;
    Ok(NormalizationResult {
        p_bar,
        x_r,
        k_r,
        y_r: x_r - k_r as f64,
        field: field.translate(k_r),
    })
}

/// A standing shock profile with its end states and provenance.
#[derive(Clone, Debug)]
pub struct ShockProfile {
    pub field: CylinderField,
    pub p_minus: f64,
    pub p_plus: f64,
    /// `1/2 (Abar1(p-) + Abar1(p+))`.
    pub alpha: f64,
    /// Mean discrete face flux of the final truncated solve.
    pub alpha_r: f64,
    pub minus: CellSolution,
    pub plus: CellSolution,
    /// Half-length of the last truncated problem.
    pub r: i64,
    pub r_sequence: Vec<i64>,
    /// Window L1 distances between successive normalized profiles.
    pub cauchy: Vec<f64>,
    pub normalization: Option<(f64, i64, f64)>,
    pub residual: f64,
}

impl ShockProfile {
    /// Wraps a truncated solution without normalization.
    pub fn from_truncated(ts: &TruncatedShock, minus: &CellSolution, plus: &CellSolution) -> Self {
        Self {
            field: ts.field.clone(),
            p_minus: ts.p_minus,
            p_plus: ts.p_plus,
            alpha: ts.alpha,
            alpha_r: ts.alpha_r,
            minus: minus.clone(),
            plus: plus.clone(),
            r: ts
                .grid()
                .half_length()
                .unwrap_or(ts.grid().length() as i64 / 2),
            r_sequence: Vec::new(),
            cauchy: Vec::new(),
            normalization: None,
            residual: ts.residual,
        }
    }

    /// Wraps a stored profile, e.g. one read back from CSV, recomputing
    /// `alpha_R` and the interior residual.
    pub fn from_field(
        field: CylinderField,
        model: &dyn FluxModel,
        minus: &CellSolution,
        plus: &CellSolution,
    ) -> Result<Self> {
        let g = *field.grid();
        if g.torus() != *minus.v.grid() || g.torus() != *plus.v.grid() {
            return Err(Error::GridMismatch(
                "profile and end states have different resolutions".into(),
            ));
        }
        let prof = face_flux_profile(model, &field);
        let alpha_r = prof.iter().sum::<f64>() / prof.len() as f64;
        let n2 = g.n2();
        let last = g.n1() - 1;
        let bc = BoundaryCondition::Dirichlet {
            left: (0..n2).map(|j| field.get(0, j)).collect(),
            right: (0..n2).map(|j| field.get(last, j)).collect(),
        };
        let problem = EllipticProblem::new(g, Coefficients::Flux(model), bc);
        let r = residual(&problem, field.values())?;
        Ok(Self {
            p_minus: minus.p,
            p_plus: plus.p,
            alpha: 0.5 * (minus.abar[0] + plus.abar[0]),
            alpha_r,
            minus: minus.clone(),
            plus: plus.clone(),
            r: g.half_length().unwrap_or(g.length() as i64 / 2),
            r_sequence: Vec::new(),
            cauchy: Vec::new(),
            normalization: None,
            residual: rms(&r[n2..r.len() - n2]),
            field,
        })
    }

    pub fn grid(&self) -> &CylinderGrid {
        self.field.grid()
    }

    /// The profile on any cylinder of the same resolution.
    pub fn sample(&self, grid: &CylinderGrid) -> Result<CylinderField> {
        extend_with_end_states(&self.field, &self.minus.v, &self.plus.v, grid)
    }

    /// End states tiled onto `grid`.
    pub fn end_states(&self, grid: &CylinderGrid) -> Result<(CylinderField, CylinderField)> {
        Ok((self.minus.v.tile(grid)?, self.plus.v.tile(grid)?))
    }

    /// Slice gaps `g-(x1)` and `g+(x1)` on the profile's own cylinder.
    pub fn gaps(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (vm, vp) = self.end_states(self.grid())?;
        let dm = self.field.zip_with(&vm, |a, b| (a - b).abs())?;
        let dp = self.field.zip_with(&vp, |a, b| (a - b).abs())?;
        Ok((dm.slice_integrals(), dp.slice_integrals()))
    }
}

/// Solves the truncated problem for each `R` in turn, warm-starting from
/// the previous normalized profile, until successive normalized profiles
/// agree in L1 on the comparison window.
pub fn construct_shock(
    model: &dyn FluxModel,
    minus: &CellSolution,
    plus: &CellSolution,
    r_sequence: &[i64],
    opts: &ShockOptions,
) -> Result<ShockProfile> {
    if r_sequence.len() < 2 {
        return Err(Error::Validation("need at least two half-lengths".into()));
    }
    if r_sequence.windows(2).any(|w| w[1] <= w[0]) || r_sequence[0] < 1 {
        return Err(Error::Validation(format!(
            "half-lengths must be increasing positive integers, got {r_sequence:?}"
        )));
    }
    let tg = *minus.v.grid();
    let p_bar = opts.p_bar.unwrap_or(0.5 * (minus.p + plus.p));
    let w = opts.window_half.unwrap_or(r_sequence[0]);
    let window = CylinderGrid::symmetric(w, tg.m1(), tg.m2())?;

    let mut prev: Option<ShockProfile> = None;
    // warm starts use the previous solution in its own frame, so the pinned
    // central value stays consistent with the new cylinder
    let mut prev_raw: Option<ShockProfile> = None;
    let mut cauchy = Vec::new();
    for (step, &r) in r_sequence.iter().enumerate() {
        let grid = CylinderGrid::symmetric(r, tg.m1(), tg.m2())?;
        let initial = match &prev_raw {
            Some(p) => Some(p.sample(&grid)?),
            None => None,
        };
        let ts = solve_truncated(model, minus, plus, grid, initial.as_ref(), opts)?;
        let norm = normalize(&ts.field, minus, plus, p_bar)?;
        let raw = ShockProfile::from_truncated(&ts, minus, plus);
        let mut profile = raw.clone();
        profile.field = norm.field;
        profile.r = r;
        profile.r_sequence = r_sequence[..=step].to_vec();
        profile.normalization = Some((norm.x_r, norm.k_r, norm.y_r));
        info!(
            "R = {r}: residual {:.3e}, alpha_R = {:.12}, x_R = {:.4}",
            ts.residual, ts.alpha_r, norm.x_r
        );
        if let Some(p) = &prev {
            let d = l1_distance(&p.sample(&window)?, &profile.sample(&window)?)?;
            cauchy.push(d);
            debug!("window distance between R = {} and R = {r}: {d:e}", p.r);
            if d <= opts.window_tol {
                profile.cauchy = cauchy;
                return Ok(profile);
            }
        }
        profile.cauchy = cauchy.clone();
        prev = Some(profile);
        prev_raw = Some(raw);
    }
    let last = prev.expect("sequence is non-empty");
    Err(Error::NonConvergence {
        iterations: r_sequence.len(),
        residual: *cauchy.last().unwrap_or(&f64::NAN),
        best: last.field.into_values(),
    })
}

/// Log-linear least-squares slope of `g` against `x`, skipping gaps below
/// `floor`. `None` with fewer than three usable points.
pub fn fit_log_slope(x: &[f64], g: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(g)
        .filter(|(_, &v)| v > floor)
        .map(|(&x, &v)| (x, v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Clone, Debug, Serialize)]
pub struct ShockReport {
    pub residual: f64,
    pub residual_ok: bool,
    pub gap_minus_left: f64,
    pub gap_plus_right: f64,
    pub end_states_distinct: bool,
    pub end_state_convergence: bool,
    pub sandwich_violation: f64,
    pub sandwich_ok: bool,
    pub monotone_violation: f64,
    pub min_strict_gap: f64,
    pub monotone_ok: bool,
    pub alpha: f64,
    pub alpha_r: f64,
    pub alpha_spread: f64,
    pub alpha_ok: bool,
    pub a_minus: f64,
    pub a_plus: f64,
    pub rate_minus: Option<f64>,
    pub rate_plus: Option<f64>,
    pub tail_ok: bool,
    pub pass: bool,
}

/// Checks residual, end states, order properties, the integration constant
/// and the exponential tails of a profile.
pub fn verify_shock(
    sp: &ShockProfile,
    model: &dyn FluxModel,
    opts: &ShockOptions,
) -> Result<ShockReport> {
    let g = *sp.grid();
    let (vm, vp) = sp.end_states(&g)?;
    let sign = orientation(sp.p_minus, sp.p_plus);
    let n2 = g.n2();
    let last = g.n1() - 1;
    let bc = BoundaryCondition::Dirichlet {
        left: (0..n2).map(|j| sp.field.get(0, j)).collect(),
        right: (0..n2).map(|j| sp.field.get(last, j)).collect(),
    };
    let problem = EllipticProblem::new(g, Coefficients::Flux(model), bc);
    let r = residual(&problem, sp.field.values())?;
    let interior = &r[n2..r.len() - n2];
    let res = rms(interior);

    let (gm, gp) = sp.gaps()?;
    let gap_minus_left = gm[0];
    let gap_plus_right = gp[last];
    let end_states_distinct =
        (sp.p_minus - sp.p_plus).abs() > 1e-12 && gm[last] > opts.gap_tol && gp[0] > opts.gap_tol;
    let end_state_convergence = gap_minus_left <= opts.gap_tol && gap_plus_right <= opts.gap_tol;

    let sandwich_violation = sandwich_violation(&sp.field, &vm, &vp);
    let (monotone_violation, min_strict_gap) = monotonicity(&sp.field, sign);
    let prof = face_flux_profile(model, &sp.field);
    let alpha_r = prof.iter().sum::<f64>() / prof.len() as f64;
    let alpha_spread = prof.iter().fold(0.0f64, |m, a| m.max((a - alpha_r).abs()));
    let cells_agree = (sp.minus.abar[0] - sp.plus.abar[0]).abs() <= 2.0 * opts.alpha_tol;
    let alpha_ok = alpha_spread <= opts.alpha_tol
        && (alpha_r - sp.alpha).abs() <= opts.alpha_tol
        && cells_agree;

    let (a_minus, a_plus) = crate::cell::lax_rates(model, &sp.minus, &sp.plus);
    let xs: Vec<f64> = (0..g.n1()).map(|i| g.x1(i)).collect();
    let (a, b) = (g.x_left() as f64, g.x_right() as f64);
    let third = (b - a) / 3.0;
    let pick = |lo: f64, hi: f64, gaps: &[f64]| -> (Vec<f64>, Vec<f64>) {
        xs.iter()
            .zip(gaps)
            .filter(|(x, _)| **x >= lo && **x <= hi)
            .map(|(x, v)| (*x, *v))
            .unzip()
    };
    let (xl, gl) = pick(a + 2.0, a + third, &gm);
    let (xr, gr) = pick(b - third, b - 2.0, &gp);
    let rate_minus = fit_log_slope(&xl, &gl, 1e-12);
    let rate_plus = fit_log_slope(&xr, &gr, 1e-12);
    let tail_ok = match (rate_minus, rate_plus) {
        (Some(rm), Some(rp)) => {
            rm.abs() >= 0.9 * a_minus.abs() / 2.0 && rp.abs() >= 0.9 * a_plus.abs() / 2.0
        }
        _ => false,
    };

    let residual_ok = res <= opts.residual_tol;
    let sandwich_ok = sandwich_violation <= opts.eps;
    let monotone_ok = monotone_violation <= opts.eps;
    let pass = residual_ok
        && end_states_distinct
        && end_state_convergence
        && sandwich_ok
        && monotone_ok
        && alpha_ok
        && tail_ok;
    Ok(ShockReport {
        residual: res,
        residual_ok,
        gap_minus_left,
        gap_plus_right,
        end_states_distinct,
        end_state_convergence,
        sandwich_violation,
        sandwich_ok,
        monotone_violation,
        min_strict_gap,
        monotone_ok,
        alpha: sp.alpha,
        alpha_r,
        alpha_spread,
        alpha_ok,
        a_minus,
        a_plus,
        rate_minus,
        rate_plus,
        tail_ok,
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderingReport {
    pub min_difference: f64,
    pub max_difference: f64,
    pub constant_sign: bool,
}

/// Sign of `a - b` on a common cylinder, ignoring differences below `eps`.
pub fn ordering(
    a: &ShockProfile,
    b: &ShockProfile,
    grid: &CylinderGrid,
    eps: f64,
) -> Result<OrderingReport> {
    let d = a.sample(grid)?.zip_with(&b.sample(grid)?, |x, y| x - y)?;
    let (lo, hi) = (d.min_value(), d.max_value());
    Ok(OrderingReport {
        min_difference: lo,
        max_difference: hi,
        constant_sign: lo >= -eps || hi <= eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_cell;
    use crate::flux::SeparableFlux;
    use crate::grid::TorusGrid;

    fn burgers_cells(m1: usize) -> (SeparableFlux, CellSolution, CellSolution) {
        let b = SeparableFlux::burgers();
        let t = TorusGrid::new(m1, None).unwrap();
        let o = SolverOptions::default();
        let m = solve_cell(&b, 1.0, t, &o).unwrap();
        let p = solve_cell(&b, -1.0, t, &o).unwrap();
        (b, m, p)
    }

    fn tanh_field(grid: CylinderGrid, c: f64) -> CylinderField {
        Field::from_fn(grid, |x, _| -(x - c).tanh())
    }

    #[test]
    fn normalization_of_tanh() {
        let (_, m, p) = burgers_cells(40);
        let grid = CylinderGrid::symmetric(12, 40, None).unwrap();
        let n = normalize(&tanh_field(grid, 0.0), &m, &p, 0.0).unwrap();
        assert!((n.x_r + 0.5).abs() < 1e-3, "x_R = {}", n.x_r);
        assert_eq!(n.k_r, -1);
        assert!((n.y_r - 0.5).abs() < 1e-3);
        let n = normalize(&tanh_field(grid, 5.0), &m, &p, 0.0).unwrap();
        assert!((n.x_r - 4.5).abs() < 1e-3);
        assert_eq!(n.k_r, 4);
        assert!(matches!(
            normalize(&tanh_field(grid, 0.0), &m, &p, 1.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn truncated_burgers() {
        let (b, m, p) = burgers_cells(20);
        let grid = CylinderGrid::symmetric(10, 20, None).unwrap();
        let ts = solve_truncated(&b, &m, &p, grid, None, &ShockOptions::default()).unwrap();
        let err = (0..grid.n1())
            .map(|i| (ts.field.get(i, 0) + grid.x1(i).tanh()).abs())
            .fold(0.0, f64::max);
        assert!(err < 5e-3);
        assert!((ts.alpha_r - 1.0).abs() < 1e-6);
        assert!(ts.checks.sandwich_ok && ts.checks.alpha_ok && ts.checks.monotone_ok);
        assert!(ts.checks.min_strict_gap > 0.0);
    }

    #[test]
    fn translation_covariance() {
        let (b, m, p) = burgers_cells(10);
        let g0 = CylinderGrid::symmetric(4, 10, None).unwrap();
        let g1 = CylinderGrid::with_extent(-2, 8, 10, None).unwrap();
        let o = ShockOptions::default();
        let a = solve_truncated(&b, &m, &p, g0, None, &o).unwrap();
        let c = solve_truncated(&b, &m, &p, g1, None, &o).unwrap();
        // g1 is g0 relabelled by x -> x + 2
        let shifted = a.field.translate(-2);
        for (x, y) in shifted.values().iter().zip(c.field.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn verify_flags() {
        let (b, m, p) = burgers_cells(20);
        let grid = CylinderGrid::symmetric(10, 20, None).unwrap();
        let o = ShockOptions::default();
        let ts = solve_truncated(&b, &m, &p, grid, None, &o).unwrap();
        let sp = ShockProfile::from_truncated(&ts, &m, &p);
        let r = verify_shock(&sp, &b, &o).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.rate_minus.unwrap() - 2.0).abs() < 0.1);
        assert!((r.rate_plus.unwrap() + 2.0).abs() < 0.1);

        let mut flat = sp.clone();
        flat.field = Field::constant(grid, 1.0);
        let r = verify_shock(&flat, &b, &o).unwrap();
        assert!(!r.end_states_distinct && !r.pass);

        let mut bent = sp.clone();
        let k = bent.field.grid().index(150, 0);
        bent.field.values_mut()[k] = 0.9;
        let r = verify_shock(&bent, &b, &o).unwrap();
        assert!(!r.monotone_ok);
    }

    #[test]
    fn extension_fills_end_states() {
        let (_, m, p) = burgers_cells(4);
        let small = CylinderGrid::symmetric(1, 4, None).unwrap();
        let f = tanh_field(small, 0.0);
        let big = CylinderGrid::symmetric(3, 4, None).unwrap();
        let e = extend_with_end_states(&f, &m.v, &p.v, &big).unwrap();
        assert_eq!(e.get(0, 0), 1.0);
        assert_eq!(e.get(big.n1() - 1, 0), -1.0);
        assert_eq!(e.get(12, 0), f.get(4, 0));
    }

    #[test]
    fn log_slope_fit() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let g: Vec<f64> = x.iter().map(|x| 3.0 * (-1.5 * x).exp()).collect();
        assert!((fit_log_slope(&x, &g, 1e-12).unwrap() + 1.5).abs() < 1e-12);
        assert!(fit_log_slope(&x[..2], &g[..2], 1e-12).is_none());
    }
}
