//! Time evolution of `d_t u - Lap u + div A(x, u) = 0` on a truncated
//! cylinder with Dirichlet end columns, and the shock stability
//! experiments.
//!
//! One IMEX Euler step solves
//!
//! ```text
//! (u' - u) / dt - Lap_h u' = -div_h A(x, u)
//! ```
//!
//! with the same flux-form spatial operator as the stationary solver, so a
//! discrete steady state is an exact fixed point.

use log::warn;
use serde::Serialize;

use crate::elliptic::{
    residual, rms, solve_stationary, BoundaryCondition, Coefficients, Discretization,
    EllipticProblem, SolverOptions,
};
use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::grid::{l1_distance, CylinderField, CylinderGrid, Grid};
use crate::linalg::{LinearSolver, Prepared, Triplets};
use crate::massshock::{solve_mass_shock, MassShockOptions, MassShockSolution};
use crate::shock::ShockProfile;

/// Safety factor of the advective step restriction.
pub const CFL_SAFETY: f64 = 0.5;

/// Factored IMEX stepper.
pub struct Stepper<'a> {
    model: &'a dyn FluxModel,
    grid: CylinderGrid,
    disc: Discretization<CylinderGrid>,
    solver: Prepared,
    left: Vec<f64>,
    right: Vec<f64>,
    dt: f64,
    scratch_a: (Vec<f64>, Vec<f64>),
}

impl<'a> Stepper<'a> {
    /// `left` and `right` are the pinned values of the end columns.
    pub fn new(
        model: &'a dyn FluxModel,
        grid: CylinderGrid,
        left: Vec<f64>,
        right: Vec<f64>,
        dt: f64,
        linear: LinearSolver,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Validation(format!(
                "time step {dt} must be positive"
            )));
        }
        let n2 = grid.n2();
        if left.len() != n2 || right.len() != n2 {
            return Err(Error::GridMismatch("boundary column length".into()));
        }
        let n = grid.len();
        let disc = Discretization::new(grid);
        let zero = vec![0.0; n];
        let mut t = Triplets::with_capacity(n, 5 * n);
        disc.jacobian(1.0, &zero, &zero, &mut t);
        let last = grid.n1() - 1;
        for j in 0..n2 {
            t.clear_row(grid.index(0, j));
            t.clear_row(grid.index(last, j));
        }
        for k in 0..n {
            t.add(k, k, 1.0 / dt);
        }
        let solver = Prepared::new(t.to_csr(), linear)?;
        Ok(Self {
            model,
            grid,
            disc,
            solver,
            left,
            right,
            dt,
            scratch_a: (vec![0.0; n], vec![0.0; n]),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &CylinderGrid {
        &self.grid
    }

    /// Advances `u` by one step in place.
    pub fn step(&mut self, u: &mut [f64]) -> Result<()> {
        let (a1, a2) = self.disc.flux_values(self.model, u);
        let div = &mut self.scratch_a.0;
        self.disc.divergence(&a1, &a2, div);
        let rhs = &mut self.scratch_a.1;
        for k in 0..u.len() {
            rhs[k] = u[k] / self.dt - div[k];
        }
        let last = self.grid.n1() - 1;
        for j in 0..self.grid.n2() {
            rhs[self.grid.index(0, j)] = self.left[j] / self.dt;
            rhs[self.grid.index(last, j)] = self.right[j] / self.dt;
        }
        let (x, _) = self.solver.solve(rhs)?;
        u.copy_from_slice(&x);
        Ok(())
    }
}

/// `dt * max (|dA1/dv| / h1 + |dA2/dv| / h2)` over the nodes of the given
/// fields.
pub fn cfl_number(model: &dyn FluxModel, fields: &[&CylinderField], dt: f64) -> f64 {
    let mut worst = 0.0f64;
    for f in fields {
        let g = f.grid();
        let (h1, h2) = (g.h1(), g.h2());
        for i in 0..g.n1() {
            for j in 0..g.n2() {
                let d = model.dv(g.point(i, j), f.get(i, j));
                let mut c = d[0].abs() / h1;
                if g.dim() == 2 {
                    c += d[1].abs() / h2;
                }
                worst = worst.max(c);
            }
        }
    }
    dt * worst
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Steps between recorded samples; every step is still monitored.
    pub sample_every: usize,
    /// Steps between field snapshots.
    pub snap_every: Option<usize>,
    pub linear: LinearSolver,
    /// Largest tolerated deviation from the end states at `x1 = +-(R - 1)`.
    pub contamination_tol: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            dt: 0.0125,
            t_end: 10.0,
            sample_every: 1,
            snap_every: None,
            linear: LinearSolver::Direct,
            contamination_tol: 1e-6,
        }
    }
}

/// A named field against which `l1` distances are recorded.
#[derive(Clone, Debug)]
pub struct Reference {
    pub name: String,
    pub field: CylinderField,
}

impl Reference {
    pub fn new(name: &str, field: CylinderField) -> Self {
        Self {
            name: name.to_string(),
            field,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Sample {
    pub t: f64,
    /// `int (u - base)`.
    pub mass: f64,
    pub distances: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub samples: Vec<Sample>,
    pub snapshots: Vec<(f64, CylinderField)>,
    pub final_state: CylinderField,
    pub steps: usize,
    pub dt: f64,
    pub cfl: f64,
    /// Largest one-step increase of each distance.
    pub max_increase: Vec<f64>,
    /// `|m(T) - m(0)| / T`.
    pub mass_drift_rate: f64,
    pub max_contamination: f64,
    /// Largest violation of `min(v-, v+) <= u <= max(v-, v+)` seen, when end
    /// states were given.
    pub sandwich_violation: Option<f64>,
}

impl Trajectory {
    pub fn distance_series(&self, r: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.distances[r]).collect()
    }

    /// CSV of `t,mass,d_<name>...`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let mut head = String::from("t,mass");
        for n in &self.names {
            head.push_str(",d_");
            head.push_str(n);
        }
        writeln!(w, "{head}")?;
        for s in &self.samples {
            let mut line = format!("{},{}", crate::grid::fmt17(s.t), crate::grid::fmt17(s.mass));
            for d in &s.distances {
                line.push(',');
                line.push_str(&crate::grid::fmt17(*d));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Everything needed for one run.
pub struct EvolveSetup<'a> {
    pub model: &'a dyn FluxModel,
    pub u0: CylinderField,
    /// Mass is measured as `int (u - base)`.
    pub base: CylinderField,
    pub refs: Vec<Reference>,
    /// Tiled end states `(v-, v+)` for the sandwich and contamination
    /// monitors; the end columns of `u0` are pinned either way.
    pub end_states: Option<(CylinderField, CylinderField)>,
}

/// Runs the IMEX scheme to `t_end`.
pub fn evolve(setup: &EvolveSetup<'_>, opts: &EvolveOptions) -> Result<Trajectory> {
    let g = *setup.u0.grid();
    setup.u0.check_same_grid(&setup.base)?;
    for r in &setup.refs {
        setup.u0.check_same_grid(&r.field)?;
    }
    if !(opts.t_end >= 0.0) || opts.sample_every == 0 {
        return Err(Error::Validation(
            "need t_end >= 0 and sample_every >= 1".into(),
        ));
    }
    let mut monitored: Vec<&CylinderField> = vec![&setup.u0];
    if let Some((vm, vp)) = &setup.end_states {
        vm.check_same_grid(&setup.u0)?;
        monitored.push(vm);
        monitored.push(vp);
    }
    let cfl = cfl_number(setup.model, &monitored, opts.dt);
    if cfl > CFL_SAFETY * (1.0 + 1e-12) {
        return Err(Error::Cfl {
            dt: opts.dt,
            suggested: opts.dt * CFL_SAFETY / cfl,
        });
    }
    let disc = Discretization::new(g);
    if disc.peclet(setup.model, setup.u0.values()) > 2.0 {
        warn!("grid Peclet number exceeds 2; order preservation may fail");
    }
    let n2 = g.n2();
    let last = g.n1() - 1;
    let left = (0..n2).map(|j| setup.u0.get(0, j)).collect();
    let right = (0..n2).map(|j| setup.u0.get(last, j)).collect();
    let mut stepper = Stepper::new(setup.model, g, left, right, opts.dt, opts.linear)?;

    let steps = (opts.t_end / opts.dt).round() as usize;
    let watch: Vec<usize> = match g.half_length() {
        Some(r) if r >= 2 => [-(r - 1), r - 1]
            .iter()
            .filter_map(|&x| g.column_at(x))
            .collect(),
        _ => Vec::new(),
    };
    let mut u = setup.u0.clone();
    let measure = |u: &CylinderField| -> Result<Sample> {
        let mass = u.integral() - setup.base.integral();
        let distances = setup
            .refs
            .iter()
            .map(|r| l1_distance(u, &r.field))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sample {
            t: 0.0,
            mass,
            distances,
        })
    };
    let contamination = |u: &CylinderField| -> f64 {
        let Some((vm, vp)) = &setup.end_states else {
            return 0.0;
        };
        let mut worst = 0.0f64;
        for (n, &i) in watch.iter().enumerate() {
            let v = if n == 0 { vm } else { vp };
            for j in 0..n2 {
                worst = worst.max((u.get(i, j) - v.get(i, j)).abs());
            }
        }
        worst
    };
    let sandwich = |u: &CylinderField| -> Option<f64> {
        setup
            .end_states
            .as_ref()
            .map(|(vm, vp)| crate::shock::sandwich_violation(u, vm, vp))
    };

    let first = measure(&u)?;
    let m0 = first.mass;
    let mut prev = first.distances.clone();
    let mut samples = vec![first];
    let mut snapshots = Vec::new();
    if opts.snap_every.is_some() {
        snapshots.push((0.0, u.clone()));
    }
    let mut max_increase = vec![f64::NEG_INFINITY; setup.refs.len()];
    let c0 = contamination(&u);
    let mut max_contamination = c0;
    let mut sandwich_worst = sandwich(&u);
    let mut warned = false;
    for s in 1..=steps {
        stepper.step(u.values_mut())?;
        let t = s as f64 * opts.dt;
        let mut sample = measure(&u)?;
        sample.t = t;
        for (k, d) in sample.distances.iter().enumerate() {
            max_increase[k] = max_increase[k].max(d - prev[k]);
        }
        prev.clone_from(&sample.distances);
        let c = contamination(&u);
        max_contamination = max_contamination.max(c);
        if c > opts.contamination_tol && !warned {
            warn!("boundary contamination {c:e} at t = {t}; enlarge R");
            warned = true;
        }
        if let (Some(w), Some(v)) = (sandwich_worst.as_mut(), sandwich(&u)) {
            *w = w.max(v);
        }
        if s % opts.sample_every == 0 || s == steps {
            samples.push(sample);
        }
        if let Some(k) = opts.snap_every {
            if k > 0 && s % k == 0 {
                snapshots.push((t, u.clone()));
            }
        }
    }
    let m_end = samples.last().map_or(m0, |s| s.mass);
    let t_end = steps as f64 * opts.dt;
    Ok(Trajectory {
        names: setup.refs.iter().map(|r| r.name.clone()).collect(),
        samples,
        snapshots,
        final_state: u,
        steps,
        dt: opts.dt,
        cfl,
        max_increase: max_increase
            .into_iter()
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect(),
        mass_drift_rate: if t_end > 0.0 {
            (m_end - m0).abs() / t_end
        } else {
            0.0
        },
        max_contamination,
        sandwich_violation: sandwich_worst,
    })
}

/// Two solutions stepped side by side.
#[derive(Clone, Debug, Serialize)]
pub struct PairReport {
    pub d0: f64,
    pub d_final: f64,
    /// Largest one-step increase of `||u - v||_1`.
    pub max_increase: f64,
    /// Largest violation of the initial ordering, zero when unordered.
    pub order_violation: f64,
    pub ordered: bool,
    pub steps: usize,
}

/// Evolves `u0` and `v0` with the same boundary values and reports order
/// preservation and L1 contraction.
pub fn evolve_pair(
    model: &dyn FluxModel,
    u0: &CylinderField,
    v0: &CylinderField,
    opts: &EvolveOptions,
) -> Result<PairReport> {
    u0.check_same_grid(v0)?;
    let g = *u0.grid();
    let cfl = cfl_number(model, &[u0, v0], opts.dt);
    if cfl > CFL_SAFETY * (1.0 + 1e-12) {
        return Err(Error::Cfl {
            dt: opts.dt,
            suggested: opts.dt * CFL_SAFETY / cfl,
        });
    }
    let n2 = g.n2();
    let last = g.n1() - 1;
    let col = |f: &CylinderField, i: usize| (0..n2).map(|j| f.get(i, j)).collect::<Vec<_>>();
    if col(u0, 0) != col(v0, 0) || col(u0, last) != col(v0, last) {
        return Err(Error::Validation("pair must share boundary values".into()));
    }
    let mut stepper = Stepper::new(model, g, col(u0, 0), col(u0, last), opts.dt, opts.linear)?;
    let d = u0.zip_with(v0, |a, b| a - b)?;
    let sign = if d.max_value() <= 0.0 {
        -1.0
    } else if d.min_value() >= 0.0 {
        1.0
    } else {
        0.0
    };
    let (mut u, mut v) = (u0.clone(), v0.clone());
    let d0 = l1_distance(&u, &v)?;
    let mut prev = d0;
    let mut max_increase = f64::NEG_INFINITY;
    let mut order_violation = 0.0f64;
    let steps = (opts.t_end / opts.dt).round() as usize;
    for _ in 0..steps {
        stepper.step(u.values_mut())?;
        stepper.step(v.values_mut())?;
        let dist = l1_distance(&u, &v)?;
        max_increase = max_increase.max(dist - prev);
        prev = dist;
        if sign != 0.0 {
            for (a, b) in u.values().iter().zip(v.values()) {
                order_violation = order_violation.max(-sign * (a - b));
            }
        }
    }
    Ok(PairReport {
        d0,
        d_final: prev,
        max_increase: if max_increase.is_finite() {
            max_increase
        } else {
            0.0
        },
        order_violation,
        ordered: sign != 0.0,
        steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// `a cos^2(pi (x1 - c) / (2 w))` on `|x1 - c| < w`.
    Bump,
    /// `a sin(pi (x1 - c) / w)` on `|x1 - c| < w`, zero mass.
    Dipole,
    /// `(1 - a) U(x) + a U(x - w)`, a partial translate.
    TranslateBlend,
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bump" => Ok(Self::Bump),
            "dipole" => Ok(Self::Dipole),
            "translate-blend" | "translate_blend" => Ok(Self::TranslateBlend),
            _ => Err(Error::Parse(format!("unknown perturbation kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    /// For bumps: amplitude chosen to give this mass instead.
    pub target_mass: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationInfo {
    pub amplitude: f64,
    pub clipped: bool,
    pub mass: f64,
}

/// `u0 = U + a phi`, with `a` reduced until `u0` stays between the end
/// states.
pub fn perturb(
    sp: &ShockProfile,
    pert: &Perturbation,
) -> Result<(CylinderField, PerturbationInfo)> {
    let g = *sp.grid();
    let ubar = &sp.field;
    let (vm, vp) = sp.end_states(&g)?;
    let (a, b) = (g.x_left() as f64, g.x_right() as f64);
    if !(pert.width > 0.0) || !pert.amplitude.is_finite() {
        return Err(Error::Validation(
            "perturbation needs width > 0 and a finite amplitude".into(),
        ));
    }
    let shape: CylinderField = match pert.kind {
        PerturbationKind::Bump | PerturbationKind::Dipole => {
            if pert.center - pert.width < a + 2.0 || pert.center + pert.width > b - 2.0 {
                return Err(Error::Validation(format!(
                    "support ({}, {}) must stay 2 units inside ({a}, {b})",
                    pert.center - pert.width,
                    pert.center + pert.width
                )));
            }
            let (c, w, kind) = (pert.center, pert.width, pert.kind);
            CylinderField::from_fn(g, move |x, _| {
                let z = (x - c) / w;
                if z.abs() >= 1.0 {
                    0.0
                } else if kind == PerturbationKind::Bump {
                    (std::f64::consts::FRAC_PI_2 * z).cos().powi(2)
                } else {
                    (std::f64::consts::PI * z).sin()
                }
            })
        }
        PerturbationKind::TranslateBlend => {
            let shifted = translate_real(sp, pert.width)?;
            shifted.zip_with(ubar, |s, u| s - u)?
        }
    };
    let mut amp = pert.amplitude;
    if let Some(q) = pert.target_mass {
        if pert.kind != PerturbationKind::Bump {
            return Err(Error::Validation(
                "target mass is only used for bumps".into(),
            ));
        }
        amp = q / shape.integral();
    }
    // largest admissible scaling of the requested amplitude
    let mut limit = 1.0f64;
    for k in 0..g.len() {
        let s = amp * shape.values()[k];
        let (lo, hi) = {
            let (x, y) = (vm.values()[k], vp.values()[k]);
            (x.min(y), x.max(y))
        };
        let u = ubar.values()[k];
        if s > 0.0 {
            limit = limit.min(((hi - u) / s).max(0.0));
        } else if s < 0.0 {
            limit = limit.min(((lo - u) / s).max(0.0));
        }
    }
    let clipped = limit < 1.0;
    if clipped {
        if pert.target_mass.is_some() {
            return Err(Error::Validation(format!(
                "target mass needs amplitude {amp}, which leaves the band between the end states"
            )));
        }
        warn!("perturbation amplitude {amp} clipped to {}", amp * limit);
        amp *= limit;
    }
    let u0 = ubar.zip_with(&shape, |u, s| u + amp * s)?;
    let mass = u0.integral() - ubar.integral();
    Ok((
        u0,
        PerturbationInfo {
            amplitude: amp,
            clipped,
            mass,
        },
    ))
}

/// `U(x - s)` for real `s`, by linear interpolation in `x1` of the profile
/// extended with its end states.
fn translate_real(sp: &ShockProfile, s: f64) -> Result<CylinderField> {
    let g = *sp.grid();
    let pad_cols = s.abs().ceil() as usize + 2;
    let pad = CylinderGrid::with_extent(
        g.x_left() - pad_cols as i64,
        g.length() + 2 * pad_cols,
        g.m1(),
        g.m2(),
    )?;
    let ext = sp.sample(&pad)?;
    let n2 = g.n2();
    let mut out = Vec::with_capacity(g.len());
    for i in 0..g.n1() {
        let t = (g.x1(i) - s - pad.x_left() as f64) / g.h1();
        let k = t.floor() as usize;
        let w = t - k as f64;
        for j in 0..n2 {
            out.push((1.0 - w) * ext.get(k, j) + w * ext.get((k + 1).min(pad.n1() - 1), j));
        }
    }
    CylinderField::new(g, out)
}

/// The discrete steady state of the evolution operator nearest to `sp` on
/// its own cylinder, by Newton from the profile. Returns the profile itself
/// when its residual is already below `tol`.
pub fn steady_reference(
    sp: &ShockProfile,
    model: &dyn FluxModel,
    opts: &SolverOptions,
) -> Result<(CylinderField, f64)> {
    let g = *sp.grid();
    let n2 = g.n2();
    let last = g.n1() - 1;
    let bc = BoundaryCondition::Dirichlet {
        left: (0..n2).map(|j| sp.field.get(0, j)).collect(),
        right: (0..n2).map(|j| sp.field.get(last, j)).collect(),
    };
    let problem = EllipticProblem::new(g, Coefficients::Flux(model), bc);
    let res = rms(&residual(&problem, sp.field.values())?);
    if res <= opts.tol {
        return Ok((sp.field.clone(), res));
    }
    let rep = solve_stationary(&problem, &sp.field, opts)?;
    Ok((rep.solution, rep.residual))
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub perturbation: PerturbationInfo,
    pub trajectory: Trajectory,
    pub mass_shock: Option<MassShockSolution>,
    /// Residual of the reference steady state.
    pub reference_residual: f64,
    /// `d(T) / d(0)` for the distance to the limit profile.
    pub decay_ratio: f64,
    /// Largest one-step increase of the distance to the limit profile.
    pub max_increase: f64,
}

/// Perturbs `sp`, evolves, and tracks the distance to `U` and, for nonzero
/// mass, to the shock `V` with the same excess mass.
pub fn stability_experiment(
    sp: &ShockProfile,
    model: &dyn FluxModel,
    pert: &Perturbation,
    opts: &EvolveOptions,
    mass_opts: &MassShockOptions,
) -> Result<StabilityReport> {
    let (ubar, reference_residual) = steady_reference(sp, model, &mass_opts.solver)?;
    let base = ShockProfile {
        field: ubar.clone(),
        ..sp.clone()
    };
    let (u0, info) = perturb(&base, pert)?;
    let g = *ubar.grid();
    let mut refs = vec![Reference::new("Ubar", ubar.clone())];
    let q = info.mass;
    let mass_shock = if q.abs() > 1e-9 {
        let ms = solve_mass_shock(&base, model, q, mass_opts)?;
        let w = ms.w.grid();
        let mut v = ubar.clone();
        let off = ((w.x_left() - g.x_left()) as usize) * g.m1();
        let n2 = g.n2();
        for i in 0..w.n1() {
            for j in 0..n2 {
                v.values_mut()[(off + i) * n2 + j] += ms.w.get(i, j);
            }
        }
        refs.push(Reference::new("Vbar", v));
        Some(ms)
    } else {
        None
    };
    let setup = EvolveSetup {
        model,
        u0,
        base: ubar.clone(),
        refs,
        end_states: Some(sp.end_states(&g)?),
    };
    let trajectory = evolve(&setup, opts)?;
    let target = trajectory.names.len() - 1;
    let series = trajectory.distance_series(target);
    let decay_ratio = match series.first() {
        Some(&d0) if d0 > 0.0 => series[series.len() - 1] / d0,
        _ => 0.0,
    };
    let max_increase = trajectory.max_increase[target];
    Ok(StabilityReport {
        perturbation: info,
        trajectory,
        mass_shock,
        reference_residual,
        decay_ratio,
        max_increase,
    })
}
