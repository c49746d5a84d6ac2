//! Conservative finite-volume solver for `-Lap u + div A(x, u) = s` on a
//! torus or a cylinder, and for the linear operator `-Lap w + div(b w)`.
//!
//! Unknowns live on nodes. Across the face between neighbours `r` and `s`
//! the discrete flux is
//!
//! ```text
//! F = -(u_s - u_r) / h + (a_r + a_s) / 2,
//! ```
//!
//! with `a = A(x, u)` or `a = b u`. Each node receives `+F/V_r` from faces
//! on its right and `-F/V_s` from faces on its left. Interior control
//! volumes have width `h1` in `x1`; the end columns of a cylinder have
//! width `h1 / 2` and no outer face, which imposes the conservative Robin
//! condition `-d1 w + b1 w = 0` exactly. Because everything is a face
//! difference, the slice-averaged `x1` face flux is constant across the
//! cylinder at a discrete solution.

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::grid::{Field, Grid};
use crate::linalg::{norm2, CsrMatrix, LinearSolver, Prepared, Triplets};

/// Flux-form discretization on a fixed grid.
#[derive(Clone, Debug)]
pub struct Discretization<G: Grid> {
    grid: G,
    inv_vol1: Vec<f64>,
    points: Vec<[f64; 2]>,
}

impl<G: Grid> Discretization<G> {
    pub fn new(grid: G) -> Self {
        let h1 = grid.h1();
        let n1 = grid.n1();
        let inv_vol1 = (0..n1)
            .map(|i| {
                if !grid.periodic_x1() && (i == 0 || i + 1 == n1) {
                    2.0 / h1
                } else {
                    1.0 / h1
                }
            })
            .collect();
        let mut points = Vec::with_capacity(grid.len());
        for i in 0..n1 {
            for j in 0..grid.n2() {
                points.push(grid.point(i, j));
            }
        }
        Self {
            grid,
            inv_vol1,
            points,
        }
    }

    pub fn grid(&self) -> &G {
        &self.grid
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    fn x1_faces(&self) -> usize {
        if self.grid.periodic_x1() {
            self.grid.n1()
        } else {
            self.grid.n1() - 1
        }
    }

    /// Nodal values of `A(x, u)` by component.
    pub fn flux_values(&self, model: &dyn FluxModel, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut a1 = Vec::with_capacity(u.len());
        let mut a2 = Vec::with_capacity(u.len());
        for (p, &v) in self.points.iter().zip(u) {
            let a = model.flux(*p, v);
            a1.push(a[0]);
            a2.push(a[1]);
        }
        (a1, a2)
    }

    /// Nodal values of `dA/dv(x, u)` by component.
    pub fn flux_derivatives(&self, model: &dyn FluxModel, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut d1 = Vec::with_capacity(u.len());
        let mut d2 = Vec::with_capacity(u.len());
        for (p, &v) in self.points.iter().zip(u) {
            let d = model.dv(*p, v);
            d1.push(d[0]);
            d2.push(d[1]);
        }
        (d1, d2)
    }

    /// `out = -Lap_h u + div_h a`, the flux-form operator without source.
    pub fn apply(&self, u: &[f64], a1: &[f64], a2: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.add_faces(u, 1.0, a1, a2, out);
    }

    /// `out = div_h a` alone (face-averaged nodal vector field).
    pub fn divergence(&self, a1: &[f64], a2: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.add_faces(&[], 0.0, a1, a2, out);
    }

    fn add_faces(&self, u: &[f64], diff: f64, a1: &[f64], a2: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let (n1, n2) = (g.n1(), g.n2());
        let (h1, h2) = (g.h1(), g.h2());
        for i in 0..self.x1_faces() {
            let ip = (i + 1) % n1;
            for j in 0..n2 {
                let r = i * n2 + j;
                let s = ip * n2 + j;
                let mut f = 0.5 * (a1[r] + a1[s]);
                if diff != 0.0 {
                    f -= (u[s] - u[r]) / h1;
                }
                out[r] += f * self.inv_vol1[i];
                out[s] -= f * self.inv_vol1[ip];
            }
        }
        if g.dim() == 2 {
            for i in 0..n1 {
                for j in 0..n2 {
                    let r = i * n2 + j;
                    let s = i * n2 + (j + 1) % n2;
                    let mut f = 0.5 * (a2[r] + a2[s]);
                    if diff != 0.0 {
                        f -= (u[s] - u[r]) / h2;
                    }
                    out[r] += f / h2;
                    out[s] -= f / h2;
                }
            }
        }
    }

    /// Jacobian of [`Discretization::apply`] when `a = a(u)` has nodal
    /// derivatives `(da1, da2)`; `diff` scales the diffusion part.
    pub fn jacobian(&self, diff: f64, da1: &[f64], da2: &[f64], t: &mut Triplets) {
        let g = &self.grid;
        let (n1, n2) = (g.n1(), g.n2());
        let (h1, h2) = (g.h1(), g.h2());
        for i in 0..self.x1_faces() {
            let ip = (i + 1) % n1;
            let (vr, vs) = (self.inv_vol1[i], self.inv_vol1[ip]);
            for j in 0..n2 {
                let r = i * n2 + j;
                let s = ip * n2 + j;
                let fr = diff / h1 + 0.5 * da1[r];
                let fs = -diff / h1 + 0.5 * da1[s];
                t.add(r, r, fr * vr);
                t.add(r, s, fs * vr);
                t.add(s, r, -fr * vs);
                t.add(s, s, -fs * vs);
            }
        }
        if g.dim() == 2 {
            for i in 0..n1 {
                for j in 0..n2 {
                    let r = i * n2 + j;
                    let s = i * n2 + (j + 1) % n2;
                    let fr = (diff / h2 + 0.5 * da2[r]) / h2;
                    let fs = (-diff / h2 + 0.5 * da2[s]) / h2;
                    t.add(r, r, fr);
                    t.add(r, s, fs);
                    t.add(s, r, -fr);
                    t.add(s, s, -fs);
                }
            }
        }
    }

    /// Slice average of the `x1` face flux between columns `i` and `i + 1`.
    pub fn x1_face_flux(&self, u: &[f64], a1: &[f64], i: usize) -> f64 {
        let g = &self.grid;
        let n2 = g.n2();
        let ip = (i + 1) % g.n1();
        (0..n2)
            .map(|j| {
                let (r, s) = (i * n2 + j, ip * n2 + j);
                -(u[s] - u[r]) / g.h1() + 0.5 * (a1[r] + a1[s])
            })
            .sum::<f64>()
            / n2 as f64
    }

    /// Largest grid Peclet number `h |dA/dv|` over the nodes.
    pub fn peclet(&self, model: &dyn FluxModel, u: &[f64]) -> f64 {
        let (h1, h2) = (self.grid.h1(), self.grid.h2());
        let two_d = self.grid.dim() == 2;
        self.points
            .iter()
            .zip(u)
            .map(|(p, &v)| {
                let d = model.dv(*p, v);
                let m = h1 * d[0].abs();
                if two_d {
                    m.max(h2 * d[1].abs())
                } else {
                    m
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Coefficients of the operator.
#[derive(Clone, Copy)]
pub enum Coefficients<'a> {
    /// `-Lap u + div A(x, u)`.
    Flux(&'a dyn FluxModel),
    /// `-Lap w + div(b w)` with nodal `b`; `b2` is ignored in one dimension.
    Linear { b1: &'a [f64], b2: &'a [f64] },
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryCondition {
    /// Torus grids only.
    Periodic,
    /// Values on the end slices `x1 = a` and `x1 = b`.
    Dirichlet { left: Vec<f64>, right: Vec<f64> },
    /// Zero total flux through both ends.
    RobinConservative,
}

/// Replaces the equation at `node` by `u[node] = value`. Used to fix the
/// translation of nearly translation-invariant Dirichlet problems.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pin {
    pub node: usize,
    pub value: f64,
}

#[derive(Clone)]
pub struct EllipticProblem<'a, G: Grid> {
    pub grid: G,
    pub coefficients: Coefficients<'a>,
    pub source: Option<&'a [f64]>,
    pub bc: BoundaryCondition,
    /// Prescribed cell average (periodic only).
    pub mean: Option<f64>,
    /// Prescribed total integral (linear Robin only).
    pub mass: Option<f64>,
    /// Dirichlet only.
    pub pin: Option<Pin>,
}

impl<'a, G: Grid> EllipticProblem<'a, G> {
    pub fn new(grid: G, coefficients: Coefficients<'a>, bc: BoundaryCondition) -> Self {
        Self {
            grid,
            coefficients,
            source: None,
            bc,
            mean: None,
            mass: None,
            pin: None,
        }
    }

    pub fn with_source(mut self, s: &'a [f64]) -> Self {
        self.source = Some(s);
        self
    }

    pub fn with_mean(mut self, p: f64) -> Self {
        self.mean = Some(p);
        self
    }

    pub fn with_mass(mut self, m: f64) -> Self {
        self.mass = Some(m);
        self
    }

    pub fn with_pin(mut self, pin: Pin) -> Self {
        self.pin = Some(pin);
        self
    }

    fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let n = g.len();
        match &self.bc {
            BoundaryCondition::Periodic if !g.periodic_x1() => {
                return Err(Error::Validation(
                    "periodic condition needs a torus grid".into(),
                ))
            }
            BoundaryCondition::Dirichlet { left, right } => {
                if g.periodic_x1() {
                    return Err(Error::Validation("Dirichlet data on a torus".into()));
                }
                if left.len() != g.n2() || right.len() != g.n2() {
                    return Err(Error::GridMismatch("Dirichlet slice length".into()));
                }
            }
            BoundaryCondition::RobinConservative => {
                if g.periodic_x1() {
                    return Err(Error::Validation("Robin condition on a torus".into()));
                }
                if matches!(self.coefficients, Coefficients::Flux(_)) {
                    return Err(Error::Validation(
                        "the conservative Robin condition is available in linear mode only".into(),
                    ));
                }
                if self.mass.is_none() {
                    return Err(Error::RankDeficient(
                        "the Robin problem has a one-dimensional solution space; \
                         add a mass constraint"
                            .into(),
                    ));
                }
            }
            _ => {}
        }
        if self.mean.is_some() && self.bc != BoundaryCondition::Periodic {
            return Err(Error::Validation(
                "mean constraint needs periodic data".into(),
            ));
        }
        if self.mass.is_some() && self.bc != BoundaryCondition::RobinConservative {
            return Err(Error::Validation("mass constraint needs Robin data".into()));
        }
        if let Some(pin) = self.pin {
            if !matches!(self.bc, BoundaryCondition::Dirichlet { .. }) || pin.node >= n {
                return Err(Error::Validation(
                    "pin needs Dirichlet data and a valid node".into(),
                ));
            }
        }
        if let Coefficients::Linear { b1, b2 } = self.coefficients {
            if b1.len() != n || (g.dim() == 2 && b2.len() != n) {
                return Err(Error::GridMismatch("coefficient field length".into()));
            }
        }
        if matches!(self.source, Some(s) if s.len() != n) {
            return Err(Error::GridMismatch("source length".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Converged when `||R||_2 <= tol * sqrt(n)`.
    pub tol: f64,
    pub max_newton: usize,
    pub min_step: f64,
    pub linear: LinearSolver,
    /// Fall back to pseudo-transient continuation when Newton stalls.
    pub continuation: bool,
    pub max_continuation: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_newton: 50,
            min_step: 1e-4,
            linear: LinearSolver::Direct,
            continuation: true,
            max_continuation: 600,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport<G: Grid> {
    pub solution: Field<G>,
    /// Root-mean-square residual of the solved system.
    pub residual: f64,
    pub iterations: usize,
    /// Accepted Newton step lengths.
    pub damping: Vec<f64>,
    pub linear_iterations: usize,
    /// Lagrange multiplier of the mean constraint.
    pub multiplier: Option<f64>,
    /// Residual of the equation that the pin replaced.
    pub pin_residual: Option<f64>,
    pub used_continuation: bool,
}

/// Node-wise residual `-Lap u + div A(u) - s` of the physical equation,
/// with Dirichlet rows reporting `u - g` and no constraint rows.
pub fn residual<G: Grid>(problem: &EllipticProblem<'_, G>, u: &[f64]) -> Result<Vec<f64>> {
    problem.validate_shape(u)?;
    let sys = System::new(problem);
    Ok(sys.physical_residual(u))
}

impl<G: Grid> EllipticProblem<'_, G> {
    fn validate_shape(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                u.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }
}

/// Root mean square of a vector.
pub fn rms(r: &[f64]) -> f64 {
    if r.is_empty() {
        0.0
    } else {
        norm2(r) / (r.len() as f64).sqrt()
    }
}

struct System<'p, 'a, G: Grid> {
    p: &'p EllipticProblem<'a, G>,
    disc: Discretization<G>,
    n: usize,
    bordered: bool,
}

impl<'p, 'a, G: Grid> System<'p, 'a, G> {
    fn new(p: &'p EllipticProblem<'a, G>) -> Self {
        Self {
            p,
            disc: Discretization::new(p.grid),
            n: p.grid.len(),
            bordered: p.mean.is_some(),
        }
    }

    fn size(&self) -> usize {
        self.n + usize::from(self.bordered)
    }

    fn dirichlet_value(&self, r: usize) -> Option<f64> {
        if let BoundaryCondition::Dirichlet { left, right } = &self.p.bc {
            let n2 = self.p.grid.n2();
            let i = r / n2;
            if i == 0 {
                return Some(left[r % n2]);
            }
            if i + 1 == self.p.grid.n1() {
                return Some(right[r % n2]);
            }
        }
        None
    }

    fn coefficient_values(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.p.coefficients {
            Coefficients::Flux(m) => self.disc.flux_values(m, u),
            Coefficients::Linear { b1, b2 } => {
                let a1 = b1.iter().zip(u).map(|(b, v)| b * v).collect();
                let a2 = if self.p.grid.dim() == 2 {
                    b2.iter().zip(u).map(|(b, v)| b * v).collect()
                } else {
                    vec![0.0; u.len()]
                };
                (a1, a2)
            }
        }
    }

    fn coefficient_derivatives(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.p.coefficients {
            Coefficients::Flux(m) => self.disc.flux_derivatives(m, u),
            Coefficients::Linear { b1, b2 } => {
                let d2 = if self.p.grid.dim() == 2 {
                    b2.to_vec()
                } else {
                    vec![0.0; u.len()]
                };
                (b1.to_vec(), d2)
            }
        }
    }

    fn physical_residual(&self, u: &[f64]) -> Vec<f64> {
        let (a1, a2) = self.coefficient_values(u);
        let mut r = vec![0.0; self.n];
        self.disc.apply(u, &a1, &a2, &mut r);
        if let Some(s) = self.p.source {
            for (ri, si) in r.iter_mut().zip(s) {
                *ri -= si;
            }
        }
        for (k, rk) in r.iter_mut().enumerate() {
            if let Some(g) = self.dirichlet_value(k) {
                *rk = u[k] - g;
            }
        }
        r
    }

    /// Residual of the solved system: physical rows, pin, mean border.
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let u = &x[..self.n];
        let mut r = self.physical_residual(u);
        if let Some(pin) = self.p.pin {
            r[pin.node] = u[pin.node] - pin.value;
        }
        if let Some(p) = self.p.mean {
            let lambda = x[self.n];
            for rk in r.iter_mut() {
                *rk += lambda;
            }
            r.push(u.iter().sum::<f64>() / self.n as f64 - p);
        }
        r
    }

    fn jacobian(&self, x: &[f64], shift: f64) -> CsrMatrix {
        let u = &x[..self.n];
        let (d1, d2) = self.coefficient_derivatives(u);
        let size = self.size();
        let mut t = Triplets::with_capacity(size, 9 * size);
        self.disc.jacobian(1.0, &d1, &d2, &mut t);
        let mut fixed = vec![false; self.n];
        for (k, f) in fixed.iter_mut().enumerate() {
            *f = self.dirichlet_value(k).is_some();
        }
        if let Some(pin) = self.p.pin {
            fixed[pin.node] = true;
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let t_csr = t.to_csr();
        for r in 0..self.n {
            if fixed[r] {
                entries.push((r, r, 1.0));
                continue;
            }
            for (c, v) in t_csr.row(r) {
                entries.push((r, c, v));
            }
            if shift != 0.0 {
                entries.push((r, r, shift));
            }
            if self.bordered {
                entries.push((r, self.n, 1.0));
            }
        }
        if self.bordered {
            let w = 1.0 / self.n as f64;
            for c in 0..self.n {
                entries.push((self.n, c, w));
            }
            entries.push((self.n, self.n, 0.0));
        }
        CsrMatrix::from_triplets(size, &entries)
    }

    fn project_boundary(&self, x: &mut [f64]) {
        for k in 0..self.n {
            if let Some(g) = self.dirichlet_value(k) {
                x[k] = g;
            }
        }
        if let Some(pin) = self.p.pin {
            x[pin.node] = pin.value;
        }
    }
}

struct Outcome {
    x: Vec<f64>,
    norm: f64,
    iterations: usize,
    damping: Vec<f64>,
    linear_iterations: usize,
    converged: bool,
}

fn newton<G: Grid>(sys: &System<'_, '_, G>, x0: Vec<f64>, opts: &SolverOptions) -> Result<Outcome> {
    let target = opts.tol * (sys.size() as f64).sqrt();
    let mut x = x0;
    let mut r = sys.residual(&x);
    let mut norm = norm2(&r);
    let mut out = Outcome {
        x: x.clone(),
        norm,
        iterations: 0,
        damping: Vec::new(),
        linear_iterations: 0,
        converged: norm <= target,
    };
    if out.converged {
        return Ok(out);
    }
    for it in 1..=opts.max_newton {
        let jac = sys.jacobian(&x, 0.0);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let solver = match Prepared::new(jac, opts.linear) {
            Ok(s) => s,
            Err(e) => {
                debug!("newton: factorization failed at iteration {it}: {e}");
                break;
            }
        };
        let (dx, lin) = match solver.solve(&neg) {
            Ok(v) => v,
            Err(e) => {
                debug!("newton: linear solve failed at iteration {it}: {e}");
                break;
            }
        };
        out.linear_iterations += lin;
        let mut t = 1.0;
        let mut accepted = false;
        let mut trial = x.clone();
        while t >= opts.min_step {
            for k in 0..x.len() {
                trial[k] = x[k] + t * dx[k];
            }
            let rt = sys.residual(&trial);
            let nt = norm2(&rt);
            if nt.is_finite() && nt <= (1.0 - 1e-4 * t) * norm {
                x.copy_from_slice(&trial);
                r = rt;
                norm = nt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        out.iterations = it;
        if !accepted {
            debug!("newton: line search failed at iteration {it}, |R| = {norm:e}");
            break;
        }
        out.damping.push(t);
        if norm < out.norm {
            out.norm = norm;
            out.x.copy_from_slice(&x);
        }
        if norm <= target {
            out.converged = true;
            return Ok(out);
        }
    }
    Ok(out)
}

/// Pseudo-transient continuation with switched evolution relaxation.
fn continuation<G: Grid>(
    sys: &System<'_, '_, G>,
    x0: Vec<f64>,
    opts: &SolverOptions,
) -> Result<Outcome> {
    let target = opts.tol * (sys.size() as f64).sqrt();
    let mut x = x0;
    let mut r = sys.residual(&x);
    let mut norm = norm2(&r);
    let norm0 = norm;
    let h = sys.p.grid.h1();
    let dtau0 = h;
    let mut dtau = dtau0;
    let mut out = Outcome {
        x: x.clone(),
        norm,
        iterations: 0,
        damping: Vec::new(),
        linear_iterations: 0,
        converged: norm <= target,
    };
    for it in 1..=opts.max_continuation {
        if norm <= target {
            out.converged = true;
            break;
        }
        let jac = sys.jacobian(&x, 1.0 / dtau);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let (dx, lin) = Prepared::new(jac, opts.linear)?.solve(&neg)?;
        out.linear_iterations += lin;
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let rt = sys.residual(&trial);
        let nt = norm2(&rt);
        out.iterations = it;
        if !nt.is_finite() || nt > 10.0 * norm.max(norm0) {
            dtau *= 0.25;
            if dtau < 1e-6 * dtau0 {
                break;
            }
            continue;
        }
        x = trial;
        dtau = (dtau * norm / nt).clamp(1e-6 * dtau0, 1e14);
        r = rt;
        norm = nt;
        if norm < out.norm {
            out.norm = norm;
            out.x.copy_from_slice(&x);
        }
    }
    if norm <= target {
        out.converged = true;
        out.norm = norm;
        out.x = x;
    }
    Ok(out)
}

/// Solves the stationary problem from `initial`.
///
/// Nonlinear problems use damped Newton with Armijo backtracking and fall
/// back to pseudo-transient continuation from the same start. The linear
/// Robin problem is solved directly with its mass constraint.
pub fn solve_stationary<G: Grid>(
    problem: &EllipticProblem<'_, G>,
    initial: &Field<G>,
    opts: &SolverOptions,
) -> Result<SolveReport<G>> {
    problem.validate()?;
    if initial.grid() != &problem.grid {
        return Err(Error::GridMismatch("initial guess grid".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Validation("tolerance must be positive".into()));
    }
    if problem.bc == BoundaryCondition::RobinConservative {
        return solve_robin(problem, opts);
    }
    let sys = System::new(problem);
    let mut x0 = initial.values().to_vec();
    if sys.bordered {
        x0.push(0.0);
    }
    sys.project_boundary(&mut x0);

    let mut out = newton(&sys, x0.clone(), opts)?;
    let mut used_continuation = false;
    if !out.converged && opts.continuation {
        debug!(
            "newton stalled at |R| = {:e}; switching to pseudo-transient continuation",
            out.norm
        );
        used_continuation = true;
        let ptc = continuation(&sys, x0, opts)?;
        let ptc = if ptc.converged {
            ptc
        } else {
            // polish the best continuation iterate with Newton
            let polished = newton(&sys, ptc.x.clone(), opts)?;
            if polished.norm < ptc.norm {
                polished
            } else {
                ptc
            }
        };
        if ptc.converged || ptc.norm < out.norm {
            out = ptc;
        }
    }
    let size = sys.size();
    if !out.converged {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
            residual: out.norm / (size as f64).sqrt(),
            best: out.x[..sys.n].to_vec(),
        });
    }
    let multiplier = sys.bordered.then(|| out.x[sys.n]);
    let u = out.x[..sys.n].to_vec();
    let pin_residual = problem.pin.map(|pin| sys.physical_residual(&u)[pin.node]);
    if let Coefficients::Flux(m) = problem.coefficients {
        let pe = sys.disc.peclet(m, &u);
        if pe > 2.0 {
            warn!("grid Peclet number {pe:.2} exceeds 2; central differences may oscillate");
        }
    }
    Ok(SolveReport {
        solution: Field::new(problem.grid, u)?,
        residual: out.norm / (size as f64).sqrt(),
        iterations: out.iterations,
        damping: out.damping,
        linear_iterations: out.linear_iterations,
        multiplier,
        pin_residual,
        used_continuation,
    })
}

/// Factored linear Robin operator `-Lap w + div(b w)` with the mass row.
///
/// The row at a central node is replaced by the mass equation; the
/// resulting banded-plus-rank-one system is solved with the
/// Sherman-Morrison formula and the dropped equation is checked afterwards.
/// One factorization serves any number of sources.
pub struct RobinOperator<G: Grid> {
    grid: G,
    full: CsrMatrix,
    solver: Prepared,
    r0: usize,
    weights: Vec<f64>,
    z: Vec<f64>,
    denom: f64,
    tol: f64,
    setup_iterations: usize,
}

impl<G: Grid> RobinOperator<G> {
    /// `problem` must be a linear Robin problem; its source and mass are
    /// ignored.
    pub fn new(problem: &EllipticProblem<'_, G>, opts: &SolverOptions) -> Result<Self> {
        if problem.bc != BoundaryCondition::RobinConservative
            || !matches!(problem.coefficients, Coefficients::Linear { .. })
        {
            return Err(Error::Validation(
                "Robin operator needs linear coefficients and the Robin condition".into(),
            ));
        }
        let sys = System::new(problem);
        let g = problem.grid;
        let n = sys.n;
        let r0 = g.index(g.n1() / 2, 0);
        let weights: Vec<f64> = (0..g.n1())
            .flat_map(|i| (0..g.n2()).map(move |j| g.weight(i, j)))
            .collect();
        let zero = vec![0.0; n];
        let full = sys.jacobian(&zero, 0.0);
        let mut entries = Vec::with_capacity(full.nnz());
        for r in 0..n {
            if r == r0 {
                entries.push((r, r, 1.0));
            } else {
                for (c, v) in full.row(r) {
                    entries.push((r, c, v));
                }
            }
        }
        let m1 = CsrMatrix::from_triplets(n, &entries);
        let solver = Prepared::new(m1, opts.linear)?;
        let mut e = vec![0.0; n];
        e[r0] = 1.0;
        let (z, it) = solver.solve(&e)?;
        let wz: f64 = weights.iter().zip(&z).map(|(a, b)| a * b).sum();
        let denom = 1.0 + wz - z[r0];
        if denom.abs() < 1e-14 * (1.0 + wz.abs()) {
            return Err(Error::RankDeficient(
                "mass row is dependent on the operator rows".into(),
            ));
        }
        Ok(Self {
            grid: g,
            full,
            solver,
            r0,
            weights,
            z,
            denom,
            tol: opts.tol,
            setup_iterations: it,
        })
    }

    pub fn grid(&self) -> &G {
        &self.grid
    }

    /// Quadrature weights defining the mass.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Solves `L w = source` with `int w = mass`. Returns the field, the rms
    /// residual of all operator rows and the linear iteration count.
    pub fn solve(&self, source: Option<&[f64]>, mass: f64) -> Result<(Field<G>, f64, usize)> {
        let n = self.weights.len();
        let mut rhs: Vec<f64> = match source {
            Some(s) if s.len() != n => return Err(Error::GridMismatch("source length".into())),
            Some(s) => s.to_vec(),
            None => vec![0.0; n],
        };
        rhs[self.r0] = mass;
        let (y, it) = self.solver.solve(&rhs)?;
        let wy: f64 = self.weights.iter().zip(&y).map(|(a, b)| a * b).sum();
        let coef = (wy - y[self.r0]) / self.denom;
        let u: Vec<f64> = y.iter().zip(&self.z).map(|(a, b)| a - coef * b).collect();

        let mut r = vec![0.0; n];
        self.full.matvec(&u, &mut r);
        if let Some(s) = source {
            r.iter_mut().zip(s).for_each(|(ri, si)| *ri -= si);
        }
        let res = rms(&r);
        let achieved: f64 = self.weights.iter().zip(&u).map(|(a, b)| a * b).sum();
        let scale = 1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let src_scale = source.map_or(0.0, |s| s.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        if res > self.tol * scale.max(src_scale) * 1e3
            || (achieved - mass).abs() > 1e-9 * (1.0 + mass.abs())
        {
            return Err(Error::NonConvergence {
                iterations: 1,
                residual: res,
                best: u,
            });
        }
        Ok((Field::new(self.grid, u)?, res, it))
    }
}

fn solve_robin<G: Grid>(
    problem: &EllipticProblem<'_, G>,
    opts: &SolverOptions,
) -> Result<SolveReport<G>> {
    let op = RobinOperator::new(problem, opts)?;
    let mass = problem.mass.expect("validated");
    let (solution, res, it) = op.solve(problem.source, mass)?;
    let mut r = vec![0.0; op.weights.len()];
    op.full.matvec(solution.values(), &mut r);
    let r0 = op.r0;
    let pin = r[r0] - problem.source.map_or(0.0, |s| s[r0]);
    Ok(SolveReport {
        solution,
        residual: res,
        iterations: 1,
        damping: vec![1.0],
        linear_iterations: op.setup_iterations + it,
        multiplier: None,
        pin_residual: Some(pin),
        used_continuation: false,
    })
}

/// Slice-averaged `x1` face fluxes `-d1 <u> + <A1(x, u)>` between
/// consecutive columns. Constant at a discrete Dirichlet solution.
pub fn face_flux_profile<G: Grid>(model: &dyn FluxModel, u: &Field<G>) -> Vec<f64> {
    let disc = Discretization::new(*u.grid());
    let (a1, _) = disc.flux_values(model, u.values());
    let faces = disc.x1_faces();
    (0..faces)
        .map(|i| disc.x1_face_flux(u.values(), &a1, i))
        .collect()
}
