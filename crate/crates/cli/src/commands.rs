//! One function per subcommand. Each writes its artifacts and a summary and
//! reports whether the run's checks held.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use log::info;
use serde_json::{json, Value};

use pershock::cell::{admissibility, find_conjugate, scan_homogenized, solve_cell, CellSolution};
use pershock::eigen::{principal_sequence, translate_difference};
use pershock::evolve::{stability_experiment, EvolveOptions};
use pershock::flux::FluxModel;
use pershock::grid::{CylinderField, Grid, TorusGrid};
use pershock::massshock::{check_mass_shock, mass_shock_limit, solve_mass_shock, MassShockOptions};
use pershock::shock::{construct_shock, verify_shock, ShockProfile};

use crate::artifacts::Artifacts;
use crate::config::RunConfig;

/// Outcome of a run that did not hit a solver error.
#[derive(Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    /// A checked invariant failed.
    Fail(String),
}

impl Status {
    fn from_checks(ok: bool, what: &str) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail(what.to_string())
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail(_) => "fail",
        }
    }
}

pub struct Run {
    pub cfg: RunConfig,
    pub out: Artifacts,
    pub profile: Option<PathBuf>,
    pub r_sequence: Option<Vec<i64>>,
    pub q: Option<f64>,
    pub k: Option<i64>,
}

impl Run {
    fn finish(&self, status: Status, scalars: Value) -> Result<Status> {
        self.out.summary(status.label(), scalars)?;
        Ok(status)
    }

    fn cells(&self, model: &dyn FluxModel, tg: TorusGrid) -> Result<(CellSolution, CellSolution)> {
        let pr = self.cfg.problem()?;
        let o = self.cfg.solver();
        let p_plus = match (pr.p_plus, pr.bracket) {
            (Some(p), _) => p,
            (None, Some(b)) => find_conjugate(model, pr.p_minus, b, tg, &o)?.p_plus,
            (None, None) => bail!("problem block needs p_plus or a conjugate bracket"),
        };
        let minus = solve_cell(model, pr.p_minus, tg, &o)?;
        let plus = solve_cell(model, p_plus, tg, &o)?;
        Ok((minus, plus))
    }

    /// The shock profile from `--profile`, or `profile.csv` in the output
    /// directory left by an earlier `shock` run.
    fn load_profile(&self, model: &dyn FluxModel) -> Result<ShockProfile> {
        let path = self
            .profile
            .clone()
            .unwrap_or_else(|| self.out.dir().join("profile.csv"));
        let f = File::open(&path).with_context(|| {
            format!(
                "cannot open shock profile {}; run `shock` first or pass --profile",
                path.display()
            )
        })?;
        let field = CylinderField::read_csv(BufReader::new(f))
            .with_context(|| format!("reading {}", path.display()))?;
        let g = *field.grid();
        let tg = TorusGrid::new(g.m1(), g.m2())?;
        let (minus, plus) = self.cells(model, tg)?;
        Ok(ShockProfile::from_field(field, model, &minus, &plus)?)
    }
}

fn cell_scalars(c: &CellSolution) -> Value {
    json!({
        "p": c.p,
        "abar1": c.abar[0],
        "abar2": c.abar[1],
        "residual": c.residual,
        "iters": c.iterations,
    })
}

pub fn cell(run: &Run) -> Result<Status> {
    let model = run.cfg.flux_model()?;
    let tg = run.cfg.torus()?;
    let pr = run.cfg.problem()?;
    let o = run.cfg.solver();
    let mut scalars = serde_json::Map::new();
    let mut targets = vec![("minus", pr.p_minus)];
    if let Some(p) = pr.p_plus {
        targets.push(("plus", p));
    }
    for (name, p) in targets {
        let c = solve_cell(model.as_ref(), p, tg, &o)?;
        run.out
            .field(&format!("cell_{name}.csv"), &c.v, &[format!("p={p}")])?;
        scalars.insert(name.into(), cell_scalars(&c));
    }
    run.finish(Status::Pass, Value::Object(scalars))
}

pub fn hflux_scan(run: &Run) -> Result<Status> {
    let model = run.cfg.flux_model()?;
    let tg = run.cfg.torus()?;
    let pr = run.cfg.problem()?;
    let (from, to, count) = match &pr.scan {
        Some(s) => (s.from, s.to, s.count),
        None => (-2.0, 2.0, 21),
    };
    if count < 2 {
        bail!("scan needs at least two samples");
    }
    let ps: Vec<f64> = (0..count)
        .map(|i| from + (to - from) * i as f64 / (count - 1) as f64)
        .collect();
    let sols = scan_homogenized(model.as_ref(), &ps, tg, &run.cfg.solver())?;
    let two_d = tg.m2().is_some();
    let rows: Vec<Vec<f64>> = sols
        .iter()
        .map(|c| {
            if two_d {
                vec![c.p, c.abar[0], c.abar[1]]
            } else {
                vec![c.p, c.abar[0]]
            }
        })
        .collect();
    let header: &[&str] = if two_d {
        &["p", "Abar1", "Abar2"]
    } else {
        &["p", "Abar1"]
    };
    run.out.table("hflux.csv", header, &rows)?;
    let max_residual = sols.iter().map(|c| c.residual).fold(0.0, f64::max);
    run.finish(
        Status::Pass,
        json!({"samples": count, "from": from, "to": to, "max_residual": max_residual}),
    )
}

pub fn admissibility_cmd(run: &Run) -> Result<Status> {
    let model = run.cfg.flux_model()?;
    let tg = run.cfg.torus()?;
    let pr = run.cfg.problem()?;
    let o = run.cfg.solver();
    let samples = pr.oleinik_samples.unwrap_or(33);
    let p_plus = match (pr.p_plus, pr.bracket) {
        (Some(p), _) => p,
        (None, Some(b)) => find_conjugate(model.as_ref(), pr.p_minus, b, tg, &o)?.p_plus,
        (None, None) => bail!("problem block needs p_plus or a conjugate bracket"),
    };
    if p_plus == pr.p_minus {
        // Rankine-Hugoniot holds trivially, but there is no shock
        let c = solve_cell(model.as_ref(), p_plus, tg, &o)?;
        let report = json!({
            "p_minus": pr.p_minus,
            "p_plus": p_plus,
            "alpha": c.abar[0],
            "rh_gap": 0.0,
            "rh_ok": true,
            "distinct": false,
            "pass": false,
        });
        run.out.json("admissibility.json", &report)?;
        return run.finish(Status::Fail("end states coincide".into()), report);
    }
    let rep = admissibility(
        model.as_ref(),
        pr.p_minus,
        p_plus,
        samples,
        tg,
        &o,
        run.cfg.tolerances.rh,
    )?;
    let mut report = serde_json::to_value(&rep)?;
    report["distinct"] = json!(true);
    run.out.json("admissibility.json", &report)?;
    run.finish(
        Status::from_checks(rep.pass, "admissibility conditions"),
        report,
    )
}

fn write_gaps(run: &Run, sp: &ShockProfile) -> Result<()> {
    let (gm, gp) = sp.gaps()?;
    let g = *sp.grid();
    let rows =
        |gaps: &[f64]| -> Vec<Vec<f64>> { (0..g.n1()).map(|i| vec![g.x1(i), gaps[i]]).collect() };
    run.out.table("g_minus.csv", &["x1", "gap"], &rows(&gm))?;
    run.out.table("g_plus.csv", &["x1", "gap"], &rows(&gp))?;
    Ok(())
}

pub fn shock(run: &Run) -> Result<Status> {
    let model = run.cfg.flux_model()?;
    let tg = run.cfg.torus()?;
    let grid = run.cfg.grid()?;
    let rs = match (&run.r_sequence, &grid.r_sequence, grid.r) {
        (Some(s), _, _) => s.clone(),
        (None, Some(s), _) => s.clone(),
        (None, None, Some(r)) => vec![r / 2, r],
        (None, None, None) => bail!("grid block needs R_sequence or R"),
    };
    let opts = run.cfg.shock_options();
    let (minus, plus) = run.cells(model.as_ref(), tg)?;
    let sp = construct_shock(model.as_ref(), &minus, &plus, &rs, &opts)
        .with_context(|| format!("constructing the shock over R = {rs:?}"))?;
    let rep = verify_shock(&sp, model.as_ref(), &opts)?;
    info!("profile on R = {} with residual {:.3e}", sp.r, rep.residual);
    let (x_r, k_r, y_r) = sp.normalization.unwrap_or((f64::NAN, 0, f64::NAN));
    run.out.field(
        "profile.csv",
        &sp.field,
        &[
            format!("p_minus={}", sp.p_minus),
            format!("p_plus={}", sp.p_plus),
            format!("R={}", sp.r),
        ],
    )?;
    write_gaps(run, &sp)?;
    let mut report = serde_json::to_value(&rep)?;
    report["R"] = json!(sp.r);
    report["R_sequence"] = json!(sp.r_sequence);
    report["cauchy"] = json!(sp.cauchy);
    report["x_R"] = json!(x_r);
    report["k_R"] = json!(k_r);
    report["y_R"] = json!(y_r);
    run.out.json("report.json", &report)?;
    run.finish(Status::from_checks(rep.pass, "shock verification"), report)
}

pub fn verify(run: &Run) -> Result<Status> {
    let model = run.cfg.flux_model()?;
    let sp = run.load_profile(model.as_ref())?;
    let rep = verify_shock(&sp, model.as_ref(), &run.cfg.shock_options())?;
    let mut report = serde_json::to_value(&rep)?;
    report["R"] = json!(sp.r);
    run.out.json("verify.json", &report)?;
    write_gaps(run, &sp)?;
    run.finish(Status::from_checks(rep.pass, "shock verification"), report)
}

pub fn eigen(run: &Run) -> Result<Status> {
    let model = run.cfg.flux_model()?;
    let sp = run.load_profile(model.as_ref())?;
    let exp = run.cfg.experiment();
    let k = run.k.or(exp.k).unwrap_or(1);
    let td = translate_difference(&sp, model.as_ref(), k)?;
    let r_max = sp.r - k.abs();
    let rs = match (&run.r_sequence, &exp.r_eigen) {
        (Some(s), _) | (None, Some(s)) => s.clone(),
        (None, None) => vec![r_max / 2, (3 * r_max) / 4, r_max],
    };
    let seq = principal_sequence(&td, &rs, &run.cfg.solver())?;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for pe in &seq {
        run.out.field(
            &format!("p_k{k}_R{}.csv", pe.r),
            &pe.field,
            &[format!("k={k}"), format!("R={}", pe.r)],
        )?;
        let d = &pe.diagnostics;
        rows.push(vec![pe.r as f64, d.l1_gap, d.min_value, d.mass]);
        let mut v = serde_json::to_value(d)?;
        v["R"] = json!(pe.r);
        v["residual"] = json!(pe.residual);
        table.push(v);
    }
    run.out
        .table("eigen.csv", &["R", "l1_gap", "min_value", "mass"], &rows)?;
    let positive = seq.iter().all(|pe| pe.diagnostics.min_value > 0.0);
    run.finish(
        Status::from_checks(positive, "principal solution is not positive"),
        json!({"k": k, "translate_mass": td.mass, "runs": table}),
    )
}

pub fn mass_shock(run: &Run) -> Result<Status> {
    let model = run.cfg.flux_model()?;
    let sp = run.load_profile(model.as_ref())?;
    let exp = run.cfg.experiment();
    let Some(q) = run.q.or(exp.q) else {
        bail!("mass-shock needs --q or experiment.q");
    };
    let opts = MassShockOptions {
        solver: run.cfg.solver(),
        tol: run.cfg.tolerances.picard,
        r: exp.r,
        verify: run.cfg.shock_options(),
        ..MassShockOptions::default()
    };
    let sol = match run.r_sequence.clone().or(exp.r_sequence) {
        Some(rs) => mass_shock_limit(
            &sp,
            model.as_ref(),
            q,
            &rs,
            None,
            run.cfg.tolerances.window,
            &opts,
        )
        .with_context(|| format!("mass shock over R = {rs:?}"))?,
        None => solve_mass_shock(&sp, model.as_ref(), q, &opts)?,
    };
    let checks = check_mass_shock(&sp, &sol)?;
    // an unverified V is kept only as a diagnostic
    let (name, stale) = if sol.verified {
        ("vbar.csv", "vbar_unverified.csv")
    } else {
        ("vbar_unverified.csv", "vbar.csv")
    };
    run.out.remove(stale)?;
    run.out.field(
        name,
        &sol.v_bar,
        &[
            format!("q={q}"),
            format!("k={}", sol.k),
            format!("R={}", sol.r),
        ],
    )?;
    let summary = sol.summary();
    run.out.json("mass_shock.json", &summary)?;
    let mut scalars = serde_json::to_value(&summary)?;
    scalars["continuation_steps"] = json!(sol.continuation_steps);
    scalars["cauchy"] = json!(sol.cauchy);
    scalars["sign_violation"] = json!(checks.sign_violation);
    scalars["bound_violation"] = json!(checks.bound_violation);
    scalars["sandwich_violation"] = json!(checks.sandwich_violation);
    scalars["mass_error"] = json!(checks.mass_error);
    if let Some(v) = &sol.verification {
        scalars["verification"] = serde_json::to_value(v)?;
    }
    run.finish(
        Status::from_checks(sol.verified, "mass shock verification"),
        scalars,
    )
}

pub fn evolve(run: &Run, snap_every: Option<usize>) -> Result<Status> {
    let model = run.cfg.flux_model()?;
    let sp = run.load_profile(model.as_ref())?;
    let exp = run.cfg.experiment();
    let pert = exp
        .perturbation
        .as_ref()
        .context("evolve needs experiment.perturbation")?
        .to_perturbation()?;
    let defaults = EvolveOptions::default();
    let opts = EvolveOptions {
        dt: exp.dt.unwrap_or(defaults.dt),
        t_end: exp.t.unwrap_or(defaults.t_end),
        snap_every: snap_every.or(exp.snap_every),
        linear: run.cfg.solver().linear,
        ..defaults
    };
    let mass_opts = MassShockOptions {
        solver: run.cfg.solver(),
        tol: run.cfg.tolerances.picard,
        r: exp.r,
        verify: run.cfg.shock_options(),
        ..MassShockOptions::default()
    };
    let rep = stability_experiment(&sp, model.as_ref(), &pert, &opts, &mass_opts)?;
    let traj = &rep.trajectory;
    run.out
        .raw("evolve.csv", |w, c| Ok(traj.write_csv(w, c)?))?;
    for (n, (t, f)) in traj.snapshots.iter().enumerate() {
        run.out.field(
            &format!("snapshots/snap_{n:05}.csv"),
            f,
            &[format!("t={t}")],
        )?;
    }
    let sandwich = traj.sandwich_violation.unwrap_or(0.0);
    let order_ok = sandwich <= run.cfg.tolerances.order;
    let mut scalars = json!({
        "perturbation": pert,
        "amplitude": rep.perturbation.amplitude,
        "clipped": rep.perturbation.clipped,
        "q": rep.perturbation.mass,
        "reference_residual": rep.reference_residual,
        "decay_ratio": rep.decay_ratio,
        "max_increase": rep.max_increase,
        "mass_drift_rate": traj.mass_drift_rate,
        "max_contamination": traj.max_contamination,
        "sandwich_violation": sandwich,
        "cfl": traj.cfl,
        "dt": traj.dt,
        "steps": traj.steps,
    });
    for (r, name) in traj.names.iter().enumerate() {
        let s = traj.distance_series(r);
        scalars[format!("d_{name}_initial")] = json!(s.first());
        scalars[format!("d_{name}_final")] = json!(s.last());
    }
    if let Some(ms) = &rep.mass_shock {
        scalars["mass_shock"] = serde_json::to_value(ms.summary())?;
    }
    run.finish(
        Status::from_checks(order_ok, "solution left the band between the end states"),
        scalars,
    )
}
