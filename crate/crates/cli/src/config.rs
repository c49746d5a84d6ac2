//! Run configuration: a relaxed JSON dialect with bare keys, `#` comment
//! lines and trailing commas.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use anyhow::{bail, Context, Result};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pershock::elliptic::SolverOptions;
use pershock::evolve::{Perturbation, PerturbationKind};
use pershock::flux::{FluxModel, ForcedLinearFlux, Fourier, Polynomial, SeparableFlux};
use pershock::grid::TorusGrid;
use pershock::linalg::LinearSolver;
use pershock::shock::ShockOptions;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub flux: Option<FluxConfig>,
    pub grid: Option<GridConfig>,
    pub problem: Option<ProblemConfig>,
    pub experiment: Option<ExperimentConfig>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Recorded in the hash; the pipeline itself draws no random numbers.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FluxConfig {
    /// `separable` (default) or `forced-linear`.
    pub kind: Option<String>,
    pub phi: Option<Vec<(u32, f64, f64)>>,
    pub psi: Option<Vec<(u32, f64, f64)>>,
    pub f: Option<Vec<f64>>,
    pub amplitude: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "R")]
    pub r: Option<i64>,
    pub m1: usize,
    pub m2: Option<usize>,
    #[serde(rename = "R_sequence")]
    pub r_sequence: Option<Vec<i64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub p_minus: f64,
    pub p_plus: Option<f64>,
    /// Searched for the conjugate state when `p_plus` is absent.
    pub bracket: Option<(f64, f64)>,
    pub scan: Option<ScanConfig>,
    pub oleinik_samples: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub from: f64,
    pub to: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub perturbation: Option<PerturbationConfig>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub dt: Option<f64>,
    pub q: Option<f64>,
    /// Translate used by `eigen`.
    pub k: Option<i64>,
    /// Half-lengths used by `eigen`.
    #[serde(rename = "R_eigen")]
    pub r_eigen: Option<Vec<i64>>,
    /// Half-length of the mass-shock domain.
    #[serde(rename = "R")]
    pub r: Option<i64>,
    /// Increasing mass-shock half-lengths, checked for convergence on a
    /// window; overrides `R`.
    #[serde(rename = "R_sequence")]
    pub r_sequence: Option<Vec<i64>>,
    pub snap_every: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub kind: String,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub center: f64,
    pub width: f64,
    pub mass: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub newton: f64,
    pub rh: f64,
    pub window: f64,
    pub residual: f64,
    pub picard: f64,
    pub order: f64,
    pub alpha: f64,
    /// `direct` or `krylov`.
    pub linear: String,
}

impl Default for Tolerances {
    fn default() -> Self {
        let s = ShockOptions::default();
        Self {
            newton: s.solver.tol,
            rh: 1e-8,
            window: s.window_tol,
            residual: s.residual_tol,
            picard: 1e-10,
            order: s.eps,
            alpha: s.alpha_tol,
            linear: "direct".into(),
        }
    }
}

fn key_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([{,]\s*)([A-Za-z_][A-Za-z0-9_\-]*)\s*:").unwrap())
}

fn trailing_comma() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r",(\s*[}\]])").unwrap())
}

/// Rewrites the relaxed dialect into strict JSON.
pub fn to_strict_json(text: &str) -> String {
    let body: Vec<&str> = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .collect();
    let body = body.join("\n");
    let quoted = key_pattern().replace_all(&body, "$1\"$2\":");
    trailing_comma().replace_all(&quoted, "$1").into_owned()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let strict = to_strict_json(text);
        let cfg: RunConfig =
            serde_json::from_str(&strict).context("config is not valid relaxed JSON")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [
            ("newton", t.newton),
            ("rh", t.rh),
            ("window", t.window),
            ("residual", t.residual),
            ("picard", t.picard),
            ("order", t.order),
            ("alpha", t.alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("tolerance {name} must be positive, got {v}");
            }
        }
        if !matches!(t.linear.as_str(), "direct" | "krylov") {
            bail!(
                "tolerances.linear must be direct or krylov, got {:?}",
                t.linear
            );
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration, flag overrides included.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn flux_model(&self) -> Result<Box<dyn FluxModel>> {
        let Some(fc) = &self.flux else {
            bail!("config has no flux block");
        };
        match fc.kind.as_deref().unwrap_or("separable") {
            "forced-linear" => Ok(Box::new(ForcedLinearFlux {
                amplitude: fc.amplitude.unwrap_or(1.0),
            })),
            "separable" => {
                let Some(f) = &fc.f else {
                    bail!("flux block needs f = [c0, c1, ...]");
                };
                let phi = match &fc.phi {
                    Some(t) => Fourier { terms: t.clone() },
                    None => Fourier::constant(1.0),
                };
                let psi = Fourier {
                    terms: fc.psi.clone().unwrap_or_default(),
                };
                Ok(Box::new(SeparableFlux::new(
                    phi,
                    psi,
                    Polynomial::new(f.clone()),
                )?))
            }
            other => bail!("unknown flux kind {other:?}"),
        }
    }

    pub fn grid(&self) -> Result<&GridConfig> {
        self.grid.as_ref().context("config has no grid block")
    }

    pub fn torus(&self) -> Result<TorusGrid> {
        let g = self.grid()?;
        Ok(TorusGrid::new(g.m1, g.m2)?)
    }

    pub fn problem(&self) -> Result<&ProblemConfig> {
        self.problem.as_ref().context("config has no problem block")
    }

    pub fn experiment(&self) -> ExperimentConfig {
        self.experiment.clone().unwrap_or_default()
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tolerances.newton,
            linear: match self.tolerances.linear.as_str() {
                "krylov" => LinearSolver::krylov(),
                _ => LinearSolver::Direct,
            },
            ..SolverOptions::default()
        }
    }

    pub fn shock_options(&self) -> ShockOptions {
        let t = &self.tolerances;
        ShockOptions {
            solver: self.solver(),
            window_tol: t.window,
            residual_tol: t.residual,
            eps: t.order,
            alpha_tol: t.alpha,
            ..ShockOptions::default()
        }
    }
}

impl PerturbationConfig {
    pub fn to_perturbation(&self) -> Result<Perturbation> {
        let kind: PerturbationKind = self.kind.parse()?;
        if self.mass.is_some() && kind != PerturbationKind::Bump {
            bail!("a target mass is only supported for bump perturbations");
        }
        Ok(Perturbation {
            kind,
            amplitude: self.amplitude,
            center: self.center,
            width: self.width,
            target_mass: self.mass,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BURGERS: &str = r#"
# Burgers, homogeneous
{
  flux: {phi: [[0, 1, 0]], f: [0, 0, 1]},
  grid: {R: 15, m1: 20, R_sequence: [6, 10, 15],},
  problem: {p_minus: 1, p_plus: -1},
  tolerances: {newton: 1e-10},
}
"#;

    #[test]
    fn relaxed_dialect_parses() {
        let cfg = RunConfig::parse(BURGERS).unwrap();
        let g = cfg.grid().unwrap();
        assert_eq!(g.r_sequence.as_deref(), Some(&[6, 10, 15][..]));
        assert_eq!(g.m2, None);
        assert_eq!(cfg.problem().unwrap().p_plus, Some(-1.0));
        assert_eq!(cfg.tolerances.window, 1e-4);
        let model = cfg.flux_model().unwrap();
        assert_eq!(model.flux([0.3, 0.0], 2.0), [4.0, 0.0]);
    }

    #[test]
    fn quoted_keys_and_strings_untouched() {
        let s = to_strict_json(r#"{"a": 1, b: "x: y", c: [1, 2,]}"#);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["b"], "x: y");
        assert_eq!(v["c"][1], 2);
    }

    #[test]
    fn missing_flux_and_bad_tolerance() {
        let cfg = RunConfig::parse("{grid: {m1: 8}}").unwrap();
        assert!(cfg.flux_model().is_err());
        assert!(RunConfig::parse("{tolerances: {newton: -1}}").is_err());
        assert!(RunConfig::parse("{flux: {f: [0, 1]}, typo: 3}").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse(BURGERS).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.tolerances.newton = 1e-9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
