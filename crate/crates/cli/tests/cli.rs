use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BURGERS: &str = r#"
# f(v) = v^2 with constant phi
{
  flux: {phi: [[0, 1, 0]], f: [0, 0, 1]},
  grid: {R: 15, m1: 20, R_sequence: [6, 10, 15]},
  problem: {p_minus: 1, p_plus: -1},
  experiment: {
    perturbation: {kind: "bump", center: 2, width: 2, mass: 1},
    T: 2, dt: 0.0125,
    q: 1,
  },
}
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p
}

fn pershock(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pershock"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

/// Rows of a CSV artifact after the comment lines, header first.
fn csv_rows(path: &Path) -> (Vec<String>, Vec<String>) {
    let text = fs::read_to_string(path).unwrap();
    let (comments, rest): (Vec<_>, Vec<_>) = text
        .lines()
        .map(String::from)
        .partition(|l| l.starts_with('#'));
    (comments, rest)
}

fn hash_of(out: &Path) -> String {
    summary(out)["config_hash"].as_str().unwrap().to_string()
}

fn assert_stamped(out: &Path) {
    let hash = hash_of(out);
    for entry in walk(out) {
        if entry.extension().is_some_and(|e| e == "csv") {
            let (comments, _) = csv_rows(&entry);
            assert_eq!(
                comments.first().map(String::as_str),
                Some(format!("# config_hash={hash}").as_str()),
                "{}",
                entry.display()
            );
        }
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files.sort();
    files
}

#[test]
fn burgers_pipeline_through_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BURGERS);
    let out = tmp.path().join("out");

    let o = pershock(&["shock"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!((report["alpha"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    let (_, rows) = csv_rows(&out.join("profile.csv"));
    assert_eq!(rows[0], "x1,value");
    assert_eq!(rows.len() - 1, 30 * 20 + 1);
    let (_, gaps) = csv_rows(&out.join("g_minus.csv"));
    assert_eq!(gaps[0], "x1,gap");

    let o = pershock(&["verify"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(summary(&out)["scalars"]["pass"], true);

    let o = pershock(&["eigen", "--R-sequence", "6,10,14"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let (_, rows) = csv_rows(&out.join("eigen.csv"));
    assert_eq!(rows[0], "R,l1_gap,min_value,mass");
    let gaps: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(gaps.len(), 3);
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(out.join("p_k1_R14.csv").exists());

    let o = pershock(&["mass-shock", "--q", "1"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let ms: Value =
        serde_json::from_str(&fs::read_to_string(out.join("mass_shock.json")).unwrap()).unwrap();
    for key in ["q_target", "q_achieved", "k", "iterations", "ordering_sign"] {
        assert!(ms.get(key).is_some(), "{key}");
    }
    assert!((ms["q_achieved"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(out.join("vbar.csv").exists());

    let o = pershock(
        &["mass-shock", "--q", "-1", "--R-sequence", "6,9,12"],
        &cfg,
        &out,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s = summary(&out)["scalars"].clone();
    assert_eq!(s["k"], 1);
    assert_eq!(s["ordering_sign"], -1);
    assert!(
        s["cauchy"]
            .as_array()
            .unwrap()
            .last()
            .unwrap()
            .as_f64()
            .unwrap()
            <= 1e-4
    );

    let o = pershock(&["evolve", "--snap-every", "80"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let (_, rows) = csv_rows(&out.join("evolve.csv"));
    assert_eq!(rows[0], "t,mass,d_Ubar,d_Vbar");
    assert_eq!(rows.len() - 1, 161);
    let s = summary(&out)["scalars"].clone();
    assert!(s["d_Vbar_final"].as_f64().unwrap() < s["d_Vbar_initial"].as_f64().unwrap());
    assert_eq!(walk(&out.join("snapshots")).len(), 3);

    assert_stamped(&out);
}

#[test]
fn shock_csv_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BURGERS);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = pershock(&["shock"], &cfg, out);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for name in ["profile.csv", "g_minus.csv", "g_plus.csv", "summary.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn flag_overrides_change_the_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BURGERS);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(pershock(&["cell"], &cfg, &a).status.code(), Some(0));
    assert_eq!(
        pershock(&["cell", "--tol", "1e-9"], &cfg, &b).status.code(),
        Some(0)
    );
    assert_ne!(hash_of(&a), hash_of(&b));
    assert_stamped(&a);
}

#[test]
fn coincident_end_states_fail_distinctness() {
    let tmp = TempDir::new().unwrap();
    let text = BURGERS.replace("p_plus: -1", "p_plus: 1");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = pershock(&["admissibility"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(out.join("admissibility.json")).unwrap()).unwrap();
    assert_eq!(rep["rh_ok"], true);
    assert_eq!(rep["distinct"], false);
    assert_eq!(rep["pass"], false);
    assert_eq!(summary(&out)["status"], "fail");
}

#[test]
fn admissible_pair_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BURGERS);
    let out = tmp.path().join("out");
    let o = pershock(&["admissibility"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(out.join("admissibility.json")).unwrap()).unwrap();
    for key in [
        "alpha",
        "rh_gap",
        "oleinik_margin",
        "a_minus",
        "a_plus",
        "pass",
    ] {
        assert!(rep.get(key).is_some(), "{key}");
    }
    assert!((rep["a_minus"].as_f64().unwrap() - 2.0).abs() < 1e-8);
}

#[test]
fn missing_flux_block_is_a_parse_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "{grid: {m1: 8}, problem: {p_minus: 1, p_plus: -1}}",
    );
    let o = pershock(&["cell"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("flux"));
}

#[test]
fn malformed_inputs_exit_one() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "{flux: {f: [0, 0, 1]}, gird: {m1: 8}}");
    assert_eq!(pershock(&["cell"], &cfg, &out).status.code(), Some(1));
    let cfg = write_config(tmp.path(), BURGERS);
    // no profile to hand off yet
    assert_eq!(pershock(&["eigen"], &cfg, &out).status.code(), Some(1));
    let no_q = BURGERS.replace("q: 1,", "");
    let cfg = write_config(tmp.path(), &no_q);
    assert_eq!(pershock(&["shock"], &cfg, &out).status.code(), Some(0));
    assert_eq!(pershock(&["mass-shock"], &cfg, &out).status.code(), Some(1));
    assert_eq!(
        pershock(&["shock", "--R-sequence", "6,4"], &cfg, &out)
            .status
            .code(),
        Some(1)
    );
    // too short to settle
    let o = pershock(&["shock", "--R-sequence", "4,6"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("R = [4, 6]"));
    let o = Command::new(env!("CARGO_BIN_EXE_pershock"))
        .arg("bogus")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn heterogeneous_scan_matches_product_form() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
  flux: {phi: [[0, 1, 0], [1, 0.5, 0]], f: [0, 0, 1]},
  grid: {m1: 12, m2: 6},
  problem: {p_minus: 1, p_plus: -1, scan: {from: -1, to: 1, count: 5}},
}"#,
    );
    let out = tmp.path().join("out");
    let o = pershock(&["hflux-scan", "--threads", "2"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let (_, rows) = csv_rows(&out.join("hflux.csv"));
    assert_eq!(rows[0], "p,Abar1,Abar2");
    for row in &rows[1..] {
        let v: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        // <phi> = 1 and psi = 0
        assert!((v[1] - v[0] * v[0]).abs() <= 1e-8, "{row}");
        assert!(v[2].abs() <= 1e-8, "{row}");
    }
}

#[test]
fn conjugate_bracket_supplies_p_plus() {
    let tmp = TempDir::new().unwrap();
    let text = BURGERS.replace("p_plus: -1", "bracket: [-1.7, -0.4]");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = pershock(&["admissibility"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(out.join("admissibility.json")).unwrap()).unwrap();
    assert!((rep["p_plus"].as_f64().unwrap() + 1.0).abs() < 1e-8);
}
