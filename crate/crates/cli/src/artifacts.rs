//! Output directory with hash-stamped artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use pershock::grid::{fmt17, Field, Grid};

pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    command: String,
}

impl Artifacts {
    pub fn create(dir: &Path, hash: &str, command: &str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            command: command.to_string(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn open(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    /// Deletes an artifact left by an earlier run, if present.
    pub fn remove(&self, name: &str) -> Result<()> {
        match fs::remove_file(self.dir.join(name)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    /// Header comments for CSV artifacts, plus any extra lines.
    pub fn comments(&self, extra: &[String]) -> Vec<String> {
        let mut c = vec![
            format!("config_hash={}", self.hash),
            format!("command={}", self.command),
        ];
        c.extend_from_slice(extra);
        c
    }

    pub fn field<G: Grid>(&self, name: &str, f: &Field<G>, extra: &[String]) -> Result<()> {
        let mut w = self.open(name)?;
        f.write_csv(&mut w, &self.comments(extra))?;
        w.flush()?;
        Ok(())
    }

    /// A numeric table; integral columns print as integers.
    pub fn table(&self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut w = self.open(name)?;
        for c in self.comments(&[]) {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            let cells: Vec<String> = row
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && v.abs() < 1e15 {
                        format!("{}", v as i64)
                    } else {
                        fmt17(v)
                    }
                })
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn raw(
        &self,
        name: &str,
        write: impl FnOnce(&mut dyn Write, &[String]) -> Result<()>,
    ) -> Result<()> {
        let mut w = self.open(name)?;
        write(&mut w, &self.comments(&[]))?;
        w.flush()?;
        Ok(())
    }

    /// A JSON report carrying the config hash as a field.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(m) = &mut v {
            m.insert("config_hash".into(), Value::String(self.hash.clone()));
        }
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// `summary.json`: hash, versions, status and every reported scalar.
    pub fn summary(&self, status: &str, scalars: Value) -> Result<()> {
        let v = json!({
            "command": self.command,
            "config_hash": self.hash,
            "versions": {
                "pershock": pershock::VERSION,
                "pershock-cli": env!("CARGO_PKG_VERSION"),
            },
            "status": status,
            "scalars": scalars,
        });
        let mut w = self.open("summary.json")?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}
