//! Writers for the CSV tables and the manifest. Every write goes through an
//! [`OutputSet`] so a failed run can remove what it already wrote.

use std::fs;
use std::path::{Path, PathBuf};

use envdiag::harness::PowerTable;
use envdiag::DiagnosticResult;
use serde::Serialize;

use crate::{io_err, AppError, AppResult};

/// Floats are written with 17 significant digits so they round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Grid, observed function and envelope, one row per grid point.
pub fn envelope_csv(r: &DiagnosticResult) -> String {
    let env = &r.envelope;
    let mut s = String::from("grid,observed,center,lower,upper\n");
    for i in 0..r.grid.len() {
        let row = [r.grid[i], r.observed[i], env.center[i], env.lower[i], env.upper[i]];
        s.push_str(&row.map(fmt_f64).join(","));
        s.push('\n');
    }
    s
}

pub fn power_csv(t: &PowerTable) -> String {
    let mut s = String::from("model,violation,n,method,rate,se,n_datasets,B,seed\n");
    for r in &t.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.model,
            r.violation,
            r.n,
            r.method,
            fmt_f64(r.rate),
            fmt_f64(r.se),
            r.n_datasets,
            r.b,
            r.seed
        ));
    }
    s
}

/// Files written so far in one run. Dropping without [`OutputSet::keep`]
/// deletes them, and the output directory too if this run created it and
/// it is empty.
pub struct OutputSet {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
    keep: bool,
}

impl OutputSet {
    pub fn create(dir: &Path) -> AppResult<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
            keep: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> AppResult<PathBuf> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> AppResult<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|source| AppError::Json {
            path: self.dir.join(name),
            source,
        })?;
        self.write(name, &(text + "\n"))
    }

    pub fn keep(mut self) -> Vec<PathBuf> {
        self.keep = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if self.keep {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123456.789, f64::MAX] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn dropped_set_removes_its_files() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("out");
        {
            let mut set = OutputSet::create(&dir).unwrap();
            set.write("a.csv", "x\n").unwrap();
        }
        assert!(!dir.exists());
        let mut set = OutputSet::create(&dir).unwrap();
        set.write("a.csv", "x\n").unwrap();
        set.keep();
        assert!(dir.join("a.csv").exists());
    }
}
