//! Output artifacts: the run manifest (written before any compute and
//! finalized with content hashes), deterministic JSON reports, and CSV
//! series. Reports contain no wall-clock or environment values, so re-running
//! with the same config and seed reproduces them byte for byte; timestamps
//! live only in the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::dynamics::Trajectory;
use crate::error::ConfigError;

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub sha256: String,
}

/// Provenance record for one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub master_seed: u64,
    pub config_path: Option<String>,
    pub config: FileConfig,
    pub started_unix: u64,
    pub ended_unix: Option<u64>,
    pub output_dir: String,
    pub artifacts: Vec<ArtifactRecord>,
}

impl RunManifest {
    pub fn new(
        experiment: &str,
        seed: u64,
        config_path: Option<&Path>,
        config: FileConfig,
        out_dir: &Path,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            master_seed: seed,
            config_path: config_path.map(|p| p.display().to_string()),
            config,
            started_unix: unix_now(),
            ended_unix: None,
            output_dir: out_dir.display().to_string(),
            artifacts: Vec::new(),
        }
    }

    pub fn path(out_dir: &Path) -> PathBuf {
        out_dir.join("manifest.json")
    }

    /// Write the manifest as it stands (called once before compute starts and
    /// once at the end with the artifact list and end timestamp).
    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        let bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        fs::write(Self::path(out_dir), bytes)
    }

    pub fn finalize(&mut self, out_dir: &Path) -> std::io::Result<()> {
        self.ended_unix = Some(unix_now());
        self.write(out_dir)
    }

    /// Record an artifact that already exists on disk, hashing its content.
    pub fn record_artifact(&mut self, out_dir: &Path, name: &str) -> std::io::Result<()> {
        let bytes = fs::read(out_dir.join(name))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.artifacts.push(ArtifactRecord {
            name: name.to_string(),
            sha256: hex::encode(hasher.finalize()),
        });
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Deterministic JSON wrapper around an experiment result: the echoed config,
/// the seed, accumulated warnings, and the statistics. No timestamps.
#[derive(Debug, Clone, Serialize)]
pub struct ReportEnvelope<R: Serialize> {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub master_seed: u64,
    pub warnings: Vec<String>,
    pub config: FileConfig,
    pub report: R,
}

impl<R: Serialize> ReportEnvelope<R> {
    pub fn new(
        experiment: &str,
        seed: u64,
        warnings: Vec<String>,
        config: FileConfig,
        report: R,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            master_seed: seed,
            warnings,
            config,
            report,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn write(&self, out_dir: &Path, name: &str) -> std::io::Result<()> {
        fs::write(out_dir.join(name), self.to_bytes())
    }
}

/// Stream trajectory diagnostics as CSV:
/// `t,l2_sq,grad_l2_sq,dissipation_integral[,h{exp}_sq...]`.
pub fn trajectory_csv<W: Write>(w: &mut W, traj: &Trajectory<f64>) -> std::io::Result<()> {
    write!(w, "t,l2_sq,grad_l2_sq,dissipation_integral")?;
    for (e, _) in &traj.sobolev_sq {
        write!(w, ",h{e}_sq")?;
    }
    writeln!(w)?;
    for i in 0..traj.times.len() {
        write!(
            w,
            "{:e},{:e},{:e},{:e}",
            traj.times[i], traj.l2_sq[i], traj.grad_sq[i], traj.diss_integral[i]
        )?;
        for (_, series) in &traj.sobolev_sq {
            write!(w, ",{:e}", series[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Plain numeric table with a fixed header row.
pub struct CsvTable {
    pub name: String,
    pub header: String,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.header)?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(buf, "{}", line.join(","))?;
        }
        fs::write(out_dir.join(&self.name), buf)
    }
}

pub fn ensure_out_dir(dir: &Path) -> Result<(), ConfigError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FileConfig;

    const MINIMAL: &str = r#"
        [grid]
        size = 16

        [physics]
        equation = "scalar"
        gamma = 0.1
        mu = 0.5

        [experiment]
        kind = "selftest"
    "#;

    #[test]
    fn report_bytes_are_deterministic() {
        let cfg = FileConfig::parse(MINIMAL).unwrap();
        let a = ReportEnvelope::new("selftest", 7, vec![], cfg.clone(), vec![1.0, 2.0]);
        let b = ReportEnvelope::new("selftest", 7, vec![], cfg, vec![1.0, 2.0]);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn manifest_written_before_and_after_compute() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = FileConfig::parse(MINIMAL).unwrap();
        let mut manifest = RunManifest::new("selftest", 0, None, cfg, dir.path());
        manifest.write(dir.path()).unwrap();
        assert!(RunManifest::path(dir.path()).exists());

        std::fs::write(dir.path().join("table.csv"), "a,b\n1,2\n").unwrap();
        manifest.record_artifact(dir.path(), "table.csv").unwrap();
        manifest.finalize(dir.path()).unwrap();
        let text = std::fs::read_to_string(RunManifest::path(dir.path())).unwrap();
        assert!(text.contains("table.csv"));
        assert!(text.contains("sha256"));
        assert!(text.contains("ended_unix"));
    }
}
