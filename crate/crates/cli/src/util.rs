//! Shared plumbing: atomic output files, run manifests, worker pool setup.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dtscr_core::{Error, Result};
use serde::Serialize;

/// Write a file atomically: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "out".to_string()),
        std::process::id()
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub argv: Vec<String>,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: &'a str,
    pub wall_time_secs: f64,
    pub unix_time: u64,
}

/// Every run records what produced its outputs. The two time fields are the
/// only run-to-run differences for a fixed seed.
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    inputs: &[&Path],
    seed: Option<u64>,
    started: std::time::Instant,
) -> Result<()> {
    let manifest = Manifest {
        command,
        argv: std::env::args().collect(),
        inputs: inputs
            .iter()
            .map(|p| p.to_string_lossy().to_string())
            .collect(),
        seed,
        version: env!("CARGO_PKG_VERSION"),
        wall_time_secs: started.elapsed().as_secs_f64(),
        unix_time: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    atomic_write(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )
}

/// Bound internal parallelism: `--workers`, else `DTSCR_WORKERS`, else all
/// cores. Must run before any parallel work.
pub fn init_workers(workers: Option<usize>) -> Result<()> {
    let from_env = std::env::var("DTSCR_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = workers.or(from_env) {
        if n == 0 {
            return Err(Error::config("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    }
    Ok(())
}

pub fn out_dir(path: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(path)?;
    Ok(path.to_path_buf())
}

/// Append CSV rows built with full-precision `{}` float formatting.
pub struct CsvBuilder {
    buf: String,
}

impl CsvBuilder {
    pub fn new(header: &str) -> Self {
        let mut buf = String::new();
        buf.push_str(header);
        buf.push('\n');
        CsvBuilder { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn write(self, path: &Path) -> Result<()> {
        atomic_write(path, self.buf.as_bytes())
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}
