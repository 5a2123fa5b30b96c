use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::output::emit_csv;
use super::run::run_on;
use crate::error::{Error, Result};
use crate::mnist::{Dataset, Split};
use crate::topology::ArchitectureKind;

pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "hash,status,csv,detail";

/// Cartesian product of architectures, widths, depths and seeds over a base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub base: ExperimentConfig,
    pub architectures: Vec<ArchitectureKind>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let base = ExperimentConfig::default();
        Self {
            architectures: vec![base.architecture],
            widths: vec![base.width],
            depths: vec![base.depth],
            seeds: vec![base.seed],
            base,
        }
    }
}

impl SweepGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// One config per grid point, each writing `<dir>/<run name>.csv`.
    pub fn expand(&self, dir: &Path) -> Result<Vec<ExperimentConfig>> {
        let mut out = Vec::new();
        for &architecture in &self.architectures {
            for &width in &self.widths {
                for &depth in &self.depths {
                    for &seed in &self.seeds {
                        let mut c = ExperimentConfig {
                            architecture,
                            width,
                            depth,
                            seed,
                            ..self.base.clone()
                        };
                        c.validate()?;
                        c.out = dir.join(format!("{}.csv", c.run_name()));
                        out.push(c);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Diverged,
    Failed,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub hash: String,
    pub status: String,
    pub csv: PathBuf,
    pub detail: String,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(&path)?;
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        entries.push(ManifestEntry {
            hash: field(0),
            status: field(1),
            csv: PathBuf::from(field(2)),
            detail: field(3),
        });
    }
    Ok(entries)
}

fn append_manifest(dir: &Path, hash: &str, status: RunStatus, csv_name: &str, detail: &str) -> Result<()> {
    let path = dir.join(MANIFEST);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    file.lock()
        .map_err(|e| Error::io(format!("locking {}", path.display()), e))?;
    let mut line = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut line);
        w.write_record([hash, status.as_str(), csv_name, detail])?;
        w.flush().map_err(|e| Error::io("formatting manifest line", e))?;
    }
    let len = file
        .metadata()
        .map_err(|e| Error::io(format!("stat {}", path.display()), e))?
        .len();
    if len == 0 {
        line.splice(0..0, format!("{MANIFEST_HEADER}\n").into_bytes());
    }
    let result = file
        .write_all(&line)
        .map_err(|e| Error::io(format!("appending to {}", path.display()), e));
    let _ = File::unlock(&file);
    result
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub executed: usize,
    pub skipped: usize,
    pub diverged: usize,
    /// `(config hash, error)` for runs that failed.
    pub failures: Vec<(String, String)>,
}

/// Runs every grid point not already completed in `dir`'s manifest, with at
/// most `parallelism` runs in flight. A failing run is recorded in the
/// manifest and the sweep carries on.
pub fn sweep_on(
    grid: &SweepGrid,
    dir: &Path,
    parallelism: usize,
    train: &Dataset,
    test: &Dataset,
) -> Result<SweepReport> {
    let configs = grid.expand(dir)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let done: HashSet<String> = read_manifest(dir)?
        .into_iter()
        .filter(|e| e.status == "ok" || e.status == "diverged")
        .map(|e| e.hash)
        .collect();
    let (pending, skipped): (Vec<_>, Vec<_>) = configs.into_iter().partition(|c| !done.contains(&c.hash()));
    log::info!("{} runs pending, {} already complete", pending.len(), skipped.len());

    let report = Mutex::new(SweepReport {
        skipped: skipped.len(),
        ..Default::default()
    });
    let next = AtomicUsize::new(0);
    let manifest_error: Mutex<Option<Error>> = Mutex::new(None);
    let workers = parallelism.max(1).min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(config) = pending.get(i) else { break };
                let hash = config.hash();
                let csv_name = config
                    .out
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let outcome = run_on(config, train, test)
                    .and_then(|(t, _)| emit_csv(&t.records, &config.out).map(|()| t.diverged));
                let (status, detail) = match &outcome {
                    Ok(false) => (RunStatus::Ok, String::new()),
                    Ok(true) => (RunStatus::Diverged, "training diverged".to_string()),
                    Err(e) => (RunStatus::Failed, e.to_string()),
                };
                {
                    let mut r = report.lock().expect("report lock");
                    r.executed += 1;
                    match status {
                        RunStatus::Diverged => r.diverged += 1,
                        RunStatus::Failed => r.failures.push((hash.clone(), detail.clone())),
                        RunStatus::Ok => {}
                    }
                }
                if let Err(e) = append_manifest(dir, &hash, status, &csv_name, &detail) {
                    manifest_error.lock().expect("manifest lock").get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = manifest_error.into_inner().expect("manifest lock") {
        return Err(e);
    }
    Ok(report.into_inner().expect("report lock"))
}

/// Loads the data named by the grid's base config and sweeps.
pub fn sweep(grid: &SweepGrid, dir: &Path, parallelism: usize) -> Result<SweepReport> {
    let train = Dataset::load(&grid.base.data_dir, Split::Train)?;
    let test = Dataset::load(&grid.base.data_dir, Split::Test)?;
    sweep_on(grid, dir, parallelism, &train, &test)
}
