//! Experiment orchestration: configuration, output directories, run
//! manifests and replay.
//!
//! Every run writes `manifest.txt` last. It holds the resolved
//! configuration (with command-line overrides applied), the replicate seed
//! rule and an FNV-1a hash of every CSV written, so that
//! [`replay`] can regenerate the CSVs and check them byte for byte.

pub mod config;
pub mod experiments;
pub mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::derive_seed_list;

pub use config::ExperimentConfig;
pub use experiments::Summary;

pub const MANIFEST: &str = "manifest.txt";

const SEED_RULE: &str = "replicate k uses splitmix64(seed ^ splitmix64(k + 0x9E3779B97F4A7C15)), \
expanded to a ChaCha8 key with seed_from_u64";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Density,
    Compare,
    Sweep,
    DtConvergence,
    Fig1,
    Fig2,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Density => "density",
            Command::Compare => "compare",
            Command::Sweep => "sweep",
            Command::DtConvergence => "dt-convergence",
            Command::Fig1 => "fig1",
            Command::Fig2 => "fig2",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Command::Density,
            Command::Compare,
            Command::Sweep,
            Command::DtConvergence,
            Command::Fig1,
            Command::Fig2,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

/// 64-bit FNV-1a, used to fingerprint output files in manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Single writer for a run's output directory. Files written so far are
/// removed again if the run fails.
pub struct Output {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
    hashes: BTreeMap<String, String>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn put(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Writes a CSV and records its hash for the manifest.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        self.hashes
            .insert(name.to_string(), format!("{:016x}", fnv1a64(contents.as_bytes())));
        self.put(name, contents)
    }

    /// Writes a plot; plots are not fingerprinted.
    pub fn write_svg(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        self.put(name, contents)
    }

    fn abort(self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub command: Command,
    pub version: String,
    pub seed_rule: String,
    pub replicate_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub run: RunInfo,
    /// File name to FNV-1a hash (hex).
    pub outputs: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        m.config.validate()?;
        Ok(m)
    }

    fn render(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        Ok(format!("# popmf run manifest\n{body}"))
    }
}

/// Overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
}

/// Everything a run produced.
#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub csvs: Vec<PathBuf>,
    pub svgs: Vec<PathBuf>,
    pub summary: Summary,
}

/// Runs `command` with `cfg` (after applying `overrides`) into `out`.
pub fn run(
    command: Command,
    cfg: &ExperimentConfig,
    overrides: &Overrides,
    out: &Path,
) -> Result<RunArtifacts> {
    let mut cfg = cfg.clone();
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(m) = overrides.replicates {
        cfg.replicates = m;
    }
    cfg.validate()?;
    let mut output = Output::create(out)?;
    match execute(command, &cfg, &mut output) {
        Ok(summary) => {
            let manifest = Manifest {
                run: RunInfo {
                    command,
                    version: env!("CARGO_PKG_VERSION").to_string(),
                    seed_rule: SEED_RULE.to_string(),
                    replicate_seeds: derive_seed_list(cfg.seed, cfg.replicates),
                },
                outputs: output.hashes.clone(),
                config: cfg,
            };
            let text = match manifest.render() {
                Ok(t) => t,
                Err(e) => {
                    output.abort();
                    return Err(e);
                }
            };
            let manifest_path = match output.put(MANIFEST, &text) {
                Ok(p) => p,
                Err(e) => {
                    output.abort();
                    return Err(e);
                }
            };
            let (svgs, csvs): (Vec<PathBuf>, Vec<PathBuf>) = output
                .written
                .iter()
                .filter(|p| **p != manifest_path)
                .cloned()
                .partition(|p| p.extension().is_some_and(|e| e == "svg"));
            Ok(RunArtifacts {
                dir: output.dir.clone(),
                manifest: manifest_path,
                csvs,
                svgs,
                summary,
            })
        }
        Err(e) => {
            output.abort();
            Err(e)
        }
    }
}

fn execute(command: Command, cfg: &ExperimentConfig, out: &mut Output) -> Result<Summary> {
    match command {
        Command::Density => experiments::run_density(cfg, out),
        Command::Compare => experiments::run_compare(cfg, out),
        Command::Sweep => experiments::run_sweep(cfg, out),
        Command::DtConvergence => experiments::run_dt_convergence(cfg, out),
        Command::Fig1 => experiments::run_figure("fig1", cfg, out),
        Command::Fig2 => experiments::run_figure("fig2", cfg, out),
    }
}

/// Outcome of replaying a manifest.
#[derive(Debug)]
pub struct ReplayReport {
    pub artifacts: RunArtifacts,
    pub matched: Vec<String>,
    /// Files whose hash differs from the manifest, or that were not
    /// produced again.
    pub mismatched: Vec<String>,
}

impl ReplayReport {
    pub fn is_identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-runs the experiment recorded in a manifest into `out` and compares
/// every CSV against the recorded hashes.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<ReplayReport> {
    let manifest = Manifest::load(manifest_path)?;
    let artifacts = run(manifest.run.command, &manifest.config, &Overrides::default(), out)?;
    let fresh = Manifest::load(&artifacts.manifest)?;
    let mut matched = Vec::new();
    let mut mismatched = Vec::new();
    for (name, hash) in &manifest.outputs {
        if fresh.outputs.get(name) == Some(hash) {
            matched.push(name.clone());
        } else {
            mismatched.push(name.clone());
        }
    }
    for name in fresh.outputs.keys() {
        if !manifest.outputs.contains_key(name) {
            mismatched.push(name.clone());
        }
    }
    Ok(ReplayReport {
        artifacts,
        matched,
        mismatched,
    })
}
