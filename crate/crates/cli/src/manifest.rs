use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use igd::denoiser::DENOISER_FORMAT_VERSION;
use igd::detector::CLASSIFIER_FORMAT_VERSION;
use igd::experiment::ExperimentConfig;
use igd::nn::NN_FORMAT_VERSION;
use igd::world::{DATASET_FORMAT_VERSION, WORLD_FORMAT_VERSION};
use serde::Serialize;
use serde_json::Value;

/// Written next to every command's outputs. Timestamps live only here.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Effective settings after config-file and flag resolution.
    pub flags: Value,
    pub seeds: BTreeMap<&'static str, u64>,
    pub format_versions: BTreeMap<&'static str, u32>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub wall_time: f64,
}

pub struct Recorder {
    command: &'static str,
    start: Instant,
    started_unix: u64,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command,
            start: Instant::now(),
            started_unix,
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `<dir>/<command>.manifest.json`.
    pub fn finish(self, dir: &Path, flags: Value, seeds: BTreeMap<&'static str, u64>) -> Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            flags,
            seeds,
            format_versions: format_versions(),
            outputs: self.outputs,
            started_unix: self.started_unix,
            wall_time: self.start.elapsed().as_secs_f64(),
        };
        igd::io::write_json(&path, &manifest)?;
        Ok(path)
    }
}

pub fn format_versions() -> BTreeMap<&'static str, u32> {
    BTreeMap::from([
        ("world", WORLD_FORMAT_VERSION),
        ("dataset", DATASET_FORMAT_VERSION),
        ("mlp", NN_FORMAT_VERSION),
        ("denoiser", DENOISER_FORMAT_VERSION),
        ("classifier", CLASSIFIER_FORMAT_VERSION),
    ])
}

pub fn all_seeds(c: &ExperimentConfig) -> BTreeMap<&'static str, u64> {
    BTreeMap::from([
        ("world", c.world_seed),
        ("dataset", c.dataset_seed),
        ("eval", c.eval_seed),
        ("classifier_prompts", c.classifier_prompt_seed),
        ("denoiser", c.denoiser_seed),
        ("classifier", c.classifier_seed),
        ("feature", c.feature_seed),
    ])
}
