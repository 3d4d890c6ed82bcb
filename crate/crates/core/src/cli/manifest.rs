use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::{Common, RunConfig};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonModel;

/// Record of one run, written as `manifest.json` next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: Option<u64>,
    pub skeleton_checksum: String,
    pub config: Option<RunConfig>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub counters: BTreeMap<String, f64>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn new(command: &str, common: &Common, skeleton: &SkeletonModel) -> Self {
        let mut inputs = BTreeMap::new();
        if let Some(p) = &common.skeleton {
            inputs.insert("skeleton".into(), p.clone());
        }
        if let Some(p) = &common.config {
            inputs.insert("config".into(), p.clone());
        }
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            status: "running".into(),
            error: None,
            seed: common.seed,
            skeleton_checksum: skeleton.checksum(),
            config: None,
            inputs,
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            counters: BTreeMap::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.to_string(), path.to_path_buf());
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    /// Runs `f` and records its wall-clock time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.insert(phase.to_string(), t.elapsed().as_secs_f64());
        out
    }

    /// Records and prints a throughput counter.
    pub fn throughput(&mut self, what: &str, count: usize, seconds: f64) {
        let rate = count as f64 / seconds.max(1e-9);
        println!("{what}: {count} poses in {seconds:.3} s ({rate:.0} poses/s)");
        self.counters.insert(format!("{what}_poses_per_second"), rate);
    }

    pub fn counter(&mut self, name: &str, value: f64) {
        self.counters.insert(name.to_string(), value);
    }

    pub(super) fn finish(&mut self, config: &RunConfig, error: Option<&Error>) {
        self.config = Some(config.clone());
        self.seed = self.seed.or(config.seed);
        match error {
            None => self.status = "ok".into(),
            Some(e) => {
                self.status = "failed".into();
                self.error = Some(e.to_string());
            }
        }
        if let Some(t) = self.started {
            self.timings.insert("total".into(), t.elapsed().as_secs_f64());
        }
    }

    pub(super) fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
