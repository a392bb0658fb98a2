use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance record embedded in every artifact a run writes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration (parameters plus input file
    /// contents).
    pub config_hash: String,
    pub seed: Option<u64>,
    pub versions: BTreeMap<&'static str, String>,
    /// Wall time per stage, seconds.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    /// Unix seconds at start; the only field expected to differ between
    /// reruns besides the timings.
    pub timestamp: u64,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: String, config: &serde_json::Value, seed: Option<u64>) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("gridid", env!("CARGO_PKG_VERSION").to_string());
        versions.insert("grid_format", gridid::netmodel::GRID_FORMAT.to_string());
        versions.insert("dataset_format", gridid::marketsim::DATASET_FORMAT.to_string());
        versions.insert("result_format", gridid::recovery::RESULT_FORMAT.to_string());
        versions.insert("report_format", crate::REPORT_FORMAT.to_string());
        RunManifest {
            command,
            config_hash: sha256_hex(config.to_string().as_bytes()),
            seed,
            versions,
            timings: BTreeMap::new(),
            outputs: Vec::new(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            clock: None,
        }
    }

    /// Starts timing `stage`, closing the previous one.
    pub fn stage(&mut self, stage: &str) {
        self.finish_stage();
        log::info!("stage={stage}");
        self.clock = Some((stage.to_string(), Instant::now()));
    }

    pub fn finish_stage(&mut self) {
        if let Some((name, start)) = self.clock.take() {
            self.timings.insert(name, start.elapsed().as_secs_f64());
        }
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("manifest serializes")
    }

    pub fn write(&mut self, path: &Path) -> anyhow::Result<()> {
        self.finish_stage();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Hash of a file's bytes, or of its path when it cannot be read (the read
/// error surfaces later with context).
pub fn file_digest(path: &PathBuf) -> String {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .unwrap_or_else(|_| format!("unreadable:{}", path.display()))
}
