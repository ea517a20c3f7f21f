//! End-to-end experiment orchestration: corpus, touch datasets, the two
//! training stages, reconstructions and the touches-vs-quality trend. Every
//! stage reads and writes under one output directory and records a run
//! manifest next to its outputs.

pub mod config;
pub mod corpus;
mod reconstruct;
mod stages;
mod touches;
mod trend;

pub use config::{
    CorpusConfig, ExperimentConfig, ReconstructConfig, SdfDataConfig, TouchConfig, TrendConfig,
};
pub use corpus::{gen_corpus, Corpus, CorpusManifest, Family, ShapeEntry, Split};
pub use reconstruct::{
    load_models, observation_samples, reconstruct_from_touches, run_reconstruction, Models, Reconstruction,
};
pub use stages::{run_gen_corpus, run_train_chart, run_train_sdf, sdf_dataset, TrainedChart};
pub use touches::{collect_touches, run_touch_dataset, TouchSet};
pub use trend::{
    load_trend_rows, read_report_csv, run_trend, summarize, trend_check, write_summary_csv, CountSummary,
    ReportLine, TrendCheck, TrendOutput, SUMMARY_HEADER,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version stamped into run manifests.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output layout under the configured directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn touches(&self, split: Split) -> PathBuf {
        let name = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        self.root.join("touches").join(format!("{name}.ttch"))
    }

    pub fn sdf(&self, shape_id: u64) -> PathBuf {
        self.root.join("sdf").join(format!("shape_{shape_id:03}.tsdf"))
    }

    pub fn chart_model(&self) -> PathBuf {
        self.root.join("models").join("chart.tprm")
    }

    pub fn sdf_model(&self) -> PathBuf {
        self.root.join("models").join("sdf.tprm")
    }

    pub fn recon(&self, shape_id: u64, touches: usize, seed: u64) -> PathBuf {
        self.root
            .join("recon")
            .join(format!("shape{shape_id:03}_k{touches}_s{seed}"))
    }

    pub fn trend(&self) -> PathBuf {
        self.root.join("trend")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }
}

/// Written by every command; later stages refuse inputs whose manifest does
/// not match the current configuration and code version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash: cfg.hash()?,
            code_version: CODE_VERSION.to_string(),
            seed: cfg.seed,
        })
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_manifest(layout: &Layout, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    write_json(&layout.manifest(command), &RunManifest::new(command, cfg)?)
}

/// Fails unless `command` ran with this exact configuration and code version.
pub fn check_manifest(layout: &Layout, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    let path = layout.manifest(command);
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::ManifestMismatch(format!("no manifest for `{command}`; run it first")))?;
    let found: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::ManifestMismatch(format!("{}: {e}", path.display())))?;
    let expected = RunManifest::new(command, cfg)?;
    if found != expected {
        return Err(Error::ManifestMismatch(format!(
            "`{command}` outputs were produced by config {} (code {}), current is {} (code {})",
            found.config_hash, found.code_version, expected.config_hash, expected.code_version
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn manifest_tracks_config() {
        let dir = tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let cfg = ExperimentConfig::default();
        assert!(matches!(
            check_manifest(&layout, "gen-corpus", &cfg),
            Err(Error::ManifestMismatch(_))
        ));
        write_manifest(&layout, "gen-corpus", &cfg).unwrap();
        check_manifest(&layout, "gen-corpus", &cfg).unwrap();
        let other = ExperimentConfig { seed: 5, ..cfg };
        assert!(matches!(
            check_manifest(&layout, "gen-corpus", &other),
            Err(Error::ManifestMismatch(_))
        ));
    }
}
