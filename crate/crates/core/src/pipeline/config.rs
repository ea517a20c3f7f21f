use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::corpus::Family;
use crate::chart::{ChartConfig, ChartTrainConfig, CloudConfig};
use crate::decoder::{DecoderConfig, FinetuneConfig, InferConfig, SdfTrainConfig};
use crate::error::{Error, Result};
use crate::touch::SensorSpec;

/// Procedural corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Families are assigned round-robin by shape id.
    pub families: Vec<Family>,
    pub count: usize,
    /// Train, validation and test sizes; must sum to `count`.
    pub split: [usize; 3],
    pub sphere_subdivisions: u32,
    /// Segments around cylinders and capsules.
    pub segments: u32,
    /// Lattice cells along the longest side for CSG shapes.
    pub csg_resolution: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            count: 32,
            split: [24, 4, 4],
            sphere_subdivisions: 3,
            segments: 48,
            csg_resolution: 64,
        }
    }
}

/// Per-shape signed-distance training data. Half of the surface points are
/// perturbed at each noise scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfDataConfig {
    pub n_surface: usize,
    pub n_uniform: usize,
    pub sigma_fine: f64,
    pub sigma_coarse: f64,
}

impl Default for SdfDataConfig {
    fn default() -> Self {
        Self {
            n_surface: 5000,
            n_uniform: 2500,
            sigma_fine: 0.005,
            sigma_coarse: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TouchConfig {
    /// Touches per training and validation shape for the chart predictor.
    pub per_shape: usize,
    /// Ground-truth contact points per touch.
    pub cloud_points: usize,
    /// Fresh rays tried after a miss before giving up on a touch.
    pub max_retries: u32,
    /// Depth images written as PGM per shape, for inspection.
    pub pgm_per_shape: usize,
}

impl Default for TouchConfig {
    fn default() -> Self {
        Self {
            per_shape: 50,
            cloud_points: 256,
            max_retries: 20,
            pgm_per_shape: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Lattice points per axis for level-set extraction.
    pub resolution: usize,
    /// Half-width of the extraction cube.
    pub half_width: f64,
    /// Surface samples per mesh for the metrics.
    pub eval_points: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            resolution: crate::isosurface::DEFAULT_RESOLUTION,
            half_width: crate::geometry::UNIFORM_HALF_WIDTH,
            eval_points: crate::metrics::DEFAULT_EVAL_POINTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendConfig {
    pub touch_counts: Vec<usize>,
    /// Seeds per (shape, touch count).
    pub seeds: u64,
    /// Parallel reconstruction jobs; 0 uses every available core.
    pub jobs: usize,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            touch_counts: vec![1, 10, 20],
            seeds: 5,
            jobs: 0,
        }
    }
}

/// Everything a pipeline run depends on. Every key has a default and
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random draw in the pipeline derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub sdf_data: SdfDataConfig,
    pub sensor: SensorSpec,
    pub touches: TouchConfig,
    pub chart: ChartConfig,
    pub chart_train: ChartTrainConfig,
    pub cloud: CloudConfig,
    pub decoder: DecoderConfig,
    pub decoder_train: SdfTrainConfig,
    pub infer: InferConfig,
    pub finetune: FinetuneConfig,
    pub reconstruct: ReconstructConfig,
    pub trend: TrendConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("run"),
            corpus: CorpusConfig::default(),
            sdf_data: SdfDataConfig::default(),
            sensor: SensorSpec::default(),
            touches: TouchConfig::default(),
            chart: ChartConfig::default(),
            chart_train: ChartTrainConfig::default(),
            cloud: CloudConfig::default(),
            decoder: DecoderConfig::default(),
            decoder_train: SdfTrainConfig::default(),
            infer: InferConfig::default(),
            finetune: FinetuneConfig::default(),
            reconstruct: ReconstructConfig::default(),
            trend: TrendConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.families.is_empty() || c.count == 0 {
            return Err(Error::Config("corpus needs at least one family and one shape".into()));
        }
        if c.split.iter().sum::<usize>() != c.count {
            return Err(Error::Config(format!("split {:?} does not sum to {}", c.split, c.count)));
        }
        if c.csg_resolution < 8 || c.segments < 3 {
            return Err(Error::Config("corpus tessellation too coarse".into()));
        }
        if !(self.sdf_data.sigma_fine >= 0.0 && self.sdf_data.sigma_coarse >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        self.sensor.validate()?;
        if self.touches.cloud_points == 0 {
            return Err(Error::Config("touches need ground-truth points".into()));
        }
        if self.chart.footprint_radius != self.sensor.footprint_radius {
            return Err(Error::Config("chart and sensor footprint radii differ".into()));
        }
        if self.chart.input_resolution == 0 || self.chart.input_resolution > self.sensor.image_size {
            return Err(Error::Config("chart input resolution must be in 1..=image_size".into()));
        }
        if self.cloud.n == 0 || !(self.cloud.eps > 0.0) {
            return Err(Error::Config("observation clouds need points and a positive offset".into()));
        }
        self.decoder.validate()?;
        self.decoder_train.validate()?;
        if self.reconstruct.resolution < 2 || !(self.reconstruct.half_width > 0.0) || self.reconstruct.eval_points == 0 {
            return Err(Error::Config("invalid reconstruction lattice or sample count".into()));
        }
        let t = &self.trend.touch_counts;
        if t.is_empty() || t[0] == 0 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("touch counts {t:?} must be positive and strictly increasing")));
        }
        if self.trend.seeds == 0 {
            return Err(Error::Config("trend needs at least one seed".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization, as lowercase hex. The output
    /// directory is left out so a run directory can be moved, and the job
    /// count because it never changes results.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        canonical.trend.jobs = 0;
        Ok(hex(&Sha256::digest(canonical.to_toml()?.as_bytes())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn sections_override_single_keys() {
        let cfg = ExperimentConfig::parse(
            "seed = 9\n[corpus]\ncount = 6\nsplit = [4, 1, 1]\nfamilies = [\"box\", \"box-minus-sphere\"]\n[sensor]\nimage_size = 32\n[chart]\ninput_resolution = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.corpus.count, 6);
        assert_eq!(cfg.corpus.families, vec![Family::Box, Family::BoxMinusSphere]);
        assert_eq!(cfg.sensor.image_size, 32);
        assert_eq!(cfg.sensor.step, SensorSpec::default().step);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        for text in [
            "sead = 1",
            "[corpus]\ncolour = 3",
            "[decoder_train]\nseed = 4",
            "[trend]\ntouch_counts = [10, 1]",
            "[corpus]\ncount = 5",
            "[decoder]\ndelta = -1.0",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn serialization_round_trips_and_hash_tracks_content() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        let other = ExperimentConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
        let moved = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..cfg.clone()
        };
        assert_eq!(moved.hash().unwrap(), cfg.hash().unwrap());
        let mut parallel = cfg.clone();
        parallel.trend.jobs = 3;
        assert_eq!(parallel.hash().unwrap(), cfg.hash().unwrap());
    }
}
