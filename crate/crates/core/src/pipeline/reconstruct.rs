use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::corpus::Corpus;
use super::touches::collect_touches;
use super::{check_manifest, write_manifest, Layout};
use crate::chart::{chart_observation, AugmentedCloud, ChartModel};
use crate::decoder::{finetune_pivotal, infer_latent, DecoderCheckpoint, InferConfig};
use crate::error::Result;
use crate::geometry::{save_obj, Aabb, MeshIndex, SdfSample, TriangleMesh, Vec3};
use crate::metrics::{evaluate, write_report_csv, ReconstructionReport, ReportRow};
use crate::rng;
use crate::touch::TouchRecord;

/// Both trained stages.
#[derive(Clone, Debug)]
pub struct Models {
    pub chart: ChartModel,
    pub sdf: DecoderCheckpoint,
}

pub fn load_models(cfg: &ExperimentConfig) -> Result<Models> {
    let layout = Layout::new(&cfg.output_dir);
    check_manifest(&layout, "train-chart", cfg)?;
    check_manifest(&layout, "train-sdf", cfg)?;
    Ok(Models {
        chart: ChartModel::load(layout.chart_model())?,
        sdf: DecoderCheckpoint::load(layout.sdf_model())?,
    })
}

/// Observation points as signed-distance samples: surface points carry 0
/// and offset points their offset.
pub fn observation_samples(cloud: &AugmentedCloud) -> Vec<SdfSample> {
    cloud
        .points
        .iter()
        .zip(&cloud.labels)
        .map(|(&x, &s)| SdfSample { x, s })
        .collect()
}

/// Everything one reconstruction produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub observation: AugmentedCloud,
    pub z: Vec<f32>,
    pub infer_history: Vec<f64>,
    pub finetune_history: Vec<f64>,
    pub mesh: TriangleMesh,
    pub report: ReconstructionReport,
}

/// Seed of reconstruction `seed` of `shape_id`.
pub(crate) fn recon_seed(master: u64, shape_id: u64, seed: u64) -> u64 {
    rng::derive_index(rng::derive_index(rng::derive(master, "recon"), shape_id), seed)
}

/// Touches for reconstruction `seed` of `shape_id`. Asking for more touches
/// extends the sequence without changing its prefix.
pub(crate) fn recon_touches(
    cfg: &ExperimentConfig,
    index: &MeshIndex,
    shape_id: u64,
    count: usize,
    seed: u64,
) -> Result<Vec<TouchRecord>> {
    let base = recon_seed(cfg.seed, shape_id, seed);
    Ok(collect_touches(
        index,
        shape_id,
        count,
        &cfg.sensor,
        cfg.touches.cloud_points,
        cfg.touches.max_retries,
        rng::derive(base, "touches"),
    )?
    .records)
}

/// Charts → observation → latent inference → fine-tuning → level set →
/// metrics against `gt`. Fine-tuning always starts from the checkpoint
/// weights.
pub fn reconstruct_from_touches(
    cfg: &ExperimentConfig,
    models: &Models,
    gt: &TriangleMesh,
    touches: &[TouchRecord],
    seed: u64,
) -> Result<Reconstruction> {
    let observation = chart_observation(touches, &models.chart, &cfg.cloud, rng::derive(seed, "cloud"))?;
    let samples = observation_samples(&observation);
    let decoder = &models.sdf.decoder;
    let inference = infer_latent(
        decoder,
        &samples,
        &InferConfig {
            seed: rng::derive(seed, "infer"),
            ..cfg.infer
        },
    )?;
    let (tuned, finetune_history) = finetune_pivotal(decoder, &inference.z, &samples, &cfg.finetune)?;
    let h = cfg.reconstruct.half_width;
    let bounds = Aabb {
        min: Vec3::repeat(-h),
        max: Vec3::repeat(h),
    };
    let mesh = tuned
        .field(&inference.z)?
        .extract_mesh(bounds, cfg.reconstruct.resolution)?;
    let report = evaluate(&mesh, gt, cfg.reconstruct.eval_points, rng::derive(seed, "eval"))?;
    Ok(Reconstruction {
        observation,
        z: inference.z,
        infer_history: inference.history,
        finetune_history,
        mesh,
        report,
    })
}

fn series_csv(header: &str, values: impl Iterator<Item = f64>) -> String {
    let mut s = format!("{header}\n");
    for (i, v) in values.enumerate() {
        writeln!(s, "{i},{v:.9e}").expect("writing to a string");
    }
    s
}

/// Writes the mesh, report and intermediate artifacts into `dir`.
pub(crate) fn persist(dir: &Path, row: &ReportRow, r: &Reconstruction) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_obj(&r.mesh, dir.join("mesh.obj"))?;
    let mut report = Vec::new();
    write_report_csv(std::slice::from_ref(row), &mut report)?;
    fs::write(dir.join("report.csv"), report)?;
    let mut obs = String::from("x,y,z,label\n");
    for (p, l) in r.observation.points.iter().zip(&r.observation.labels) {
        writeln!(obs, "{:.9e},{:.9e},{:.9e},{:.9e}", p.x, p.y, p.z, l).expect("writing to a string");
    }
    fs::write(dir.join("observation.csv"), obs)?;
    fs::write(
        dir.join("latent.csv"),
        series_csv("index,value", r.z.iter().map(|&v| v as f64)),
    )?;
    fs::write(
        dir.join("infer_loss.csv"),
        series_csv("step,loss", r.infer_history.iter().copied()),
    )?;
    fs::write(
        dir.join("finetune_loss.csv"),
        series_csv("step,loss", r.finetune_history.iter().copied()),
    )?;
    Ok(())
}

/// Reconstructs `shape_id` from `k` fresh touches and writes the results to
/// the shape's reconstruction directory.
pub fn run_reconstruction(
    cfg: &ExperimentConfig,
    shape_id: u64,
    k: usize,
    seed: u64,
) -> Result<(PathBuf, ReconstructionReport)> {
    let layout = Layout::new(&cfg.output_dir);
    check_manifest(&layout, "gen-corpus", cfg)?;
    let models = load_models(cfg)?;
    let corpus = Corpus::open(layout.corpus())?;
    let gt = corpus.mesh(shape_id)?;
    let index = MeshIndex::new(&gt);
    let touches = recon_touches(cfg, &index, shape_id, k, seed)?;
    let r = reconstruct_from_touches(cfg, &models, &gt, &touches, recon_seed(cfg.seed, shape_id, seed))?;
    let dir = layout.recon(shape_id, k, seed);
    let row = ReportRow {
        shape_id,
        touches: k,
        seed,
        report: r.report,
    };
    persist(&dir, &row, &r)?;
    write_manifest(&layout, "reconstruct", cfg)?;
    Ok((dir.join("mesh.obj"), r.report))
}
