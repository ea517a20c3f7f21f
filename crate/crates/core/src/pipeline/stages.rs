use std::fmt::Write as _;
use std::fs;

use super::config::{ExperimentConfig, SdfDataConfig};
use super::corpus::{gen_corpus, Corpus, CorpusManifest, Split};
use super::{check_manifest, write_json, write_manifest, Layout};
use crate::chart::{chart_chamfer, train_chart, ChartModel, ChartTrainConfig};
use crate::decoder::{
    train_decoder, DecoderCheckpoint, LatentTable, SdfDecoder, SdfTrainConfig, ShapeNormalization,
};
use crate::error::Result;
use crate::geometry::{generate_sdf_dataset, write_sdf_dataset, MeshIndex, SdfSample};
use crate::rng;
use crate::touch::read_touches;

/// Points per ground-truth cloud used for the validation Chamfer distance.
const CHART_EVAL_POINTS: usize = 256;

pub fn run_gen_corpus(cfg: &ExperimentConfig) -> Result<CorpusManifest> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let manifest = gen_corpus(&cfg.corpus, cfg.seed, layout.corpus())?;
    write_manifest(&layout, "gen-corpus", cfg)?;
    Ok(manifest)
}

/// Surface samples split evenly between the two noise scales, plus the
/// uniform samples.
pub fn sdf_dataset(index: &MeshIndex, cfg: &SdfDataConfig, seed: u64) -> Result<Vec<SdfSample>> {
    let half = cfg.n_surface / 2;
    let mut out = generate_sdf_dataset(index, half, 0, cfg.sigma_fine, rng::derive(seed, "fine"))?;
    out.extend(generate_sdf_dataset(
        index,
        cfg.n_surface - half,
        cfg.n_uniform,
        cfg.sigma_coarse,
        rng::derive(seed, "coarse"),
    )?);
    Ok(out)
}

fn history_csv(header: &str, history: &[f64]) -> String {
    let mut s = format!("{header}\n");
    for (i, v) in history.iter().enumerate() {
        writeln!(s, "{i},{v:.9e}").expect("writing to a string");
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedChart {
    pub model: ChartModel,
    pub history: Vec<f64>,
    /// Validation Chamfer distance of the freshly initialized model.
    pub untrained_val_chamfer: f64,
    pub val_chamfer: f64,
}

#[derive(serde::Serialize)]
struct ChartEval {
    untrained_val_chamfer: f64,
    val_chamfer: f64,
}

pub fn run_train_chart(cfg: &ExperimentConfig) -> Result<TrainedChart> {
    let layout = Layout::new(&cfg.output_dir);
    check_manifest(&layout, "gen-touches", cfg)?;
    let train = read_touches(layout.touches(Split::Train))?;
    let val = read_touches(layout.touches(Split::Val))?;
    let mut model = ChartModel::new(cfg.chart.clone(), rng::derive(cfg.seed, "chart-init"));
    let eval_seed = rng::derive(cfg.seed, "chart-eval");
    let untrained = if val.is_empty() {
        f64::NAN
    } else {
        chart_chamfer(&model, &val, CHART_EVAL_POINTS, eval_seed)?
    };
    let train_cfg = ChartTrainConfig {
        seed: rng::derive(cfg.seed, "chart-train"),
        ..cfg.chart_train
    };
    let history = train_chart(&mut model, &train, &train_cfg)?;
    let val_chamfer = if val.is_empty() {
        f64::NAN
    } else {
        chart_chamfer(&model, &val, CHART_EVAL_POINTS, eval_seed)?
    };
    log::info!("chart validation Chamfer {untrained:.4e} untrained, {val_chamfer:.4e} trained");
    fs::create_dir_all(layout.root.join("models"))?;
    model.save(layout.chart_model())?;
    fs::write(layout.root.join("models").join("chart_loss.csv"), history_csv("epoch,loss", &history))?;
    write_json(
        &layout.root.join("models").join("chart_eval.json"),
        &ChartEval {
            untrained_val_chamfer: untrained,
            val_chamfer,
        },
    )?;
    write_manifest(&layout, "train-chart", cfg)?;
    Ok(TrainedChart {
        model,
        history,
        untrained_val_chamfer: untrained,
        val_chamfer,
    })
}

/// Fits the decoder and one latent per training shape.
pub fn run_train_sdf(cfg: &ExperimentConfig) -> Result<(DecoderCheckpoint, Vec<f64>)> {
    let layout = Layout::new(&cfg.output_dir);
    check_manifest(&layout, "gen-corpus", cfg)?;
    let corpus = Corpus::open(layout.corpus())?;
    let ids = corpus.manifest.ids(Split::Train);
    let data_seed = rng::derive(cfg.seed, "sdf-data");
    let mut datasets = Vec::with_capacity(ids.len());
    let mut shapes = Vec::with_capacity(ids.len());
    fs::create_dir_all(layout.root.join("sdf"))?;
    for &id in &ids {
        let index = MeshIndex::new(&corpus.mesh(id)?);
        let samples = sdf_dataset(&index, &cfg.sdf_data, rng::derive_index(data_seed, id))?;
        write_sdf_dataset(&samples, layout.sdf(id))?;
        datasets.push(samples);
        let entry = corpus.manifest.entry(id)?;
        shapes.push(ShapeNormalization {
            shape_id: id,
            scale: entry.scale,
            offset: entry.offset,
        });
    }
    let mut decoder = SdfDecoder::new(cfg.decoder.clone(), rng::derive(cfg.seed, "sdf-init"))?;
    let train_cfg = SdfTrainConfig {
        seed: rng::derive(cfg.seed, "sdf-train"),
        ..cfg.decoder_train
    };
    let out = train_decoder(&mut decoder, &datasets, &train_cfg)?;
    let checkpoint = DecoderCheckpoint {
        decoder,
        latents: LatentTable {
            shape_ids: ids,
            codes: out.codes,
        },
        alpha: train_cfg.alpha,
        shapes,
    };
    fs::create_dir_all(layout.root.join("models"))?;
    checkpoint.save(layout.sdf_model())?;
    fs::write(layout.root.join("models").join("sdf_loss.csv"), history_csv("epoch,loss", &out.history))?;
    write_manifest(&layout, "train-sdf", cfg)?;
    Ok((checkpoint, out.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;

    #[test]
    fn dataset_mixes_both_noise_scales() {
        let index = MeshIndex::new(&icosphere(2).transformed(|v| v * 0.6));
        let cfg = SdfDataConfig {
            n_surface: 400,
            n_uniform: 100,
            sigma_fine: 0.005,
            sigma_coarse: 0.05,
        };
        let s = sdf_dataset(&index, &cfg, 3).unwrap();
        assert_eq!(s.len(), 2 * 400 + 100);
        let fine = &s[..400];
        let coarse = &s[400..800];
        let rms = |xs: &[SdfSample]| (xs.iter().map(|x| x.s * x.s).sum::<f64>() / xs.len() as f64).sqrt();
        // Radial offsets of isotropic noise have the per-axis scale, up to
        // faceting of the icosphere.
        assert!(rms(fine) < 0.012, "{}", rms(fine));
        assert!(rms(coarse) > 0.03 && rms(coarse) < 0.07, "{}", rms(coarse));
        assert_eq!(s, sdf_dataset(&index, &cfg, 3).unwrap());
    }
}
