use std::sync::Arc;

use autodiff::{check_gradients, Adam, AdamConfig, Feed, GradCheck, Graph, NodeId, ParamStore, Real, StepDecay, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{canonical_order, random_code, DecoderConfig, SdfDecoder};
use crate::error::{Error, Result};
use crate::geometry::SdfSample;
use crate::rng;

/// Standard deviation of freshly initialized latent codes.
pub const LATENT_INIT_STD: f64 = 0.01;

const LATENTS: &str = "latents";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_theta: f64,
    pub lr_z: f64,
    /// Weight of the squared latent norms.
    pub alpha: f64,
    /// Both rates are multiplied by `lr_decay` every `decay_every` epochs
    /// (0 disables decay).
    pub decay_every: usize,
    pub lr_decay: f64,
    /// Set by the caller; never read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SdfTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 4096,
            lr_theta: 1e-3,
            lr_z: 1e-3,
            alpha: 1e-4,
            decay_every: 100,
            lr_decay: 0.5,
            seed: 0,
        }
    }
}

impl SdfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || self.batch_size == 0 || !(self.lr_decay > 0.0) {
            return Err(Error::Config(
                "decoder training needs alpha >= 0, a positive batch size and decay factor".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub steps: usize,
    pub lr: f64,
    pub alpha: f64,
    /// Set by the caller; never read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            steps: 800,
            lr: 5e-3,
            alpha: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub alpha: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 1e-5,
            alpha: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    /// `[S, D]`, row `i` for dataset `i`.
    pub codes: Tensor<f32>,
    /// Mean total loss of every epoch.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    /// Lowest-loss iterate.
    pub z: Vec<f32>,
    pub best_loss: f64,
    /// Loss of every iterate, starting with the initial code.
    pub history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    /// Mean absolute difference of clamped prediction and clamped target.
    pub data: f64,
    /// `alpha` times the summed squared latent norms.
    pub regularization: f64,
    pub total: f64,
}

/// Objective graph over inputs `enc` `[B, enc_dim]`, `target` `[B, 1]` and
/// `latents` `[S, D]`; row `b` uses latent `rows[b]`.
pub(crate) struct LossGraph<T: Real> {
    pub graph: Graph<T>,
    pub data: NodeId,
    pub regularization: NodeId,
    pub total: NodeId,
}

pub(crate) fn loss_graph<T: Real>(
    config: &DecoderConfig,
    rows: Arc<[usize]>,
    alpha: f64,
    train_theta: bool,
    train_z: bool,
) -> LossGraph<T> {
    let mut g = Graph::new();
    let enc = g.input("enc");
    let latents = if train_z { g.param(LATENTS) } else { g.input(LATENTS) };
    let z = g.gather_rows(latents, rows);
    let pred = SdfDecoder::build(config, &mut g, enc, z, train_theta);
    let target = g.input("target");
    let target = if config.clamp {
        let d = T::of(config.delta);
        g.clamp(target, -d, d)
    } else {
        target
    };
    let data = g.l1_loss(pred, target);
    let norms = g.sum_squares(latents);
    let regularization = g.scale(norms, T::of(alpha));
    let total = g.add(data, regularization);
    LossGraph {
        graph: g,
        data,
        regularization,
        total,
    }
}

fn targets<T: Real>(samples: &[SdfSample]) -> Tensor<T> {
    Tensor::new(&[samples.len(), 1], samples.iter().map(|s| T::of(s.s)).collect()).expect("sized")
}

fn code_tensor(z: &[f32]) -> Tensor<f32> {
    Tensor::new(&[1, z.len()], z.to_vec()).expect("sized")
}

/// Data and regularization terms of the objective for one shape code.
pub fn loss_terms(decoder: &SdfDecoder, z: &[f32], samples: &[SdfSample], alpha: f64) -> Result<LossTerms> {
    decoder.check_code(z)?;
    if samples.is_empty() {
        return Err(Error::EmptyObservation);
    }
    let lg = loss_graph::<f32>(&decoder.config, vec![0; samples.len()].into(), alpha, false, false);
    let enc = decoder.config.encoding.encode_batch(samples.iter().map(|s| s.x).collect::<Vec<_>>().as_slice());
    let target = targets(samples);
    let code = code_tensor(z);
    let fwd = lg.graph.forward(
        &Feed::new()
            .with_params(&decoder.params)
            .with("enc", &enc)
            .with("target", &target)
            .with(LATENTS, &code),
    )?;
    Ok(LossTerms {
        data: fwd.value(lg.data).item() as f64,
        regularization: fwd.value(lg.regularization).item() as f64,
        total: fwd.value(lg.total).item() as f64,
    })
}

/// Compares the backward pass of the full training objective (decoder
/// weights and every latent row) with central differences in f64. Sample
/// `b` uses latent `rows[b]`.
pub fn check_objective_gradients(
    decoder: &SdfDecoder,
    latents: &Tensor<f64>,
    samples: &[SdfSample],
    rows: &[usize],
    alpha: f64,
    h: f64,
) -> Result<GradCheck> {
    if samples.len() != rows.len() {
        return Err(Error::SizeMismatch(samples.len(), rows.len()));
    }
    let config = &decoder.config;
    let lg = loss_graph::<f64>(config, rows.into(), alpha, true, true);
    let mut inputs = decoder.params.cast::<f64>();
    inputs.insert(LATENTS, latents.clone());
    inputs.insert("enc", config.encoding.encode_batch(&samples.iter().map(|s| s.x).collect::<Vec<_>>()));
    inputs.insert("target", targets(samples));
    Ok(check_gradients(&lg.graph, &inputs, lg.total, h)?)
}

/// Jointly fits the decoder and one latent code per dataset.
pub fn train_decoder(
    decoder: &mut SdfDecoder,
    datasets: &[Vec<SdfSample>],
    cfg: &SdfTrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if datasets.is_empty() || datasets.iter().any(Vec::is_empty) {
        return Err(Error::EmptyDataset);
    }
    let config = decoder.config.clone();
    let dim = config.latent_dim;
    let latent_seed = rng::derive(cfg.seed, "latents");
    let mut codes = Vec::with_capacity(datasets.len() * dim);
    for i in 0..datasets.len() {
        codes.extend(random_code(dim, LATENT_INIT_STD, latent_seed, i as u64)?);
    }
    let mut latents = ParamStore::new();
    latents.insert(LATENTS, Tensor::new(&[datasets.len(), dim], codes)?);

    let samples: Vec<(usize, SdfSample)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(i, d)| d.iter().map(move |s| (i, *s)))
        .collect();
    let enc_dim = config.encoding.dim();
    let all_enc = config
        .encoding
        .encode_batch::<f32>(&samples.iter().map(|(_, s)| s.x).collect::<Vec<_>>());

    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size) as u64;
    let decay = (cfg.decay_every > 0).then(|| StepDecay {
        every: cfg.decay_every as u64 * steps_per_epoch,
        factor: cfg.lr_decay,
    });
    let mut adam_theta = Adam::new(AdamConfig {
        decay,
        ..AdamConfig::with_lr(cfg.lr_theta)
    });
    let mut adam_z = Adam::new(AdamConfig {
        decay,
        ..AdamConfig::with_lr(cfg.lr_z)
    });

    let order_seed = rng::derive(cfg.seed, "order");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(order_seed, epoch as u64));
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut enc = Vec::with_capacity(batch.len() * enc_dim);
            for &i in batch {
                enc.extend_from_slice(all_enc.row(i));
            }
            let enc = Tensor::new(&[batch.len(), enc_dim], enc)?;
            let target = Tensor::new(&[batch.len(), 1], batch.iter().map(|&i| samples[i].1.s as f32).collect())?;
            let rows: Vec<usize> = batch.iter().map(|&i| samples[i].0).collect();
            let lg = loss_graph::<f32>(&config, rows.into(), cfg.alpha, true, true);
            let grads = {
                let fwd = lg.graph.forward(
                    &Feed::new()
                        .with_params(&decoder.params)
                        .with_params(&latents)
                        .with("enc", &enc)
                        .with("target", &target),
                )?;
                sum += fwd.value(lg.total).item() as f64 * batch.len() as f64;
                fwd.backward(lg.total)?
            };
            adam_theta.step(&mut decoder.params, &grads)?;
            adam_z.step(&mut latents, &grads)?;
        }
        let mean = sum / samples.len() as f64;
        log::debug!("decoder epoch {epoch}: loss {mean:.6e}");
        history.push(mean);
    }
    Ok(TrainOutput {
        codes: latents.remove(LATENTS).expect("inserted above"),
        history,
    })
}

/// Runs `steps` full-batch Adam steps on whatever `lg` marks trainable and
/// returns the loss of every iterate plus the index of the best one; `keep`
/// is called whenever a new best iterate appears.
fn descend(
    lg: &LossGraph<f32>,
    trainable: &mut ParamStore<f32>,
    frozen: &ParamStore<f32>,
    enc: &Tensor<f32>,
    target: &Tensor<f32>,
    steps: usize,
    lr: f64,
    mut keep: impl FnMut(&ParamStore<f32>),
) -> Result<(Vec<f64>, f64)> {
    let mut adam = Adam::new(AdamConfig::with_lr(lr));
    let mut history = Vec::with_capacity(steps + 1);
    let mut best = f64::INFINITY;
    for step in 0..=steps {
        let grads = {
            let fwd = lg.graph.forward(
                &Feed::new()
                    .with_params(trainable)
                    .with_params(frozen)
                    .with("enc", enc)
                    .with("target", target),
            )?;
            let loss = fwd.value(lg.total).item() as f64;
            history.push(loss);
            if loss < best {
                best = loss;
                keep(trainable);
            }
            if step == steps {
                break;
            }
            fwd.backward(lg.total)?
        };
        adam.step(trainable, &grads)?;
    }
    Ok((history, best))
}

/// Optimizes a fresh `N(0, 0.01²)` code against `observation` with the
/// decoder frozen; returns the lowest-loss iterate.
pub fn infer_latent(decoder: &SdfDecoder, observation: &[SdfSample], cfg: &InferConfig) -> Result<Inference> {
    if observation.is_empty() {
        return Err(Error::EmptyObservation);
    }
    let obs = canonical_order(observation);
    let enc = decoder
        .config
        .encoding
        .encode_batch::<f32>(&obs.iter().map(|s| s.x).collect::<Vec<_>>());
    let target = targets::<f32>(&obs);
    let lg = loss_graph::<f32>(&decoder.config, vec![0; obs.len()].into(), cfg.alpha, false, true);
    let mut z = ParamStore::new();
    z.insert(
        LATENTS,
        code_tensor(&random_code(decoder.config.latent_dim, LATENT_INIT_STD, cfg.seed, 0)?),
    );
    let mut best_z = Vec::new();
    let (history, best_loss) = descend(&lg, &mut z, &decoder.params, &enc, &target, cfg.steps, cfg.lr, |p| {
        best_z = p.get(LATENTS).expect("fed").data().to_vec();
    })?;
    Ok(Inference {
        z: best_z,
        best_loss,
        history,
    })
}

/// Fine-tunes the decoder weights on `observation` with `z` frozen. The
/// returned decoder is the lowest-loss iterate, the unmodified input
/// included, so the observation loss never increases.
pub fn finetune_pivotal(
    decoder: &SdfDecoder,
    z: &[f32],
    observation: &[SdfSample],
    cfg: &FinetuneConfig,
) -> Result<(SdfDecoder, Vec<f64>)> {
    decoder.check_code(z)?;
    if observation.is_empty() {
        return Err(Error::EmptyObservation);
    }
    let obs = canonical_order(observation);
    let enc = decoder
        .config
        .encoding
        .encode_batch::<f32>(&obs.iter().map(|s| s.x).collect::<Vec<_>>());
    let target = targets::<f32>(&obs);
    let lg = loss_graph::<f32>(&decoder.config, vec![0; obs.len()].into(), cfg.alpha, true, false);
    let mut frozen = ParamStore::new();
    frozen.insert(LATENTS, code_tensor(z));
    let mut params = decoder.params.clone();
    let mut best = decoder.params.clone();
    let (history, _) = descend(&lg, &mut params, &frozen, &enc, &target, cfg.steps, cfg.lr, |p| {
        best = p.clone();
    })?;
    Ok((
        SdfDecoder {
            config: decoder.config.clone(),
            params: best,
        },
        history,
    ))
}
