use std::sync::Arc;

use autodiff::{Adam, AdamConfig, CustomOp, Feed, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{base_chart_vertices, chart_faces, ChartModel, CHART_VERTICES};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::metrics;
use crate::rng;
use crate::touch::{TactileImage, TouchRecord};

/// Symmetric mean squared nearest-neighbor distance from an `[n, 3]` input
/// to a fixed target cloud.
#[derive(Clone, Debug)]
pub struct ChamferToTarget {
    target: Vec<Vec3>,
}

impl ChamferToTarget {
    pub fn new(target: Vec<Vec3>) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(Self { target })
    }

    fn points(input: &Tensor<f32>) -> Vec<Vec3> {
        input
            .data()
            .chunks(3)
            .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
            .collect()
    }

    fn nearest(from: &[Vec3], to: &[Vec3]) -> Vec<(usize, f64)> {
        from.iter()
            .map(|p| {
                to.iter()
                    .enumerate()
                    .map(|(j, q)| (j, (p - q).norm_squared()))
                    .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
            })
            .collect()
    }
}

impl CustomOp<f32> for ChamferToTarget {
    fn name(&self) -> &'static str {
        "chamfer_to_target"
    }

    fn forward(&self, input: &Tensor<f32>) -> autodiff::Result<Tensor<f32>> {
        let pts = Self::points(input);
        let fwd: f64 = Self::nearest(&pts, &self.target).iter().map(|c| c.1).sum();
        let bwd: f64 = Self::nearest(&self.target, &pts).iter().map(|c| c.1).sum();
        let value = fwd / pts.len() as f64 + bwd / self.target.len() as f64;
        Ok(Tensor::scalar(value as f32))
    }

    fn backward(
        &self,
        input: &Tensor<f32>,
        _output: &Tensor<f32>,
        grad: &Tensor<f32>,
    ) -> autodiff::Result<Tensor<f32>> {
        let g = grad.item() as f64;
        let pts = Self::points(input);
        let (np, nt) = (pts.len() as f64, self.target.len() as f64);
        let mut out = vec![Vec3::zeros(); pts.len()];
        for (i, (j, _)) in Self::nearest(&pts, &self.target).into_iter().enumerate() {
            out[i] += (pts[i] - self.target[j]) * (2.0 / np);
        }
        for (j, (i, _)) in Self::nearest(&self.target, &pts).into_iter().enumerate() {
            out[i] += (pts[i] - self.target[j]) * (2.0 / nt);
        }
        let data = out.iter().flat_map(|v| v.iter().map(|c| (c * g) as f32).collect::<Vec<_>>()).collect();
        Tensor::new(input.shape(), data)
    }

    fn regime(&self, input: &Tensor<f32>) -> Option<Vec<i64>> {
        let pts = Self::points(input);
        let mut r: Vec<i64> = Self::nearest(&pts, &self.target).iter().map(|c| c.0 as i64).collect();
        r.extend(Self::nearest(&self.target, &pts).iter().map(|c| c.0 as i64));
        Some(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Points sampled on each predicted chart for the loss.
    pub sample_points: usize,
    /// Set by the caller; never read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ChartTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            lr: 1e-3,
            sample_points: 128,
            seed: 0,
        }
    }
}

/// Barycentric weights `[n, 25]` of `n` area-weighted samples on the chart
/// with the given vertices.
fn sample_weights(vertices: &[Vec3], n: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let faces = chart_faces();
    let mut cdf = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for f in &faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cdf.push(total);
    }
    let mut w = vec![0.0f32; n * CHART_VERTICES];
    for s in 0..n {
        let target = rng.random::<f64>() * total;
        let f = cdf.partition_point(|&c| c <= target).min(faces.len() - 1);
        let r1 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let bary = [1.0 - r1, r1 * (1.0 - r2), r1 * r2];
        for (k, &v) in faces[f].iter().enumerate() {
            w[s * CHART_VERTICES + v as usize] += bary[k] as f32;
        }
    }
    Tensor::new(&[n, CHART_VERTICES], w).expect("sized above")
}

fn sensor_targets(records: &[TouchRecord]) -> Result<Vec<Vec<Vec3>>> {
    records
        .iter()
        .map(|r| {
            if r.local_cloud.is_empty() {
                return Err(Error::EmptyCloud);
            }
            Ok(r.local_cloud
                .points
                .iter()
                .map(|p| r.pose.inverse_transform_point(p))
                .collect())
        })
        .collect()
}

/// Mean loss over `batch`; also returns gradients when `train` is set.
fn batch_loss(
    model: &ChartModel,
    inputs: &Tensor<f32>,
    targets: &[Vec<Vec3>],
    batch: &[usize],
    sample_points: usize,
    rng: &mut impl Rng,
) -> Result<(f64, autodiff::Gradients<f32>)> {
    let width = model.input_width();
    let x_data: Vec<f32> = batch
        .iter()
        .flat_map(|&i| inputs.row(i).iter().copied())
        .collect();
    let x = Tensor::new(&[batch.len(), width], x_data)?;

    // Current charts, used only to place the samples area-uniformly.
    let mut g = Graph::new();
    let xi = g.input("x");
    let disp = model.build(&mut g, xi);
    let current = g
        .forward(&Feed::new().with_params(&model.params).with("x", &x))?
        .into_value(disp);
    let base = base_chart_vertices(model.config.footprint_radius);
    let base_t = Tensor::new(
        &[CHART_VERTICES, 3],
        base.iter().flat_map(|v| v.iter().map(|&c| c as f32).collect::<Vec<_>>()).collect(),
    )?;

    let mut weights = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        let row = current.row(b);
        let verts: Vec<Vec3> = (0..CHART_VERTICES)
            .map(|v| base[v] + Vec3::new(row[3 * v] as f64, row[3 * v + 1] as f64, row[3 * v + 2] as f64))
            .collect();
        weights.push(sample_weights(&verts, sample_points, rng));
    }

    let mut g = Graph::new();
    let xi = g.input("x");
    let disp = model.build(&mut g, xi);
    let base_node = g.constant(base_t);
    let names: Vec<String> = (0..batch.len()).map(|b| format!("w{b}")).collect();
    let mut total = None;
    for (b, &rec) in batch.iter().enumerate() {
        let row = g.slice_rows(disp, b, 1);
        let d = g.reshape(row, &[CHART_VERTICES, 3]);
        let v = g.add(d, base_node);
        let w = g.input(&names[b]);
        let pts = g.matmul(w, v);
        let op = Arc::new(ChamferToTarget::new(targets[rec].clone())?);
        let loss = g.custom(pts, op);
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss),
        });
    }
    let total = total.ok_or(Error::EmptyDataset)?;
    let loss = g.scale(total, 1.0 / batch.len() as f32);
    let mut feed = Feed::new().with_params(&model.params).with("x", &x);
    for (name, w) in names.iter().zip(&weights) {
        feed.insert(name, w);
    }
    let fwd = g.forward(&feed)?;
    let value = fwd.value(loss).item() as f64;
    Ok((value, fwd.backward(loss)?))
}

/// Minimizes the Chamfer distance between points sampled on each predicted
/// chart and the record's ground-truth contact cloud. Both are compared in
/// the sensor frame, which equals the world-frame distance because poses
/// are rigid. Returns the mean loss of every epoch.
pub fn train_chart(
    model: &mut ChartModel,
    records: &[TouchRecord],
    cfg: &ChartTrainConfig,
) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let images: Vec<&TactileImage> = records.iter().map(|r| &r.image).collect();
    let inputs = model.encode_images(&images)?;
    let targets = sensor_targets(records)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let batch_size = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(batch_size) {
            let (loss, grads) = batch_loss(model, &inputs, &targets, batch, cfg.sample_points, &mut rng)?;
            adam.step(&mut model.params, &grads)?;
            sum += loss * batch.len() as f64;
        }
        let mean = sum / records.len() as f64;
        log::debug!("chart epoch {epoch}: loss {mean:.6e}");
        history.push(mean);
    }
    Ok(history)
}

/// Mean Chamfer distance (world frame) between `n_points` samples of each
/// predicted chart and the record's ground-truth cloud.
pub fn chart_chamfer(model: &ChartModel, records: &[TouchRecord], n_points: usize, seed: u64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let images: Vec<&TactileImage> = records.iter().map(|r| &r.image).collect();
    let charts = model.predict_batch(&images)?;
    let mut sum = 0.0;
    for (i, (rec, chart)) in records.iter().zip(&charts).enumerate() {
        let mesh = super::chart_to_world(chart, &rec.pose);
        let cloud = crate::geometry::sample_surface(&mesh, n_points, rng::derive_index(seed, i as u64))?;
        sum += metrics::chamfer(&cloud.points, &rec.local_cloud.points)?;
    }
    Ok(sum / records.len() as f64)
}
