//! Tactile image → deformed 5×5 local chart, and the augmented point clouds
//! sampled from predicted charts.

mod train;

pub use train::{chart_chamfer, train_chart, ChamferToTarget, ChartTrainConfig};

use std::fs;
use std::path::Path;

use autodiff::{Feed, Graph, NodeId, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::sampling::TriangleSampler;
use crate::geometry::{Pose, TriangleMesh, Vec3};
use crate::nn;
use crate::rng;
use crate::touch::{TactileImage, TouchRecord};

/// Vertices per chart side.
pub const GRID: usize = 5;
pub const CHART_VERTICES: usize = GRID * GRID;

/// Faces of the 5×5 grid, wound so normals point along +z (toward the sensor).
pub fn chart_faces() -> Vec<[u32; 3]> {
    let id = |row: usize, col: usize| (row * GRID + col) as u32;
    let mut faces = Vec::with_capacity(2 * (GRID - 1) * (GRID - 1));
    for row in 0..GRID - 1 {
        for col in 0..GRID - 1 {
            let (a, b) = (id(row, col), id(row, col + 1));
            let (c, d) = (id(row + 1, col + 1), id(row + 1, col));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    faces
}

/// Flat chart at z = 0 spanning `[-r, r]²` in the sensor frame. Vertex
/// `row * 5 + col` sits at column `col` along x and row `row` along y.
pub fn base_chart_vertices(footprint_radius: f64) -> Vec<Vec3> {
    let r = footprint_radius;
    let coord = |i: usize| -r + 2.0 * r * i as f64 / (GRID - 1) as f64;
    (0..CHART_VERTICES)
        .map(|v| Vec3::new(coord(v % GRID), coord(v / GRID), 0.0))
        .collect()
}

pub fn base_chart(footprint_radius: f64) -> TriangleMesh {
    TriangleMesh {
        vertices: base_chart_vertices(footprint_radius),
        faces: chart_faces(),
    }
}

/// Rigidly maps sensor-frame chart vertices to a world-frame mesh.
pub fn chart_to_world(vertices: &[Vec3], pose: &Pose) -> TriangleMesh {
    TriangleMesh {
        vertices: vertices.iter().map(|v| pose.transform_point(v)).collect(),
        faces: chart_faces(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartConfig {
    /// Side of the downsampled input image.
    pub input_resolution: usize,
    pub hidden: Vec<usize>,
    pub footprint_radius: f64,
    /// Displacements are `tanh(·) · displacement_scale · footprint_radius`.
    pub displacement_scale: f64,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self {
            input_resolution: 32,
            hidden: vec![256, 256],
            footprint_radius: 0.15,
            displacement_scale: 2.0,
        }
    }
}

impl ChartConfig {
    pub fn max_displacement(&self) -> f64 {
        self.displacement_scale * self.footprint_radius
    }
}

/// Dense image encoder with a displacement head for the 25 chart vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartModel {
    pub config: ChartConfig,
    pub params: ParamStore<f32>,
}

fn layer_name(i: usize, layers: usize) -> String {
    if i + 1 == layers {
        "head".to_string()
    } else {
        format!("enc{i}")
    }
}

/// Bilinear resampling of a square image to `res × res`, sampling at the
/// target pixel centers.
pub fn downsample(image: &TactileImage, res: usize) -> Result<Vec<f32>> {
    let n = image.size;
    if image.depth.len() != n * n || n == 0 || res == 0 {
        return Err(Error::SizeMismatch(n * n, image.depth.len()));
    }
    let scale = n as f64 / res as f64;
    let coord = |i: usize| {
        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = (s.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(res * res);
    for row in 0..res {
        let (r0, r1, fr) = coord(row);
        for col in 0..res {
            let (c0, c1, fc) = coord(col);
            let v = |r: usize, c: usize| image.at(r, c) as f64;
            let top = v(r0, c0) * (1.0 - fc) + v(r0, c1) * fc;
            let bottom = v(r1, c0) * (1.0 - fc) + v(r1, c1) * fc;
            out.push((top * (1.0 - fr) + bottom * fr) as f32);
        }
    }
    Ok(out)
}

impl ChartModel {
    /// He-initialized encoder; the head starts at zero so the initial
    /// prediction is the flat base chart.
    pub fn new(config: ChartConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0);
        let mut params = ParamStore::new();
        let mut widths = vec![config.input_resolution * config.input_resolution];
        widths.extend(&config.hidden);
        widths.push(3 * CHART_VERTICES);
        let layers = widths.len() - 1;
        for i in 0..layers {
            let name = layer_name(i, layers);
            nn::init_dense(&mut params, &name, widths[i], widths[i + 1], &mut rng);
            if i + 1 == layers {
                let w = params.get_mut(&format!("{name}.w")).expect("just inserted");
                w.data_mut().fill(0.0);
            }
        }
        Self { config, params }
    }

    pub fn input_width(&self) -> usize {
        self.config.input_resolution * self.config.input_resolution
    }

    /// Stacks downsampled images into a `[B, res²]` input tensor.
    pub fn encode_images(&self, images: &[&TactileImage]) -> Result<Tensor<f32>> {
        let res = self.config.input_resolution;
        let mut data = Vec::with_capacity(images.len() * res * res);
        for img in images {
            if img.size < res {
                return Err(autodiff::AutodiffError::ShapeMismatch {
                    op: "predict_chart",
                    detail: format!("image size {} below model input {res}", img.size),
                }
                .into());
            }
            data.extend(downsample(img, res)?);
        }
        Ok(Tensor::new(&[images.len(), res * res], data)?)
    }

    /// Adds the encoder and head to `g`; returns the `[B, 75]` displacements.
    pub fn build(&self, g: &mut Graph<f32>, x: NodeId) -> NodeId {
        let layers = self.config.hidden.len() + 1;
        let mut h = x;
        for i in 0..layers {
            h = nn::dense(g, h, &layer_name(i, layers), true);
            h = if i + 1 == layers { g.tanh(h) } else { g.relu(h) };
        }
        g.scale(h, self.config.max_displacement() as f32)
    }

    /// Sensor-frame chart vertices for each image.
    pub fn predict_batch(&self, images: &[&TactileImage]) -> Result<Vec<Vec<Vec3>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.encode_images(images)?;
        let mut g = Graph::new();
        let xi = g.input("x");
        let d = self.build(&mut g, xi);
        let fwd = g.forward(&Feed::new().with_params(&self.params).with("x", &x))?;
        let disp = fwd.value(d);
        let base = base_chart_vertices(self.config.footprint_radius);
        Ok((0..images.len())
            .map(|b| {
                let row = disp.row(b);
                base.iter()
                    .enumerate()
                    .map(|(v, p)| {
                        p + Vec3::new(row[3 * v] as f64, row[3 * v + 1] as f64, row[3 * v + 2] as f64)
                    })
                    .collect()
            })
            .collect())
    }

    pub fn predict(&self, image: &TactileImage) -> Result<Vec<Vec3>> {
        Ok(self.predict_batch(&[image])?.remove(0))
    }

    /// Writes parameters to `path` and the configuration to `path.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        autodiff::write_params(path, &self.params)?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.config).map_err(json_err)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config: ChartConfig =
            serde_json::from_str(&fs::read_to_string(sidecar_path(path))?).map_err(json_err)?;
        let params = autodiff::read_params(path)?;
        let expected = Self::new(config.clone(), 0);
        for (name, t) in expected.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(Error::Format(format!("checkpoint tensor {name} missing or misshapen"))),
            }
        }
        if params.len() != expected.params.len() {
            return Err(Error::Format("checkpoint has unexpected tensors".into()));
        }
        Ok(Self { config, params })
    }
}

pub(crate) fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub(crate) fn json_err(e: serde_json::Error) -> Error {
    Error::Format(format!("sidecar: {e}"))
}

/// Points with signed-distance labels: surface samples carry 0, offset
/// samples carry ±eps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentedCloud {
    pub points: Vec<Vec3>,
    pub labels: Vec<f64>,
}

impl AugmentedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: &AugmentedCloud) {
        self.points.extend_from_slice(&other.points);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn surface_points(&self) -> impl Iterator<Item = &Vec3> {
        self.points
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == 0.0)
            .map(|(p, _)| p)
    }
}

/// `n` area-weighted samples on the chart labeled 0, followed by a
/// `(+eps, -eps)` pair offset along the face normal for each of the first
/// `m_extra` samples (cycling if `m_extra > n`). Chart normals face the
/// sensor, so `+eps` points lie on the sensor side.
pub fn sample_chart_cloud(
    chart: &TriangleMesh,
    n: usize,
    m_extra: usize,
    eps: f64,
    seed: u64,
) -> Result<AugmentedCloud> {
    let triangles: Vec<[Vec3; 3]> = chart.triangles().collect();
    let sampler = TriangleSampler::new(&triangles)
        .ok_or_else(|| Error::DegenerateMesh("chart has zero area".into()))?;
    let mut rng = rng::stream(seed, 0);
    let mut points = Vec::with_capacity(n + 2 * m_extra);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let (f, p) = sampler.sample(&mut rng);
        points.push(p);
        normals.push(chart.face_normal(f).expect("sampled faces have area"));
    }
    let mut labels = vec![0.0; n];
    if n > 0 {
        for i in 0..m_extra {
            let (p, nrm) = (points[i % n], normals[i % n]);
            points.push(p + nrm * eps);
            labels.push(eps);
            points.push(p - nrm * eps);
            labels.push(-eps);
        }
    }
    Ok(AugmentedCloud { points, labels })
}

/// Sizes of the per-touch augmented clouds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudConfig {
    pub n: usize,
    pub m_extra: usize,
    pub eps: f64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            n: 128,
            m_extra: 64,
            eps: 0.01,
        }
    }
}

/// Predicts a chart per touch, moves it to world coordinates and unions
/// the augmented clouds. Touch `i` samples with stream `i` of `seed`.
pub fn chart_observation(
    records: &[TouchRecord],
    model: &ChartModel,
    cfg: &CloudConfig,
    seed: u64,
) -> Result<AugmentedCloud> {
    let first = records.first().ok_or(Error::EmptyObservation)?;
    if let Some(other) = records.iter().find(|r| r.shape_id != first.shape_id) {
        return Err(Error::MixedShapes(first.shape_id, other.shape_id));
    }
    let images: Vec<&TactileImage> = records.iter().map(|r| &r.image).collect();
    let charts = model.predict_batch(&images)?;
    let mut out = AugmentedCloud::default();
    for (i, (rec, chart)) in records.iter().zip(&charts).enumerate() {
        let mesh = chart_to_world(chart, &rec.pose);
        out.extend(&sample_chart_cloud(
            &mesh,
            cfg.n,
            cfg.m_extra,
            cfg.eps,
            rng::derive_index(seed, i as u64),
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ChartConfig {
        ChartConfig {
            input_resolution: 8,
            hidden: vec![16],
            ..ChartConfig::default()
        }
    }

    fn image(size: usize, f: impl Fn(usize, usize) -> f32) -> TactileImage {
        TactileImage {
            size,
            depth: (0..size * size).map(|i| f(i / size, i % size)).collect(),
        }
    }

    #[test]
    fn base_chart_layout() {
        let m = base_chart(0.15);
        assert_eq!(m.vertices.len(), 25);
        assert_eq!(m.faces.len(), 32);
        for f in 0..m.faces.len() {
            assert_eq!(m.face_normal(f).unwrap(), Vec3::z());
        }
        let xs: Vec<f64> = m.vertices.iter().map(|v| v.x).collect();
        assert_eq!(xs[0], -0.15);
        assert_eq!(xs[4], 0.15);
        assert!((crate::geometry::surface_area(&m) - 0.09).abs() < 1e-12);
    }

    #[test]
    fn downsampling_halves_by_averaging_pairs() {
        let img = image(8, |r, c| (r * 8 + c) as f32);
        let d = downsample(&img, 4).unwrap();
        assert_eq!(d[0], (0.0 + 1.0 + 8.0 + 9.0) / 4.0);
        assert_eq!(d.len(), 16);
        let same = downsample(&img, 8).unwrap();
        assert_eq!(same, img.depth);
    }

    #[test]
    fn fresh_model_predicts_base_chart() {
        let model = ChartModel::new(small_config(), 3);
        let img = image(16, |r, c| ((r + c) % 3) as f32 / 2.0);
        assert_eq!(model.predict(&img).unwrap(), base_chart_vertices(0.15));
    }

    #[test]
    fn displacements_are_bounded() {
        let mut model = ChartModel::new(small_config(), 3);
        for (_, t) in model.params.iter() {
            assert!(t.all_finite());
        }
        let w = model.params.get_mut("head.w").unwrap();
        w.data_mut().iter_mut().for_each(|v| *v = 50.0);
        let base = base_chart_vertices(0.15);
        for img in [image(16, |_, _| 0.0), image(16, |_, _| 1.0)] {
            let v = model.predict(&img).unwrap();
            for (p, b) in v.iter().zip(&base) {
                assert!(p.iter().all(|c| c.is_finite()));
                assert!((p - b).amax() <= model.config.max_displacement() + 1e-6);
            }
        }
    }

    #[test]
    fn undersized_image_is_a_shape_mismatch() {
        let model = ChartModel::new(small_config(), 3);
        assert!(matches!(
            model.predict(&image(4, |_, _| 0.0)),
            Err(Error::Autodiff(autodiff::AutodiffError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn chart_to_world_is_rigid() {
        let verts = base_chart_vertices(0.15);
        assert_eq!(chart_to_world(&verts, &Pose::identity()).vertices, verts);
        let t = Vec3::new(0.3, -1.0, 2.0);
        let moved = chart_to_world(&verts, &Pose::translation(t));
        for (a, b) in moved.vertices.iter().zip(&verts) {
            assert!((a - b - t).norm() < 1e-12);
        }
        let pose = Pose::looking_along(&Vec3::new(0.3, 0.5, -0.8), Vec3::new(1.0, 2.0, 3.0));
        let there = chart_to_world(&verts, &pose);
        let back = chart_to_world(&there.vertices, &pose.inverse());
        for (a, b) in back.vertices.iter().zip(&verts) {
            assert!((a - b).norm() < 1e-9);
        }
        for i in 0..25 {
            for j in 0..25 {
                let d0 = (verts[i] - verts[j]).norm();
                let d1 = (there.vertices[i] - there.vertices[j]).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn flat_chart_offsets_are_exact() {
        let chart = base_chart(0.15);
        let c = sample_chart_cloud(&chart, 50, 20, 0.01, 1).unwrap();
        assert_eq!(c.len(), 90);
        let mut counts = (0, 0, 0);
        for (p, &l) in c.points.iter().zip(&c.labels) {
            assert_eq!(p.z, l);
            match l {
                0.0 => counts.0 += 1,
                l if l > 0.0 => counts.1 += 1,
                _ => counts.2 += 1,
            }
        }
        assert_eq!(counts, (50, 20, 20));
        let plain = sample_chart_cloud(&chart, 30, 0, 0.01, 1).unwrap();
        assert!(plain.labels.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = ChartModel::new(small_config(), 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chart.tprm");
        model.save(&path).unwrap();
        assert!(dir.path().join("chart.tprm.json").exists());
        assert_eq!(ChartModel::load(&path).unwrap(), model);
    }
}
