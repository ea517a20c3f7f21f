//! Latent-conditioned signed-distance decoder: Fourier-feature encoding of
//! the query point, concatenated with a shape code and mapped to a scalar by
//! a ReLU MLP.

mod train;

pub use train::{
    check_objective_gradients, finetune_pivotal, infer_latent, loss_terms, train_decoder, FinetuneConfig, InferConfig,
    Inference, LossTerms, SdfTrainConfig, TrainOutput,
};

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use autodiff::{Feed, Graph, NodeId, ParamStore, Real, Tensor};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::chart::{json_err, sidecar_path};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, SdfSample, TriangleMesh, Vec3};
use crate::isosurface::{marching_cubes, sample_grid_batched};
use crate::nn;
use crate::rng;

/// Sinusoidal features of a 3D point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosEnc {
    /// Frequencies per axis, `2^k π` for `k < frequencies`.
    pub frequencies: usize,
    pub include_input: bool,
}

impl Default for PosEnc {
    fn default() -> Self {
        Self {
            frequencies: 6,
            include_input: true,
        }
    }
}

impl PosEnc {
    pub fn dim(&self) -> usize {
        3 * (2 * self.frequencies + usize::from(self.include_input))
    }

    /// Appends the features of `x`: the raw coordinates (when included), then
    /// `sin, cos` pairs per axis in increasing frequency.
    pub fn encode_into(&self, x: &Vec3, out: &mut Vec<f64>) {
        if self.include_input {
            out.extend(x.iter());
        }
        for v in x.iter() {
            // Each frequency doubles the last: one sin/cos call per axis.
            let (mut sin, mut cos) = (PI * v).sin_cos();
            for _ in 0..self.frequencies {
                out.push(sin);
                out.push(cos);
                (sin, cos) = (2.0 * sin * cos, (cos - sin) * (cos + sin));
            }
        }
    }

    pub fn encode(&self, x: &Vec3) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.encode_into(x, &mut out);
        out
    }

    /// `[N, dim]` feature matrix.
    pub fn encode_batch<T: Real>(&self, xs: &[Vec3]) -> Tensor<T> {
        let mut buf = Vec::with_capacity(self.dim());
        let mut data = Vec::with_capacity(xs.len() * self.dim());
        for x in xs {
            buf.clear();
            self.encode_into(x, &mut buf);
            data.extend(buf.iter().map(|&v| T::of(v)));
        }
        Tensor::new(&[xs.len(), self.dim()], data).expect("sized above")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub latent_dim: usize,
    pub encoding: PosEnc,
    pub hidden: Vec<usize>,
    /// Hidden layer (0-based) whose input also receives `[γ(x), z]`.
    pub skip_layer: Option<usize>,
    /// Clamp bound on predictions and training targets.
    pub delta: f64,
    pub clamp: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            encoding: PosEnc::default(),
            hidden: vec![128; 4],
            skip_layer: Some(2),
            delta: 0.1,
            clamp: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("decoder needs a latent and non-empty hidden layers".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if let Some(s) = self.skip_layer {
            if s == 0 || s >= self.hidden.len() {
                return Err(Error::Config(format!("skip layer {s} outside 1..{}", self.hidden.len())));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.encoding.dim() + self.latent_dim
    }

    /// Clamps a target or prediction the way the loss sees it.
    pub fn clamp_value(&self, s: f64) -> f64 {
        if self.clamp {
            s.clamp(-self.delta, self.delta)
        } else {
            s
        }
    }
}

/// Points per forward pass when decoding large batches.
const CHUNK: usize = 1024;

/// Decoder weights. Latent codes live outside, in a [`LatentTable`] or as a
/// single inferred code.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfDecoder {
    pub config: DecoderConfig,
    pub params: ParamStore<f32>,
}

impl SdfDecoder {
    pub fn new(config: DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, 0);
        let mut params = ParamStore::new();
        let input = config.input_width();
        let mut prev = input;
        for (i, &w) in config.hidden.iter().enumerate() {
            let fan_in = if config.skip_layer == Some(i) { prev + input } else { prev };
            nn::init_dense(&mut params, &format!("l{i}"), fan_in, w, &mut rng);
            prev = w;
        }
        nn::init_dense(&mut params, "out", prev, 1, &mut rng);
        // Start near a constant field so early updates are dominated by data.
        for v in params.get_mut("out.w").expect("just inserted").data_mut() {
            *v *= 0.01;
        }
        Ok(Self { config, params })
    }

    /// Adds the network to `g`. `enc` is `[B, enc_dim]`, `z` is `[B, D]`;
    /// returns the `[B, 1]` (clamped) prediction.
    pub(crate) fn build<T: Real>(
        config: &DecoderConfig,
        g: &mut Graph<T>,
        enc: NodeId,
        z: NodeId,
        trainable: bool,
    ) -> NodeId {
        let input = g.concat(enc, z);
        let mut h = input;
        for i in 0..config.hidden.len() {
            if config.skip_layer == Some(i) {
                h = g.concat(h, input);
            }
            h = nn::dense(g, h, &format!("l{i}"), trainable);
            h = g.relu(h);
        }
        let out = nn::dense(g, h, "out", trainable);
        if config.clamp {
            let d = T::of(config.delta);
            g.clamp(out, -d, d)
        } else {
            out
        }
    }

    fn check_code(&self, z: &[f32]) -> Result<()> {
        if z.len() != self.config.latent_dim {
            return Err(autodiff::AutodiffError::ShapeMismatch {
                op: "decode",
                detail: format!("latent has {} entries, model expects {}", z.len(), self.config.latent_dim),
            }
            .into());
        }
        Ok(())
    }

    /// Predicted signed distance at each point for shape code `z`.
    pub fn decode_batch(&self, z: &[f32], xs: &[Vec3]) -> Result<Vec<f64>> {
        self.check_code(z)?;
        let code = Tensor::new(&[1, z.len()], z.to_vec())?;
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(CHUNK) {
            let mut g = Graph::new();
            let enc = g.input("enc");
            let zi = g.input("z");
            let rows = g.gather_rows(zi, vec![0; chunk.len()]);
            let y = Self::build(&self.config, &mut g, enc, rows, false);
            let e = self.config.encoding.encode_batch(chunk);
            let fwd = g.forward(&Feed::new().with_params(&self.params).with("enc", &e).with("z", &code))?;
            out.extend(fwd.value(y).data().iter().map(|&v| v as f64));
        }
        Ok(out)
    }

    pub fn decode(&self, z: &[f32], x: &Vec3) -> Result<f64> {
        Ok(self.decode_batch(z, std::slice::from_ref(x))?[0])
    }

    /// The field `x ↦ f(x, z)` for grid evaluation.
    pub fn field<'a>(&'a self, z: &'a [f32]) -> Result<SdfField<'a>> {
        self.check_code(z)?;
        Ok(SdfField { decoder: self, z })
    }
}

/// A decoder paired with one shape code.
#[derive(Clone, Copy, Debug)]
pub struct SdfField<'a> {
    decoder: &'a SdfDecoder,
    z: &'a [f32],
}

impl SdfField<'_> {
    pub fn eval(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        self.decoder.decode_batch(self.z, xs)
    }

    /// Zero level set on a `resolution³` lattice over `bounds`.
    pub fn extract_mesh(&self, bounds: Aabb, resolution: usize) -> Result<TriangleMesh> {
        let grid = sample_grid_batched(|pts| self.eval(pts), bounds, [resolution; 3])?;
        marching_cubes(&grid, 0.0)
    }
}

/// `N(0, std²)` entries from stream `index` of `seed`.
pub(crate) fn random_code(dim: usize, std: f64, seed: u64, index: u64) -> Result<Vec<f32>> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("latent init: {e}")))?;
    let mut rng = rng::stream(seed, index);
    Ok((0..dim).map(|_| normal.sample(&mut rng) as f32).collect())
}

/// Per-shape codes, row `i` belonging to `shape_ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    pub shape_ids: Vec<u64>,
    /// `[S, D]`.
    pub codes: Tensor<f32>,
}

impl LatentTable {
    pub fn len(&self) -> usize {
        self.shape_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn code(&self, row: usize) -> &[f32] {
        self.codes.row(row)
    }

    pub fn find(&self, shape_id: u64) -> Option<&[f32]> {
        self.shape_ids.iter().position(|&s| s == shape_id).map(|r| self.code(r))
    }
}

/// How a corpus shape was mapped into the unit ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeNormalization {
    pub shape_id: u64,
    pub scale: f64,
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    decoder: DecoderConfig,
    alpha: f64,
    shapes: Vec<ShapeNormalization>,
}

/// Everything produced by decoder training.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderCheckpoint {
    pub decoder: SdfDecoder,
    pub latents: LatentTable,
    pub alpha: f64,
    /// One entry per latent row, in the same order.
    pub shapes: Vec<ShapeNormalization>,
}

const LATENT_TENSOR: &str = "latents";

impl DecoderCheckpoint {
    /// Writes weights and latents to `path` and the configuration, α and
    /// per-shape normalizations to `path.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.shapes.len() != self.latents.len()
            || self.shapes.iter().zip(&self.latents.shape_ids).any(|(s, &id)| s.shape_id != id)
        {
            return Err(Error::Format("shape list does not match latent rows".into()));
        }
        let mut params = self.decoder.params.clone();
        params.insert(LATENT_TENSOR, self.latents.codes.clone());
        autodiff::write_params(path, &params)?;
        let sidecar = Sidecar {
            decoder: self.decoder.config.clone(),
            alpha: self.alpha,
            shapes: self.shapes.clone(),
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar).map_err(json_err)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: Sidecar =
            serde_json::from_str(&fs::read_to_string(sidecar_path(path))?).map_err(json_err)?;
        let mut params = autodiff::read_params(path)?;
        let codes = params
            .remove(LATENT_TENSOR)
            .ok_or_else(|| Error::Format("checkpoint has no latent table".into()))?;
        let expected = SdfDecoder::new(sidecar.decoder.clone(), 0)?;
        if params.len() != expected.params.len()
            || expected
                .params
                .iter()
                .any(|(name, t)| params.get(name).map(|p| p.shape()) != Some(t.shape()))
        {
            return Err(Error::Format("decoder tensors missing or misshapen".into()));
        }
        if codes.shape() != [sidecar.shapes.len(), sidecar.decoder.latent_dim] {
            return Err(Error::Format(format!("latent table has shape {:?}", codes.shape())));
        }
        Ok(Self {
            decoder: SdfDecoder {
                config: sidecar.decoder,
                params,
            },
            latents: LatentTable {
                shape_ids: sidecar.shapes.iter().map(|s| s.shape_id).collect(),
                codes,
            },
            alpha: sidecar.alpha,
            shapes: sidecar.shapes,
        })
    }
}

/// Samples sorted by coordinates then value, so results never depend on the
/// order observations were gathered in.
pub(crate) fn canonical_order(samples: &[SdfSample]) -> Vec<SdfSample> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| {
        a.x.x
            .total_cmp(&b.x.x)
            .then(a.x.y.total_cmp(&b.x.y))
            .then(a.x.z.total_cmp(&b.x.z))
            .then(a.s.total_cmp(&b.s))
    });
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small() -> DecoderConfig {
        DecoderConfig {
            latent_dim: 4,
            hidden: vec![16, 16, 16],
            ..DecoderConfig::default()
        }
    }

    #[test]
    fn encoding_at_origin_and_width() {
        let enc = PosEnc::default();
        assert_eq!(enc.dim(), 39);
        let f = enc.encode(&Vec3::zeros());
        assert_eq!(f.len(), 39);
        assert!(f[..3].iter().all(|&v| v == 0.0));
        for pair in f[3..].chunks(2) {
            assert_eq!(pair, [0.0, 1.0]);
        }
        let no_input = PosEnc {
            frequencies: 2,
            include_input: false,
        };
        assert_eq!(no_input.dim(), 12);
    }

    #[test]
    fn features_match_direct_evaluation() {
        let enc = PosEnc::default();
        let x = Vec3::new(0.913, -0.377, 0.5);
        let f = enc.encode(&x);
        for (axis, v) in x.iter().enumerate() {
            for k in 0..6 {
                let a = (1u64 << k) as f64 * PI * v;
                let i = 3 + axis * 12 + 2 * k;
                assert!((f[i] - a.sin()).abs() < 1e-12);
                assert!((f[i + 1] - a.cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lowest_frequency_has_period_two() {
        let enc = PosEnc {
            frequencies: 3,
            include_input: false,
        };
        let a = enc.encode(&Vec3::new(0.3, -0.7, 0.1));
        let b = enc.encode(&Vec3::new(2.3, 1.3, 2.1));
        for axis in 0..3 {
            let k0 = axis * 6;
            assert!((a[k0] - b[k0]).abs() < 1e-12);
            assert!((a[k0 + 1] - b[k0 + 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_layer_returns_bias() {
        let mut d = SdfDecoder::new(small(), 3).unwrap();
        d.params.get_mut("out.w").unwrap().data_mut().fill(0.0);
        d.params.get_mut("out.b").unwrap().data_mut()[0] = 0.03;
        let z = vec![0.5; 4];
        let xs: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64 * 0.1, -0.2, 0.4)).collect();
        for v in d.decode_batch(&z, &xs).unwrap() {
            assert_eq!(v, 0.03f32 as f64);
        }
    }

    #[test]
    fn batched_decode_matches_pointwise_and_is_clamped() {
        let mut d = SdfDecoder::new(small(), 5).unwrap();
        // Large output weights push many predictions into the clamp.
        for v in d.params.get_mut("out.w").unwrap().data_mut() {
            *v *= 500.0;
        }
        let z = [0.1, -0.2, 0.3, 0.0];
        let xs: Vec<Vec3> = (0..50)
            .map(|i| Vec3::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), i as f64 * 0.02 - 0.5))
            .collect();
        let batch = d.decode_batch(&z, &xs).unwrap();
        let mut clamped = 0;
        for (x, b) in xs.iter().zip(&batch) {
            let single = d.decode(&z, x).unwrap();
            assert!((single - b).abs() < 1e-6, "{single} vs {b}");
            assert!(b.abs() <= 0.1 + 1e-7);
            clamped += usize::from(b.abs() >= 0.1 - 1e-7);
        }
        assert!(clamped > 0);
        let f = d.field(&z).unwrap();
        assert_eq!(f.eval(&xs).unwrap(), batch);
        assert_eq!(f.eval(&xs).unwrap(), f.eval(&xs).unwrap());
    }

    #[test]
    fn wrong_code_length_is_a_shape_mismatch() {
        let d = SdfDecoder::new(small(), 0).unwrap();
        assert!(matches!(
            d.decode(&[0.0; 3], &Vec3::zeros()),
            Err(Error::Autodiff(autodiff::AutodiffError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            DecoderConfig {
                delta: 0.0,
                ..small()
            },
            DecoderConfig {
                skip_layer: Some(3),
                ..small()
            },
            DecoderConfig {
                hidden: vec![],
                ..small()
            },
        ] {
            assert!(matches!(SdfDecoder::new(bad, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let decoder = SdfDecoder::new(small(), 9).unwrap();
        let codes = Tensor::new(&[2, 4], random_code(8, 0.01, 1, 0).unwrap()).unwrap();
        let ckpt = DecoderCheckpoint {
            decoder,
            latents: LatentTable {
                shape_ids: vec![7, 11],
                codes,
            },
            alpha: 1e-4,
            shapes: vec![
                ShapeNormalization {
                    shape_id: 7,
                    scale: 0.5,
                    offset: [0.1, 0.2, 0.3],
                },
                ShapeNormalization {
                    shape_id: 11,
                    scale: 2.0,
                    offset: [0.0; 3],
                },
            ],
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("sdf.tprm");
        ckpt.save(&path).unwrap();
        let back = DecoderCheckpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.latents.codes), bits(&ckpt.latents.codes));
        assert_eq!(back.latents.find(11), Some(ckpt.latents.code(1)));
    }

    #[test]
    fn canonical_order_ignores_input_order() {
        let s: Vec<SdfSample> = (0..20)
            .map(|i| SdfSample {
                x: Vec3::new((i * 7 % 5) as f64, (i % 3) as f64, i as f64),
                s: 0.01 * i as f64,
            })
            .collect();
        let mut r = s.clone();
        r.reverse();
        assert_eq!(canonical_order(&s), canonical_order(&r));
    }
}
