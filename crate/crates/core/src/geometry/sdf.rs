use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::sampling::TriangleSampler;
use super::{MeshIndex, Vec3};
use crate::binio;
use crate::error::{Error, Result};
use crate::rng;

/// A point and its signed distance (negative inside).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfSample {
    pub x: Vec3,
    pub s: f64,
}

/// Half-width of the cube uniform samples are drawn from.
pub const UNIFORM_HALF_WIDTH: f64 = 1.1;

/// Exact unsigned distance with the sign decided by ray-parity vote.
pub fn signed_distance(index: &MeshIndex, x: &Vec3) -> Result<SdfSample> {
    if !index.is_watertight() {
        return Err(Error::NonWatertight);
    }
    let (_, d, _) = index.closest_point(x).ok_or(Error::NonWatertight)?;
    let s = if d > 0.0 && index.is_inside(x) { -d } else { d };
    Ok(SdfSample { x: *x, s })
}

/// Near-surface and uniform samples. Each of the `n_surface` surface points is
/// perturbed twice by `N(0, sigma_near²)` per axis; `n_uniform` points are drawn
/// from `[-1.1, 1.1]³`. Sample `i` draws from its own stream of `seed`.
pub fn generate_sdf_dataset(
    index: &MeshIndex,
    n_surface: usize,
    n_uniform: usize,
    sigma_near: f64,
    seed: u64,
) -> Result<Vec<SdfSample>> {
    if !index.is_watertight() {
        return Err(Error::NonWatertight);
    }
    let triangles: Vec<[Vec3; 3]> = index.mesh().triangles().collect();
    let sampler = TriangleSampler::new(&triangles)
        .ok_or_else(|| Error::DegenerateMesh("mesh has zero surface area".into()))?;
    let noise = Normal::new(0.0, sigma_near.max(0.0))
        .map_err(|e| Error::Config(format!("sigma_near: {e}")))?;

    let mut out = Vec::with_capacity(2 * n_surface + n_uniform);
    for i in 0..n_surface {
        let mut rng = rng::stream(seed, i as u64);
        let (_, p) = sampler.sample(&mut rng);
        for _ in 0..2 {
            let x = p + Vec3::from_fn(|_, _| noise.sample(&mut rng));
            out.push(signed_distance(index, &x)?);
        }
    }
    for j in 0..n_uniform {
        let mut rng = rng::stream(seed, (n_surface + j) as u64);
        let x = Vec3::from_fn(|_, _| rng.random_range(-UNIFORM_HALF_WIDTH..UNIFORM_HALF_WIDTH));
        out.push(signed_distance(index, &x)?);
    }
    Ok(out)
}

const MAGIC: &[u8; 4] = b"TSDF";
const VERSION: u32 = 1;

pub fn write_sdf_dataset(samples: &[SdfSample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    binio::write_u32(&mut w, VERSION)?;
    binio::write_u64(&mut w, samples.len() as u64)?;
    for s in samples {
        for v in [s.x.x, s.x.y, s.x.z, s.s] {
            binio::write_f32(&mut w, v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_sdf_dataset(path: impl AsRef<Path>) -> Result<Vec<SdfSample>> {
    let mut r = BufReader::new(File::open(path)?);
    binio::expect_header(&mut r, MAGIC, VERSION)?;
    let count = binio::read_u64(&mut r)?;
    let mut out = Vec::with_capacity(binio::capacity_hint(count));
    for _ in 0..count {
        let mut v = [0.0f64; 4];
        for slot in &mut v {
            *slot = binio::read_f32(&mut r)? as f64;
        }
        out.push(SdfSample {
            x: Vec3::new(v[0], v[1], v[2]),
            s: v[3],
        });
    }
    if r.read(&mut [0u8])? != 0 {
        return Err(Error::Format("trailing bytes after last sample".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{cuboid, icosphere};
    use crate::geometry::TriangleMesh;

    fn box_sdf(p: &Vec3, half: f64) -> f64 {
        let q = p.abs() - Vec3::repeat(half);
        q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
    }

    #[test]
    fn sphere_inside_and_outside() {
        let idx = MeshIndex::new(&icosphere(4));
        let inside = signed_distance(&idx, &Vec3::new(0.5, 0.0, 0.0)).unwrap();
        assert!((inside.s + 0.5).abs() < 5e-3, "{}", inside.s);
        let outside = signed_distance(&idx, &Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((outside.s - 1.0).abs() < 5e-3);
    }

    #[test]
    fn box_matches_analytic_sdf() {
        let idx = MeshIndex::new(&cuboid(Vec3::repeat(-0.5), Vec3::repeat(0.5)));
        let mut rng = rng::stream(11, 0);
        for _ in 0..1000 {
            let x = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let s = signed_distance(&idx, &x).unwrap().s;
            assert!((s - box_sdf(&x, 0.5)).abs() < 1e-6, "{x:?}: {s}");
        }
    }

    #[test]
    fn open_mesh_is_rejected() {
        let mut m = icosphere(1);
        m.faces.pop();
        let idx = MeshIndex::new(&m);
        assert!(matches!(
            signed_distance(&idx, &Vec3::zeros()),
            Err(Error::NonWatertight)
        ));
        assert!(matches!(
            generate_sdf_dataset(&idx, 1, 1, 0.01, 0),
            Err(Error::NonWatertight)
        ));
    }

    #[test]
    fn zero_noise_samples_sit_on_surface() {
        let idx = MeshIndex::new(&icosphere(3));
        let data = generate_sdf_dataset(&idx, 200, 0, 0.0, 5).unwrap();
        assert_eq!(data.len(), 400);
        assert!(data.iter().all(|s| s.s.abs() < 1e-12));
    }

    #[test]
    fn uniform_inside_fraction_matches_volume_ratio() {
        let idx = MeshIndex::new(&icosphere(4));
        let n = 4000;
        let data = generate_sdf_dataset(&idx, 0, n, 0.0, 8).unwrap();
        let inside = data.iter().filter(|s| s.s < 0.0).count() as f64;
        // Oracle uses the faceted volume so faceting does not bias the ratio.
        let p = TriangleMesh::volume(idx.mesh()) / 2.2f64.powi(3);
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((inside - n as f64 * p).abs() < 3.0 * sigma, "{inside} vs {}", n as f64 * p);
        assert!((p - 0.393).abs() < 0.01);
    }

    #[test]
    fn dataset_file_is_deterministic() {
        let idx = MeshIndex::new(&icosphere(2));
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.tsdf"), dir.path().join("b.tsdf"));
        write_sdf_dataset(&generate_sdf_dataset(&idx, 50, 50, 0.05, 3).unwrap(), &a).unwrap();
        write_sdf_dataset(&generate_sdf_dataset(&idx, 50, 50, 0.05, 3).unwrap(), &b).unwrap();
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(bytes, std::fs::read(&b).unwrap());
        assert_eq!(&bytes[..4], b"TSDF");
        assert_eq!(bytes.len(), 16 + 150 * 16);
        let back = read_sdf_dataset(&a).unwrap();
        assert_eq!(back.len(), 150);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsdf");
        let idx = MeshIndex::new(&icosphere(1));
        write_sdf_dataset(&generate_sdf_dataset(&idx, 5, 0, 0.05, 3).unwrap(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_sdf_dataset(&p), Err(Error::Format(_))));
    }
}
