use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{hex, CorpusConfig};
use crate::error::{Error, Result};
use crate::geometry::primitives::{capsule, cuboid, cylinder, icosphere};
use crate::geometry::{load_watertight_mesh, normalize_mesh, write_obj, Aabb, TriangleMesh, Vec3};
use crate::isosurface::{marching_cubes, sample_grid};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Sphere,
    Box,
    Cylinder,
    Capsule,
    BoxSphereUnion,
    BoxMinusSphere,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Sphere,
        Family::Box,
        Family::Cylinder,
        Family::Capsule,
        Family::BoxSphereUnion,
        Family::BoxMinusSphere,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A generated primitive before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub mesh: TriangleMesh,
    pub params: BTreeMap<String, f64>,
    /// Set when a CSG operation turned out not to change its first operand.
    pub csg_noop: bool,
}

fn box_sdf(half: &Vec3, x: &Vec3) -> f64 {
    let q = x.abs() - half;
    q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
}

/// Extracts the zero level set of `f` on a lattice whose longest side has
/// `cells` cells, padded two cells past `bounds`.
fn tessellate(f: impl Fn(&Vec3) -> f64, bounds: Aabb, cells: usize) -> Result<TriangleMesh> {
    let h = bounds.extent().max() / cells as f64;
    let min = bounds.min - Vec3::repeat(2.0 * h);
    let n = (bounds.extent() / h).map(|e| e.ceil() as usize + 5);
    let max = min + n.map(|k| (k - 1) as f64 * h);
    let grid = sample_grid(f, Aabb { min, max }, [n.x, n.y, n.z])?;
    let mesh = marching_cubes(&grid, 0.0)?;
    if let Some(edge) = mesh.first_open_edge() {
        return Err(Error::TessellationFailure(format!("CSG surface is open at {edge}")));
    }
    Ok(mesh)
}

fn box_bounds(half: &Vec3) -> Aabb {
    Aabb { min: -half, max: *half }
}

/// A box with a sphere removed. When the sphere misses the box the plain box
/// is returned with the no-op flag set.
pub fn box_minus_sphere(half: Vec3, center: Vec3, radius: f64, cells: usize) -> Result<(TriangleMesh, bool)> {
    if box_sdf(&half, &center) >= radius {
        return Ok((cuboid(-half, half), true));
    }
    let corners_inside = (0..8).all(|i| {
        let c = Vec3::new(
            if i & 1 == 0 { -half.x } else { half.x },
            if i & 2 == 0 { -half.y } else { half.y },
            if i & 4 == 0 { -half.z } else { half.z },
        );
        (c - center).norm() < radius
    });
    if corners_inside {
        return Err(Error::TessellationFailure("the sphere removes the whole box".into()));
    }
    let f = |x: &Vec3| box_sdf(&half, x).max(radius - (x - center).norm());
    Ok((tessellate(f, box_bounds(&half), cells)?, false))
}

/// Union of a box and a sphere.
pub fn box_sphere_union(half: Vec3, center: Vec3, radius: f64, cells: usize) -> Result<TriangleMesh> {
    let f = |x: &Vec3| box_sdf(&half, x).min((x - center).norm() - radius);
    let mut bounds = box_bounds(&half);
    bounds.grow(&(center - Vec3::repeat(radius)));
    bounds.grow(&(center + Vec3::repeat(radius)));
    tessellate(f, bounds, cells)
}

/// Draws parameters for `family` from `rng` and builds the mesh.
pub fn generate_primitive(family: Family, cfg: &CorpusConfig, rng: &mut impl Rng) -> Result<Primitive> {
    let mut params = BTreeMap::new();
    let mut draw = |name: &str, lo: f64, hi: f64, rng: &mut dyn rand::RngCore| {
        let v = rng.random_range(lo..hi);
        params.insert(name.to_string(), v);
        v
    };
    let mut csg_noop = false;
    let mesh = match family {
        Family::Sphere => {
            let r = draw("radius", 0.5, 1.0, rng);
            icosphere(cfg.sphere_subdivisions).transformed(|v| v * r)
        }
        Family::Box => {
            let half = Vec3::new(draw("hx", 0.3, 1.0, rng), draw("hy", 0.3, 1.0, rng), draw("hz", 0.3, 1.0, rng));
            cuboid(-half, half)
        }
        Family::Cylinder => {
            let r = draw("radius", 0.3, 0.8, rng);
            cylinder(r, draw("half_height", 0.3, 1.0, rng), cfg.segments)
        }
        Family::Capsule => {
            let r = draw("radius", 0.25, 0.6, rng);
            capsule(r, draw("half_length", 0.2, 0.8, rng), cfg.segments, (cfg.segments / 4).max(2))
        }
        Family::BoxSphereUnion => {
            let half = Vec3::new(draw("hx", 0.3, 0.7, rng), draw("hy", 0.3, 0.7, rng), draw("hz", 0.3, 0.7, rng));
            let r = draw("radius", 0.3, 0.55, rng);
            // The sphere sits on the center of one face.
            let axis = draw("axis", 0.0, 3.0, rng).floor() as usize;
            let side = if draw("side", 0.0, 1.0, rng) < 0.5 { -1.0 } else { 1.0 };
            let mut center = Vec3::zeros();
            center[axis] = side * half[axis];
            box_sphere_union(half, center, r, cfg.csg_resolution)?
        }
        Family::BoxMinusSphere => {
            let half = Vec3::new(draw("hx", 0.4, 0.9, rng), draw("hy", 0.4, 0.9, rng), draw("hz", 0.4, 0.9, rng));
            let r = draw("radius", 0.3, 0.6, rng);
            // A bite out of one corner.
            let corner = Vec3::new(
                if draw("sx", 0.0, 1.0, rng) < 0.5 { -half.x } else { half.x },
                if draw("sy", 0.0, 1.0, rng) < 0.5 { -half.y } else { half.y },
                if draw("sz", 0.0, 1.0, rng) < 0.5 { -half.z } else { half.z },
            );
            let (mesh, noop) = box_minus_sphere(half, corner, r, cfg.csg_resolution)?;
            csg_noop = noop;
            mesh
        }
    };
    if !mesh.is_watertight() {
        return Err(Error::TessellationFailure(format!("{family:?} mesh is not watertight")));
    }
    Ok(Primitive { mesh, params, csg_noop })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeEntry {
    pub id: u64,
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    /// OBJ file name relative to the corpus directory.
    pub file: String,
    /// SHA-256 of the OBJ file.
    pub sha256: String,
    pub split: Split,
    pub csg_noop: bool,
    /// Normalized = (raw − offset) · scale.
    pub scale: f64,
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub seed: u64,
    pub shapes: Vec<ShapeEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Generates, normalizes and writes every shape, then the manifest.
pub fn gen_corpus(cfg: &CorpusConfig, seed: u64, dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut ids: Vec<u64> = (0..cfg.count as u64).collect();
    ids.shuffle(&mut rng::stream(rng::derive(seed, "split"), 0));
    let mut split = BTreeMap::new();
    for (rank, id) in ids.into_iter().enumerate() {
        let s = if rank < cfg.split[0] {
            Split::Train
        } else if rank < cfg.split[0] + cfg.split[1] {
            Split::Val
        } else {
            Split::Test
        };
        split.insert(id, s);
    }

    let shape_seed = rng::derive(seed, "corpus");
    let mut shapes = Vec::with_capacity(cfg.count);
    for id in 0..cfg.count as u64 {
        let family = cfg.families[id as usize % cfg.families.len()];
        let prim = generate_primitive(family, cfg, &mut rng::stream(shape_seed, id))?;
        if prim.csg_noop {
            log::warn!("shape {id}: {family:?} subtraction missed the box; stored as a plain box");
        }
        let norm = normalize_mesh(&prim.mesh)?;
        let mut bytes = Vec::new();
        write_obj(&norm.mesh, &mut bytes)?;
        let file = format!("shape_{id:03}.obj");
        fs::write(dir.join(&file), &bytes)?;
        shapes.push(ShapeEntry {
            id,
            family,
            params: prim.params,
            file,
            sha256: sha256_hex(&bytes),
            split: split[&id],
            csg_noop: prim.csg_noop,
            scale: norm.scale,
            offset: norm.offset.into(),
        });
    }
    let manifest = CorpusManifest { seed, shapes };
    manifest.save(dir)?;
    Ok(manifest)
}

impl CorpusManifest {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.as_ref().join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("corpus manifest: {e}")))
    }

    pub fn ids(&self, split: Split) -> Vec<u64> {
        self.shapes.iter().filter(|s| s.split == split).map(|s| s.id).collect()
    }

    pub fn entry(&self, id: u64) -> Result<&ShapeEntry> {
        self.shapes
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::ManifestMismatch(format!("shape {id} is not in the corpus")))
    }
}

/// A generated corpus on disk.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = CorpusManifest::load(&dir)?;
        Ok(Self { dir, manifest })
    }

    /// Loads a shape after checking its file hash against the manifest.
    pub fn mesh(&self, id: u64) -> Result<TriangleMesh> {
        let entry = self.manifest.entry(id)?;
        let path = self.dir.join(&entry.file);
        let digest = sha256_hex(&fs::read(&path)?);
        if digest != entry.sha256 {
            return Err(Error::ManifestMismatch(format!("{} changed since the corpus was generated", entry.file)));
        }
        load_watertight_mesh(path)
    }
}
