use std::fs;

use super::config::ExperimentConfig;
use super::corpus::{Corpus, Split};
use super::{check_manifest, write_manifest, Layout};
use crate::error::{Error, Result};
use crate::geometry::MeshIndex;
use crate::rng;
use crate::touch::{press, sample_touch_ray, write_pgm, write_touches, SensorSpec, TouchRecord};

/// Touches of one shape and the number of rays that missed on the way.
#[derive(Clone, Debug, PartialEq)]
pub struct TouchSet {
    pub records: Vec<TouchRecord>,
    pub retries: u32,
}

/// Presses `count` times. Touch `j`, attempt `a` draws its ray and contact
/// cloud from `derive_index(derive_index(seed, j), a)`, so the first `k`
/// touches do not depend on `count`. A miss moves on to the next attempt;
/// more than `max_retries` misses for one touch is an error.
pub fn collect_touches(
    index: &MeshIndex,
    shape_id: u64,
    count: usize,
    spec: &SensorSpec,
    cloud_points: usize,
    max_retries: u32,
    seed: u64,
) -> Result<TouchSet> {
    let mut records = Vec::with_capacity(count);
    let mut retries = 0;
    for j in 0..count {
        let touch_seed = rng::derive_index(seed, j as u64);
        let mut attempt = 0;
        let record = loop {
            let s = rng::derive_index(touch_seed, attempt as u64);
            let ray = sample_touch_ray(index.mesh(), s);
            match press(index, &ray, spec, shape_id, cloud_points, rng::derive(s, "cloud")) {
                Ok(r) => break r,
                Err(Error::NoContact) if attempt < max_retries => {
                    log::info!("shape {shape_id} touch {j}: no contact on attempt {attempt}, retrying");
                    attempt += 1;
                }
                Err(Error::NoContact) => {
                    return Err(Error::RetriesExhausted {
                        shape_id,
                        attempts: attempt + 1,
                    })
                }
                Err(e) => return Err(e),
            }
        };
        retries += attempt;
        records.push(record);
    }
    Ok(TouchSet { records, retries })
}

/// Touch seed of `shape_id` in the chart-training datasets.
pub(crate) fn dataset_touch_seed(master: u64, shape_id: u64) -> u64 {
    rng::derive_index(rng::derive(master, "touches"), shape_id)
}

/// Writes train and validation touch archives (`touches.per_shape` per
/// shape) and a few depth images per shape as PGM.
pub fn run_touch_dataset(cfg: &ExperimentConfig) -> Result<Vec<(Split, usize)>> {
    let layout = Layout::new(&cfg.output_dir);
    check_manifest(&layout, "gen-corpus", cfg)?;
    let corpus = Corpus::open(layout.corpus())?;
    let pgm_dir = layout.root.join("touches").join("pgm");
    fs::create_dir_all(&pgm_dir)?;
    let mut counts = Vec::new();
    for split in [Split::Train, Split::Val] {
        let mut all = Vec::new();
        for id in corpus.manifest.ids(split) {
            let index = MeshIndex::new(&corpus.mesh(id)?);
            let set = collect_touches(
                &index,
                id,
                cfg.touches.per_shape,
                &cfg.sensor,
                cfg.touches.cloud_points,
                cfg.touches.max_retries,
                dataset_touch_seed(cfg.seed, id),
            )?;
            if set.retries > 0 {
                log::info!("shape {id}: {} rays missed", set.retries);
            }
            for (j, rec) in set.records.iter().take(cfg.touches.pgm_per_shape).enumerate() {
                write_pgm(&rec.image, pgm_dir.join(format!("shape{id:03}_t{j:02}.pgm")))?;
            }
            all.extend(set.records);
        }
        write_touches(&all, layout.touches(split))?;
        counts.push((split, all.len()));
    }
    write_manifest(&layout, "gen-touches", cfg)?;
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;
    use crate::geometry::{TriangleMesh, Vec3};

    fn spec() -> SensorSpec {
        SensorSpec {
            image_size: 16,
            ..SensorSpec::default()
        }
    }

    #[test]
    fn spheres_never_miss() {
        let index = MeshIndex::new(&icosphere(2).transformed(|v| v * 0.7));
        let set = collect_touches(&index, 3, 50, &spec(), 16, 0, 5).unwrap();
        assert_eq!(set.records.len(), 50);
        assert_eq!(set.retries, 0);
        assert!(set.records.iter().all(|r| r.shape_id == 3));
    }

    #[test]
    fn touch_prefixes_are_nested() {
        let index = MeshIndex::new(&icosphere(1));
        let long = collect_touches(&index, 0, 6, &spec(), 8, 0, 9).unwrap();
        let short = collect_touches(&index, 0, 3, &spec(), 8, 0, 9).unwrap();
        assert_eq!(&long.records[..3], &short.records[..]);
    }

    /// Two small balls far from the common center: rays aimed at the center
    /// miss unless they come in nearly along the axis.
    fn dumbbell() -> TriangleMesh {
        let ball = icosphere(2);
        let left = ball.transformed(|v| v * 0.2 - Vec3::new(0.8, 0.0, 0.0));
        let right = ball.transformed(|v| v * 0.2 + Vec3::new(0.8, 0.0, 0.0));
        let n = left.vertices.len() as u32;
        let mut vertices = left.vertices;
        vertices.extend(right.vertices);
        let mut faces = left.faces;
        faces.extend(right.faces.iter().map(|f| f.map(|i| i + n)));
        TriangleMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn misses_are_retried_then_exhausted() {
        let mesh = dumbbell();
        assert!(mesh.is_watertight());
        let index = MeshIndex::new(&mesh);
        let set = collect_touches(&index, 7, 4, &spec(), 8, 500, 1).unwrap();
        assert_eq!(set.records.len(), 4);
        assert!(set.retries > 0);
        let err = (0..20)
            .map(|seed| collect_touches(&index, 7, 1, &spec(), 8, 0, seed))
            .find_map(Result::err)
            .expect("some single attempt misses");
        assert!(matches!(err, Error::RetriesExhausted { shape_id: 7, attempts: 1 }));
    }
}
