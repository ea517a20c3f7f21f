use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{TactileImage, TouchRecord};
use crate::binio;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, Vec3};

pub const TOUCH_MAGIC: &[u8; 4] = b"TTCH";
const VERSION: u32 = 1;

fn write_record(w: &mut impl Write, rec: &TouchRecord) -> Result<()> {
    binio::write_u64(w, rec.shape_id)?;
    for v in rec.pose.to_array() {
        binio::write_f64(w, v)?;
    }
    binio::write_u32(w, rec.image.size as u32)?;
    for &v in &rec.image.depth {
        binio::write_f32(w, v)?;
    }
    let cloud = &rec.local_cloud;
    binio::write_u32(w, cloud.len() as u32)?;
    for (i, p) in cloud.points.iter().enumerate() {
        let n = cloud.normals.as_ref().map_or(Vec3::zeros(), |ns| ns[i]);
        for v in [p.x, p.y, p.z, n.x, n.y, n.z] {
            binio::write_f32(w, v as f32)?;
        }
    }
    Ok(())
}

fn read_record(r: &mut impl Read) -> Result<TouchRecord> {
    let shape_id = binio::read_u64(r)?;
    let mut pose = [0.0; 12];
    for v in &mut pose {
        *v = binio::read_f64(r)?;
    }
    let size = binio::read_u32(r)? as usize;
    if size > 1 << 14 {
        return Err(Error::Format(format!("implausible image size {size}")));
    }
    let mut depth = Vec::with_capacity(size * size);
    for _ in 0..size * size {
        depth.push(binio::read_f32(r)?);
    }
    let count = binio::read_u32(r)? as u64;
    let mut points = Vec::with_capacity(binio::capacity_hint(count));
    let mut normals = Vec::with_capacity(binio::capacity_hint(count));
    for _ in 0..count {
        let mut v = [0.0f64; 6];
        for slot in &mut v {
            *slot = binio::read_f32(r)? as f64;
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
        normals.push(Vec3::new(v[3], v[4], v[5]));
    }
    Ok(TouchRecord {
        shape_id,
        pose: Pose::from_array(&pose),
        image: TactileImage { size, depth },
        local_cloud: PointCloud::with_normals(points, normals)?,
    })
}

/// Writes a touch archive: magic, version, record count, then the records.
/// Cloud coordinates and normals are stored as `f32`.
pub fn write_touches(records: &[TouchRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TOUCH_MAGIC)?;
    binio::write_u32(&mut w, VERSION)?;
    binio::write_u64(&mut w, records.len() as u64)?;
    for rec in records {
        write_record(&mut w, rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_touches(path: impl AsRef<Path>) -> Result<Vec<TouchRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    binio::expect_header(&mut r, TOUCH_MAGIC, VERSION)?;
    let count = binio::read_u64(&mut r)?;
    let mut out = Vec::with_capacity(binio::capacity_hint(count));
    for _ in 0..count {
        out.push(read_record(&mut r)?);
    }
    if r.read(&mut [0u8])? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(out)
}

/// 8-bit binary PGM with values `round(255·depth)`.
pub fn write_pgm(image: &TactileImage, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", image.size, image.size)?;
    let bytes: Vec<u8> = image
        .depth
        .iter()
        .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;
    use crate::geometry::MeshIndex;
    use crate::touch::{press, sample_touch_ray, SensorSpec};

    fn records() -> Vec<TouchRecord> {
        let idx = MeshIndex::new(&icosphere(3));
        let spec = SensorSpec {
            image_size: 16,
            ..SensorSpec::default()
        };
        (0..3)
            .map(|s| press(&idx, &sample_touch_ray(idx.mesh(), s), &spec, 4, 10, s).unwrap())
            .collect()
    }

    #[test]
    fn archive_round_trip_keeps_f32_precision() {
        let recs = records();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ttch");
        write_touches(&recs, &path).unwrap();
        let back = read_touches(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.image, b.image);
            assert_eq!(a.shape_id, b.shape_id);
            for (p, q) in a.local_cloud.points.iter().zip(&b.local_cloud.points) {
                assert!((p - q).norm() < 1e-6);
            }
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"TTCH");
        let per_record = 8 + 96 + 4 + 16 * 16 * 4 + 4 + 10 * 24;
        assert_eq!(bytes.len(), 16 + 3 * per_record);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ttch");
        std::fs::write(&path, b"TSDF\x01\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_touches(&path), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_header_and_values() {
        let img = TactileImage {
            size: 2,
            depth: vec![0.0, 0.5, 1.0, 0.25],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.pgm");
        write_pgm(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 255, 64]);
    }
}
