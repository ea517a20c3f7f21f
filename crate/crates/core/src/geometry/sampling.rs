use rand::Rng;

use super::{TriangleMesh, Vec3};
use crate::error::{Error, Result};
use crate::rng;

/// Points with optional parallel unit normals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::SizeMismatch(points.len(), normals.len()));
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends `other`; normals are kept only if both clouds carry them.
    pub fn extend(&mut self, other: &PointCloud) {
        self.normals = match (self.normals.take(), &other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(_)) if self.points.is_empty() => other.normals.clone(),
            _ => None,
        };
        self.points.extend_from_slice(&other.points);
    }
}

/// Area-weighted sampler over a triangle list.
pub(crate) struct TriangleSampler<'a> {
    triangles: &'a [[Vec3; 3]],
    cdf: Vec<f64>,
}

impl<'a> TriangleSampler<'a> {
    pub(crate) fn new(triangles: &'a [[Vec3; 3]]) -> Option<Self> {
        let mut total = 0.0;
        let cdf: Vec<f64> = triangles
            .iter()
            .map(|[a, b, c]| {
                total += 0.5 * (b - a).cross(&(c - a)).norm();
                total
            })
            .collect();
        (total > 0.0).then_some(Self { triangles, cdf })
    }

    pub(crate) fn total_area(&self) -> f64 {
        *self.cdf.last().expect("non-empty")
    }

    /// Returns the triangle index and a uniform point on it.
    pub(crate) fn sample(&self, rng: &mut impl Rng) -> (usize, Vec3) {
        let target = rng.random::<f64>() * self.total_area();
        let i = self
            .cdf
            .partition_point(|&c| c <= target)
            .min(self.cdf.len() - 1);
        let [a, b, c] = self.triangles[i];
        let r1 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        (i, a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2))
    }
}

/// `n` area-uniform surface points with face normals.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let triangles: Vec<[Vec3; 3]> = mesh.triangles().collect();
    let sampler = TriangleSampler::new(&triangles)
        .ok_or_else(|| Error::DegenerateMesh("mesh has zero surface area".into()))?;
    let mut rng = rng::stream(seed, 0);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let (f, p) = sampler.sample(&mut rng);
        points.push(p);
        normals.push(mesh.face_normal(f).expect("sampled faces have area"));
    }
    PointCloud::with_normals(points, normals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::cuboid;

    fn two_triangles() -> TriangleMesh {
        // Areas 1 and 3, in separate planes so the owner of a point is unambiguous.
        TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 5.0),
                Vec3::new(3.0, 0.0, 5.0),
                Vec3::new(0.0, 2.0, 5.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap()
    }

    #[test]
    fn counts_follow_area_ratio() {
        let n = 40_000;
        let cloud = sample_surface(&two_triangles(), n, 9).unwrap();
        let small = cloud.points.iter().filter(|p| p.z < 2.5).count() as f64;
        let (p, nf) = (0.25, n as f64);
        let sigma = (nf * p * (1.0 - p)).sqrt();
        assert!((small - nf * p).abs() < 3.0 * sigma, "{small}");
    }

    #[test]
    fn single_sample_lies_on_face_plane() {
        let m = cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0));
        let cloud = sample_surface(&m, 1, 4).unwrap();
        let p = cloud.points[0];
        assert!((p.amax() - 1.0).abs() < 1e-12);
        let n = cloud.normals.unwrap()[0];
        assert!((p.dot(&n) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = two_triangles();
        assert_eq!(
            sample_surface(&m, 100, 3).unwrap(),
            sample_surface(&m, 100, 3).unwrap()
        );
        assert_ne!(
            sample_surface(&m, 100, 3).unwrap(),
            sample_surface(&m, 100, 4).unwrap()
        );
    }

    #[test]
    fn mismatched_normals_rejected() {
        assert!(PointCloud::with_normals(vec![Vec3::zeros()], vec![]).is_err());
    }
}
