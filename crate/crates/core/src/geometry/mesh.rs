use std::collections::HashMap;

use super::Vec3;
use crate::error::{Error, Result};

/// Indexed triangle mesh. Faces are counter-clockwise seen from outside.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&(p - self.max)).sup(&Vec3::zeros());
        d.norm_squared()
    }

    /// Parameter interval of the ray inside the box, if any, clipped to `t ≥ 0`.
    pub fn ray_interval(&self, origin: &Vec3, inv_dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0: f64 = 0.0;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let mut near = (self.min[a] - origin[a]) * inv_dir[a];
            let mut far = (self.max[a] - origin[a]) * inv_dir[a];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // NaN arises for a zero direction component with the origin on a slab face.
            if near.is_nan() || far.is_nan() {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Output of [`normalize_mesh`]: `normalized = (original - offset) * scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mesh: TriangleMesh,
    pub scale: f64,
    pub offset: Vec3,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::Format(format!(
                "face {f:?} references a vertex beyond {n}"
            )));
        }
        Ok(Self { vertices, faces })
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangles(&self) -> impl Iterator<Item = [Vec3; 3]> + '_ {
        (0..self.faces.len()).map(|f| self.triangle(f))
    }

    /// Unnormalized face normal; its length is twice the area.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    /// Unit face normal, or `None` for a degenerate triangle.
    pub fn face_normal(&self, f: usize) -> Option<Vec3> {
        let n = self.face_cross(f);
        let len = n.norm();
        (len > 0.0).then(|| n / len)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    /// Every directed edge appears once and its reverse also appears, so
    /// every undirected edge is shared by exactly two consistently wound faces.
    pub fn is_watertight(&self) -> bool {
        self.first_open_edge().is_none() && !self.faces.is_empty()
    }

    pub(crate) fn first_open_edge(&self) -> Option<String> {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                if e.0 == e.1 {
                    return Some(format!("degenerate edge at vertex {}", e.0));
                }
                *directed.entry(e).or_default() += 1;
            }
        }
        let mut edges: Vec<_> = directed.iter().collect();
        edges.sort();
        for (&(a, b), &count) in edges {
            if count != 1 {
                return Some(format!("directed edge {a}->{b} used by {count} faces"));
            }
            if !directed.contains_key(&(b, a)) {
                return Some(format!("edge {a}-{b} has a single face"));
            }
        }
        None
    }

    /// Signed enclosed volume (positive for outward winding).
    pub fn volume(&self) -> f64 {
        self.triangles()
            .map(|[a, b, c]| a.dot(&b.cross(&c)) / 6.0)
            .sum()
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Reverses the orientation of every face.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    /// Removes vertices referenced by no face.
    pub fn compacted(&self) -> Self {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let faces = self
            .faces
            .iter()
            .map(|f| {
                f.map(|i| {
                    let slot = &mut remap[i as usize];
                    if *slot == u32::MAX {
                        *slot = vertices.len() as u32;
                        vertices.push(self.vertices[i as usize]);
                    }
                    *slot
                })
            })
            .collect();
        Self { vertices, faces }
    }
}

pub fn surface_area(mesh: &TriangleMesh) -> f64 {
    (0..mesh.faces.len()).map(|f| mesh.face_area(f)).sum()
}

/// Centers the bounding box at the origin and scales so the farthest vertex
/// sits at radius 1.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<Normalization> {
    if mesh.vertices.is_empty() {
        return Err(Error::DegenerateMesh("mesh has no vertices".into()));
    }
    let offset = mesh.bounds().center();
    let radius = mesh
        .vertices
        .iter()
        .map(|v| (v - offset).norm())
        .fold(0.0, f64::max);
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::DegenerateMesh(format!("extent radius {radius}")));
    }
    let scale = 1.0 / radius;
    Ok(Normalization {
        mesh: mesh.transformed(|v| (v - offset) * scale),
        scale,
        offset,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Axis-aligned box with outward winding.
    pub(crate) fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
        crate::geometry::primitives::cuboid(min, max)
    }

    #[test]
    fn unit_cube_area_and_volume() {
        let m = cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        assert!((surface_area(&m) - 6.0).abs() < 1e-12);
        assert!((m.volume() - 1.0).abs() < 1e-12);
        assert!(m.is_watertight());
    }

    #[test]
    fn degenerate_triangle_has_no_area() {
        let m = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(surface_area(&m), 0.0);
        assert!(!m.is_watertight());
    }

    #[test]
    fn out_of_range_face_rejected() {
        assert!(TriangleMesh::new(vec![Vec3::zeros(); 2], vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn removing_a_face_breaks_watertightness() {
        let mut m = cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        m.faces.pop();
        assert!(!m.is_watertight());
        let mut m = cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        m.faces[0] = [m.faces[0][0], m.faces[0][2], m.faces[0][1]];
        assert!(!m.is_watertight());
    }

    #[test]
    fn normalizing_cube_of_half_width_two() {
        let m = cuboid(Vec3::repeat(-2.0), Vec3::repeat(2.0));
        let n = normalize_mesh(&m).unwrap();
        assert!((n.scale - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-12);
        assert!(n.offset.norm() < 1e-12);
        let r = n.mesh.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_idempotent() {
        let m = cuboid(Vec3::new(0.3, -1.0, 2.0), Vec3::new(1.0, 4.0, 2.5));
        let once = normalize_mesh(&m).unwrap();
        let twice = normalize_mesh(&once.mesh).unwrap();
        assert!((twice.scale - 1.0).abs() < 1e-9);
        assert!(twice.offset.norm() < 1e-9);
    }

    #[test]
    fn single_point_is_degenerate() {
        let m = TriangleMesh::new(vec![Vec3::new(1.0, 2.0, 3.0)], vec![[0, 0, 0]]).unwrap();
        assert!(matches!(normalize_mesh(&m), Err(Error::DegenerateMesh(_))));
        assert!(matches!(
            normalize_mesh(&TriangleMesh::default()),
            Err(Error::DegenerateMesh(_))
        ));
    }

    #[test]
    fn ray_interval_handles_axis_parallel_rays() {
        let b = Aabb {
            min: Vec3::repeat(-1.0),
            max: Vec3::repeat(1.0),
        };
        let inv = Vec3::new(f64::INFINITY, f64::INFINITY, -1.0);
        let (t0, t1) = b.ray_interval(&Vec3::new(0.0, 0.0, 5.0), &inv).unwrap();
        assert_eq!((t0, t1), (4.0, 6.0));
        assert!(b.ray_interval(&Vec3::new(2.0, 0.0, 5.0), &inv).is_none());
        // Origin lying exactly on a slab face.
        assert!(b.ray_interval(&Vec3::new(1.0, 0.0, 5.0), &inv).is_some());
    }
}
