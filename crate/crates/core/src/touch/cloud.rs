use super::SensorSpec;
use crate::error::{Error, Result};
use crate::geometry::sampling::TriangleSampler;
use crate::geometry::{MeshIndex, PointCloud, Pose, Vec3};
use crate::rng;

/// Clips a convex polygon to `{p : p[axis] * sign <= limit * sign}`.
fn clip(poly: &[Vec3], axis: usize, limit: f64, keep_below: bool) -> Vec<Vec3> {
    let inside = |p: &Vec3| {
        if keep_below {
            p[axis] <= limit
        } else {
            p[axis] >= limit
        }
    };
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = &poly[i];
        let b = &poly[(i + 1) % poly.len()];
        let (ia, ib) = (inside(a), inside(b));
        if ia {
            out.push(*a);
        }
        if ia != ib {
            let t = (limit - a[axis]) / (b[axis] - a[axis]);
            let mut p = a + (b - a) * t;
            p[axis] = limit;
            out.push(p);
        }
    }
    out
}

/// Mesh triangles (sensor frame) clipped to the slab of the depth render:
/// `|x|, |y| <= r`, `0 <= z <= 2·max_press_depth`. Returns each piece with
/// the outward world normal of its source face.
fn contact_triangles(index: &MeshIndex, pose: &Pose, spec: &SensorSpec) -> Vec<([Vec3; 3], Vec3)> {
    let r = spec.footprint_radius;
    let top = spec.ray_start();
    let mesh = index.mesh();
    let mut out = Vec::new();
    for f in 0..mesh.faces.len() {
        let Some(normal) = mesh.face_normal(f) else { continue };
        let tri = mesh.triangle(f).map(|v| pose.inverse_transform_point(&v));
        let lo = tri[0].inf(&tri[1]).inf(&tri[2]);
        let hi = tri[0].sup(&tri[1]).sup(&tri[2]);
        if hi.x < -r || lo.x > r || hi.y < -r || lo.y > r || hi.z < 0.0 || lo.z > top {
            continue;
        }
        let mut poly = tri.to_vec();
        for (axis, limit, below) in [
            (0, r, true),
            (0, -r, false),
            (1, r, true),
            (1, -r, false),
            (2, top, true),
            (2, 0.0, false),
        ] {
            poly = clip(&poly, axis, limit, below);
            if poly.len() < 3 {
                break;
            }
        }
        for k in 1..poly.len().saturating_sub(1) {
            out.push(([poly[0], poly[k], poly[k + 1]], normal));
        }
    }
    out
}

/// Area-weighted samples of the mesh surface inside the footprint prism at
/// `pose`: within the pad disk and between the sensor plane and the depth
/// render's ray start. Points are in world coordinates and carry outward
/// face normals.
pub fn extract_local_cloud(
    index: &MeshIndex,
    pose: &Pose,
    spec: &SensorSpec,
    n: usize,
    seed: u64,
) -> Result<PointCloud> {
    let pieces = contact_triangles(index, pose, spec);
    let triangles: Vec<[Vec3; 3]> = pieces.iter().map(|(t, _)| *t).collect();
    let sampler = TriangleSampler::new(&triangles).ok_or(Error::NoContact)?;
    let mut rng = rng::stream(seed, 0);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let max_attempts = 1000 + 200 * n;
    let mut attempts = 0;
    while points.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::NoContact);
        }
        let (i, p) = sampler.sample(&mut rng);
        if !spec.in_pad(p.x, p.y) {
            continue;
        }
        points.push(pose.transform_point(&p));
        normals.push(pieces[i].1);
    }
    PointCloud::with_normals(points, normals)
}
