use super::mesh::Aabb;
use super::{TriangleMesh, UnitVec3, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: range into `order`. Interior: `start` is the right child, the
    /// left child is the next node.
    start: u32,
    count: u32,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

/// Ray hit: `point = origin + t·dir`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub face: usize,
    pub point: Vec3,
}

/// Median-split bounding-volume hierarchy over a mesh's triangles.
#[derive(Clone, Debug)]
pub struct MeshIndex {
    mesh: TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
    watertight: bool,
}

impl MeshIndex {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let mut index = Self {
            mesh: mesh.clone(),
            nodes: Vec::with_capacity(2 * mesh.faces.len() / LEAF_SIZE + 1),
            order: (0..mesh.faces.len() as u32).collect(),
            watertight: mesh.is_watertight(),
        };
        if !mesh.faces.is_empty() {
            let centroids: Vec<Vec3> = mesh
                .triangles()
                .map(|[a, b, c]| (a + b + c) / 3.0)
                .collect();
            index.build(0, mesh.faces.len(), &centroids);
        }
        index
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map_or_else(Aabb::empty, |n| n.bounds)
    }

    fn triangle_bounds(&self, start: usize, end: usize) -> Aabb {
        let mut b = Aabb::empty();
        for &f in &self.order[start..end] {
            for v in self.mesh.triangle(f as usize) {
                b.grow(&v);
            }
        }
        b
    }

    fn build(&mut self, start: usize, end: usize, centroids: &[Vec3]) -> usize {
        let id = self.nodes.len();
        let bounds = self.triangle_bounds(start, end);
        self.nodes.push(Node {
            bounds,
            start: start as u32,
            count: (end - start) as u32,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let spread = Aabb::from_points(self.order[start..end].iter().map(|&f| &centroids[f as usize]))
            .extent();
        let axis = spread.imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
        });
        self.build(start, mid, centroids);
        let right = self.build(mid, end, centroids);
        self.nodes[id].start = right as u32;
        self.nodes[id].count = 0;
        id
    }

    /// Closest surface point to `x`, its distance, and the face it lies on.
    pub fn closest_point(&self, x: &Vec3) -> Option<(Vec3, f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (Vec3::zeros(), f64::INFINITY, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.bounds.distance_squared(x) >= best.1 {
                continue;
            }
            if node.is_leaf() {
                let s = node.start as usize;
                for &f in &self.order[s..s + node.count as usize] {
                    let [a, b, c] = self.mesh.triangle(f as usize);
                    let p = closest_on_triangle(x, &a, &b, &c);
                    let d2 = (p - x).norm_squared();
                    if d2 < best.1 {
                        best = (p, d2, f as usize);
                    }
                }
            } else {
                let (l, r) = (id + 1, node.start as usize);
                let dl = self.nodes[l].bounds.distance_squared(x);
                let dr = self.nodes[r].bounds.distance_squared(x);
                // Push the farther child first so the nearer one is explored first.
                if dl < dr {
                    stack.extend([r, l]);
                } else {
                    stack.extend([l, r]);
                }
            }
        }
        Some((best.0, best.1.sqrt(), best.2))
    }

    fn visit_ray(&self, origin: &Vec3, dir: &Vec3, mut f: impl FnMut(usize, f64) -> f64) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut t_max = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            match node.bounds.ray_interval(origin, &inv) {
                Some((t0, _)) if t0 <= t_max => {}
                _ => continue,
            }
            if node.is_leaf() {
                let s = node.start as usize;
                for &face in &self.order[s..s + node.count as usize] {
                    let [a, b, c] = self.mesh.triangle(face as usize);
                    if let Some(t) = intersect_triangle(origin, dir, &a, &b, &c) {
                        t_max = f(face as usize, t);
                    }
                }
            } else {
                stack.extend([node.start as usize, id + 1]);
            }
        }
    }

    /// Nearest hit with `t ≥ 0`.
    pub fn ray_intersect(&self, origin: &Vec3, dir: &UnitVec3) -> Option<RayHit> {
        let mut best: Option<(f64, usize)> = None;
        self.visit_ray(origin, dir, |face, t| {
            if t >= 0.0 && best.is_none_or(|(bt, bf)| t < bt || (t == bt && face < bf)) {
                best = Some((t, face));
            }
            best.map_or(f64::INFINITY, |b| b.0)
        });
        best.map(|(t, face)| RayHit {
            t,
            face,
            point: origin + dir.as_ref() * t,
        })
    }

    /// Number of triangles crossed by the ray at `t > 0`.
    pub fn crossings(&self, origin: &Vec3, dir: &UnitVec3) -> usize {
        let mut n = 0;
        self.visit_ray(origin, dir, |_, t| {
            if t > 0.0 {
                n += 1;
            }
            f64::INFINITY
        });
        n
    }

    /// Inside test by majority over odd crossing counts along fixed directions.
    pub fn is_inside(&self, x: &Vec3) -> bool {
        let votes = sign_directions()
            .iter()
            .filter(|d| self.crossings(x, d) % 2 == 1)
            .count();
        2 * votes > SIGN_DIRECTIONS.len()
    }
}

/// Fixed non-axis-aligned directions for the inside vote.
const SIGN_DIRECTIONS: [[f64; 3]; 5] = [
    [0.5377, 0.8622, -0.3188],
    [-0.3077, 0.4336, 0.8768],
    [0.7254, -0.2049, 0.5803],
    [-0.6516, -0.5919, -0.3427],
    [0.2108, -0.7943, -0.4422],
];

fn sign_directions() -> [UnitVec3; 5] {
    SIGN_DIRECTIONS.map(|d| UnitVec3::new_normalize(Vec3::from(d)))
}

/// Möller–Trumbore; returns the signed ray parameter of a proper crossing.
fn intersect_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub(crate) fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{cuboid, icosphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_dir(x: f64, y: f64, z: f64) -> UnitVec3 {
        UnitVec3::new_normalize(Vec3::new(x, y, z))
    }

    fn brute_closest(mesh: &TriangleMesh, x: &Vec3) -> f64 {
        mesh.triangles()
            .map(|[a, b, c]| (closest_on_triangle(x, &a, &b, &c) - x).norm())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn closest_point_on_cube_face() {
        let idx = MeshIndex::new(&cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0)));
        let (p, d, _) = idx.closest_point(&Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((p - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closest_point_at_vertex_and_centre_of_sphere() {
        let sphere = icosphere(3);
        let idx = MeshIndex::new(&sphere);
        let (_, d, _) = idx.closest_point(&sphere.vertices[17]).unwrap();
        assert_eq!(d, 0.0);
        let (_, d, _) = idx.closest_point(&Vec3::zeros()).unwrap();
        assert!(d < 1.0 && d > 0.98, "{d}");
    }

    #[test]
    fn closest_point_matches_brute_force() {
        let mesh = icosphere(2).transformed(|v| Vec3::new(v.x * 1.5, v.y, v.z * 0.4));
        let idx = MeshIndex::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let x = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let (p, d, face) = idx.closest_point(&x).unwrap();
            assert!((d - brute_closest(&mesh, &x)).abs() < 1e-12);
            assert!(mesh.vertices.iter().all(|v| d <= (v - x).norm() + 1e-12));
            let [a, b, c] = mesh.triangle(face);
            assert!((closest_on_triangle(&p, &a, &b, &c) - p).norm() < 1e-12);
        }
    }

    #[test]
    fn ray_hits_top_of_cube() {
        let idx = MeshIndex::new(&cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0)));
        let hit = idx
            .ray_intersect(&Vec3::new(0.0, 0.0, 5.0), &unit_dir(0.0, 0.0, -1.0))
            .unwrap();
        assert!((hit.t - 4.0).abs() < 1e-12);
        assert!((hit.point - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn ray_from_inside_cube_hits_within_diagonal() {
        let idx = MeshIndex::new(&cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let o = Vec3::from_fn(|_, _| rng.random_range(-0.99..0.99));
            let d = UnitVec3::new_normalize(Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let hit = idx.ray_intersect(&o, &d).unwrap();
            assert!(hit.t <= 2.0 * 3f64.sqrt());
            let n = idx.mesh().face_normal(hit.face).unwrap();
            let [a, _, _] = idx.mesh().triangle(hit.face);
            assert!((hit.point - a).dot(&n).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_ray_outside_face_misses() {
        let idx = MeshIndex::new(&cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0)));
        assert!(idx
            .ray_intersect(&Vec3::new(-5.0, 0.0, 1.5), &unit_dir(1.0, 0.0, 0.0))
            .is_none());
        assert!(idx
            .ray_intersect(&Vec3::new(0.0, 0.0, 5.0), &unit_dir(0.0, 0.0, 1.0))
            .is_none());
    }

    #[test]
    fn inside_test_on_sphere() {
        let idx = MeshIndex::new(&icosphere(3));
        assert!(idx.is_inside(&Vec3::new(0.5, 0.0, 0.0)));
        assert!(idx.is_inside(&Vec3::zeros()));
        assert!(!idx.is_inside(&Vec3::new(2.0, 0.0, 0.0)));
        assert!(!idx.is_inside(&Vec3::new(0.0, 0.0, -1.05)));
    }
}
