//! Closed, outward-wound primitive meshes.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::{TriangleMesh, Vec3};

/// Axis-aligned box with two triangles per face.
pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
    let corner = |i: usize| {
        Vec3::new(
            if i & 1 == 0 { min.x } else { max.x },
            if i & 2 == 0 { min.y } else { max.y },
            if i & 4 == 0 { min.z } else { max.z },
        )
    };
    let vertices = (0..8).map(corner).collect();
    // Each quad is listed counter-clockwise seen from outside.
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let faces = quads
        .iter()
        .flat_map(|&[a, b, c, d]| [[a, b, c], [a, c, d]])
        .collect();
    TriangleMesh { vertices, faces }
}

/// Unit-radius sphere from a subdivided icosahedron.
pub fn icosphere(subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vec3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (vertices[a as usize] + vertices[b as usize]).normalize();
                vertices.push(m);
                vertices.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh { vertices, faces }
}

/// Surface of revolution about z. `rings` lists `(radius, z)` from bottom
/// to top; the ends are closed by pole vertices at `bottom_z` and `top_z`.
pub fn lathe(bottom_z: f64, rings: &[(f64, f64)], top_z: f64, segments: u32) -> TriangleMesh {
    assert!(segments >= 3 && !rings.is_empty());
    let s = segments;
    let mut vertices = vec![Vec3::new(0.0, 0.0, bottom_z)];
    for &(r, z) in rings {
        for j in 0..s {
            let theta = 2.0 * PI * j as f64 / s as f64;
            vertices.push(Vec3::new(r * theta.cos(), r * theta.sin(), z));
        }
    }
    let top = vertices.len() as u32;
    vertices.push(Vec3::new(0.0, 0.0, top_z));
    let ring = |i: usize, j: u32| 1 + i as u32 * s + j % s;
    let mut faces = Vec::new();
    for j in 0..s {
        faces.push([0, ring(0, j + 1), ring(0, j)]);
    }
    for i in 0..rings.len() - 1 {
        for j in 0..s {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j + 1), ring(i + 1, j));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let last = rings.len() - 1;
    for j in 0..s {
        faces.push([top, ring(last, j), ring(last, j + 1)]);
    }
    TriangleMesh { vertices, faces }
}

/// Closed cylinder along z centered at the origin.
pub fn cylinder(radius: f64, half_height: f64, segments: u32) -> TriangleMesh {
    let h = half_height;
    let mut rings = vec![(radius * 0.5, -h), (radius, -h)];
    let bands = ((2.0 * h) / (2.0 * PI * radius / segments as f64)).ceil().max(1.0) as usize;
    for k in 1..bands {
        rings.push((radius, -h + 2.0 * h * k as f64 / bands as f64));
    }
    rings.extend([(radius, h), (radius * 0.5, h)]);
    lathe(-h, &rings, h, segments)
}

/// Cylinder of `half_length` capped with hemispheres of `radius`.
pub fn capsule(radius: f64, half_length: f64, segments: u32, cap_rings: u32) -> TriangleMesh {
    let mut rings = Vec::new();
    for k in 1..=cap_rings {
        let phi = PI / 2.0 * k as f64 / cap_rings as f64;
        rings.push((radius * phi.sin(), -half_length - radius * phi.cos()));
    }
    for k in (1..=cap_rings).rev() {
        let phi = PI / 2.0 * k as f64 / cap_rings as f64;
        rings.push((radius * phi.sin(), half_length + radius * phi.cos()));
    }
    lathe(-half_length - radius, &rings, half_length + radius, segments)
}
