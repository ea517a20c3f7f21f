//! Regular-grid scalar fields and marching-cubes level-set extraction.

mod tables;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, TriangleMesh, Vec3};
use tables::TRI_TABLE;

/// Samples of a scalar field on an `nx × ny × nz` lattice spanning `bounds`
/// (grid points include both faces). `values[(i * ny + j) * nz + k]` holds the
/// value at grid point `(i, j, k)`, so `k` (the z index) varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub values: Vec<f64>,
}

/// Default reconstruction lattice: `[-1.1, 1.1]³`.
pub fn default_bounds() -> Aabb {
    Aabb {
        min: Vec3::repeat(-1.1),
        max: Vec3::repeat(1.1),
    }
}

pub const DEFAULT_RESOLUTION: usize = 128;

fn check_lattice(bounds: &Aabb, resolution: [usize; 3]) -> Result<()> {
    if resolution.iter().any(|&n| n < 2) {
        return Err(Error::Config(format!(
            "grid resolution {resolution:?} needs at least 2 points per axis"
        )));
    }
    let e = bounds.extent();
    if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) || !e.iter().all(|v| v.is_finite()) {
        return Err(Error::Config(format!("degenerate grid bounds {bounds:?}")));
    }
    Ok(())
}

impl ScalarGrid {
    pub fn new(bounds: Aabb, resolution: [usize; 3], values: Vec<f64>) -> Result<Self> {
        check_lattice(&bounds, resolution)?;
        let n: usize = resolution.iter().product();
        if values.len() != n {
            return Err(Error::SizeMismatch(n, values.len()));
        }
        Ok(Self {
            resolution,
            bounds,
            values,
        })
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [_, ny, nz] = self.resolution;
        (i * ny + j) * nz + k
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        lattice_point(&self.bounds, self.resolution, [i, j, k])
    }

    /// Grid spacing per axis.
    pub fn spacing(&self) -> Vec3 {
        let e = self.bounds.extent();
        Vec3::new(
            e.x / (self.resolution[0] - 1) as f64,
            e.y / (self.resolution[1] - 1) as f64,
            e.z / (self.resolution[2] - 1) as f64,
        )
    }
}

fn lattice_point(bounds: &Aabb, resolution: [usize; 3], ijk: [usize; 3]) -> Vec3 {
    Vec3::from_fn(|a, _| {
        let t = ijk[a] as f64 / (resolution[a] - 1) as f64;
        bounds.min[a] + t * (bounds.max[a] - bounds.min[a])
    })
}

/// Evaluates `f` at every lattice point.
pub fn sample_grid(
    f: impl Fn(&Vec3) -> f64,
    bounds: Aabb,
    resolution: [usize; 3],
) -> Result<ScalarGrid> {
    sample_grid_batched(|pts| Ok(pts.iter().map(&f).collect()), bounds, resolution)
}

/// Like [`sample_grid`] but hands `f` one x-slab of points at a time, for
/// fields that are cheaper to evaluate in batches.
pub fn sample_grid_batched(
    mut f: impl FnMut(&[Vec3]) -> Result<Vec<f64>>,
    bounds: Aabb,
    resolution: [usize; 3],
) -> Result<ScalarGrid> {
    check_lattice(&bounds, resolution)?;
    let [nx, ny, nz] = resolution;
    let mut values = Vec::with_capacity(nx * ny * nz);
    let mut slab = Vec::with_capacity(ny * nz);
    for i in 0..nx {
        slab.clear();
        for j in 0..ny {
            for k in 0..nz {
                slab.push(lattice_point(&bounds, resolution, [i, j, k]));
            }
        }
        let v = f(&slab)?;
        if v.len() != slab.len() {
            return Err(Error::SizeMismatch(slab.len(), v.len()));
        }
        values.extend(v);
    }
    ScalarGrid::new(bounds, resolution, values)
}

/// Cube corner offsets in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Cube edges as corner pairs in table order.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Interpolation parameters are kept this far from the edge endpoints.
const EDGE_MARGIN: f64 = 1e-7;

/// Triangulates `{x : f(x) = iso}` with the classic 256-case table. Corners
/// with value below `iso` count as inside; triangles are wound so their
/// normals point toward increasing values. Vertices are shared between
/// adjacent cells, and output order follows cell order.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    if let Some(i) = grid.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::TessellationFailure(format!(
            "non-finite grid value at index {i}"
        )));
    }
    let [nx, ny, nz] = grid.resolution;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    // Keyed by the lower grid point of an edge and the edge's axis.
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();

    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for k in 0..nz - 1 {
                let corner_ijk = CORNERS.map(|c| [i + c[0], j + c[1], k + c[2]]);
                let corner_val = corner_ijk.map(|[a, b, c]| grid.value(a, b, c));
                let mut case = 0usize;
                for (bit, v) in corner_val.iter().enumerate() {
                    if *v < iso {
                        case |= 1 << bit;
                    }
                }
                let row = &TRI_TABLE[case];
                if row[0] < 0 {
                    continue;
                }
                let mut vertex_of_edge = |e: usize| -> u32 {
                    let [ca, cb] = EDGES[e];
                    let (pa, pb) = (corner_ijk[ca], corner_ijk[cb]);
                    let axis = (0..3).find(|&a| pa[a] != pb[a]).expect("edge spans an axis");
                    let (lo, lo_val, hi_val) = if pa[axis] < pb[axis] {
                        (pa, corner_val[ca], corner_val[cb])
                    } else {
                        (pb, corner_val[cb], corner_val[ca])
                    };
                    let key = (grid.index(lo[0], lo[1], lo[2]), axis);
                    *edge_vertex.entry(key).or_insert_with(|| {
                        let t = if hi_val == lo_val {
                            0.5
                        } else {
                            ((iso - lo_val) / (hi_val - lo_val)).clamp(EDGE_MARGIN, 1.0 - EDGE_MARGIN)
                        };
                        let mut hi = lo;
                        hi[axis] += 1;
                        let a = grid.point(lo[0], lo[1], lo[2]);
                        let b = grid.point(hi[0], hi[1], hi[2]);
                        vertices.push(a + (b - a) * t);
                        vertices.len() as u32 - 1
                    })
                };
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let a = vertex_of_edge(tri[0] as usize);
                    let b = vertex_of_edge(tri[1] as usize);
                    let c = vertex_of_edge(tri[2] as usize);
                    // The table winds triangles clockwise seen from the outside.
                    faces.push([a, c, b]);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyLevelSet);
    }
    TriangleMesh::new(vertices, faces)
}
