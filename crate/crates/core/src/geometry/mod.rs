//! Meshes, spatial queries and mesh-to-SDF conversion.

mod bvh;
mod mesh;
mod obj;
mod pose;
pub mod primitives;
pub(crate) mod sampling;
mod sdf;

pub use bvh::{MeshIndex, RayHit};
pub use mesh::{normalize_mesh, surface_area, Aabb, Normalization, TriangleMesh};
pub use obj::{load_mesh, load_watertight_mesh, parse_obj, save_obj, write_obj};
pub use pose::Pose;
pub use sampling::{sample_surface, PointCloud};
pub use sdf::{
    generate_sdf_dataset, read_sdf_dataset, signed_distance, write_sdf_dataset, SdfSample, UNIFORM_HALF_WIDTH,
};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type UnitVec3 = nalgebra::Unit<Vec3>;
pub type Mat3 = nalgebra::Matrix3<f64>;
