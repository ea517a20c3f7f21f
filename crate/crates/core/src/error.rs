use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mesh is not a closed manifold: {0}")]
    NonManifold(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("signed distances need a watertight mesh")]
    NonWatertight,

    #[error("sensor made no contact with the object")]
    NoContact,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("observation is empty")]
    EmptyObservation,

    #[error("touch records come from different shapes ({0} and {1})")]
    MixedShapes(u64, u64),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("point clouds differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),

    #[error("ground-truth surface area is zero")]
    ZeroGtArea,

    #[error("scalar field has no sign change at the requested level")]
    EmptyLevelSet,

    #[error("tessellation failed: {0}")]
    TessellationFailure(String),

    #[error("no contact after {attempts} attempts for shape {shape_id}")]
    RetriesExhausted { shape_id: u64, attempts: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("bad archive: {0}")]
    Format(String),

    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
