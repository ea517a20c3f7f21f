use super::{Mat3, Vec3};

/// Rigid transform mapping local coordinates to world: `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    /// Frame whose z axis is `z_axis` and whose x axis is world-x projected
    /// onto the orthogonal plane (world-y when that projection degenerates).
    pub fn looking_along(z_axis: &Vec3, origin: Vec3) -> Self {
        let z = z_axis.normalize();
        let project = |v: Vec3| v - z * z.dot(&v);
        let mut x = project(Vec3::x());
        if x.norm() < 1e-6 {
            x = project(Vec3::y());
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self::new(Mat3::from_columns(&[x, y, z]), origin)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn axis(&self, i: usize) -> Vec3 {
        self.rotation.column(i).into_owned()
    }

    /// Orthonormal with determinant +1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let should_be_identity = self.rotation.transpose() * self.rotation;
        (should_be_identity - Mat3::identity()).abs().max() < tol
            && (self.rotation.determinant() - 1.0).abs() < tol
    }

    /// Row-major rotation followed by translation.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_array(a: &[f64; 12]) -> Self {
        Self::new(
            Mat3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
            Vec3::new(a[9], a[10], a[11]),
        )
    }
}
