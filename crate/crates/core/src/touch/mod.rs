//! Simulated tactile sensor: contact sampling, pressing, depth rendering and
//! ground-truth contact clouds.

mod archive;
mod cloud;
mod render;

pub use archive::{read_touches, write_pgm, write_touches, TOUCH_MAGIC};
pub use cloud::extract_local_cloud;
pub use render::{press, render_depth};

use rand_distr::{Distribution, UnitSphere};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, TriangleMesh, UnitVec3, Vec3};
use crate::rng;

/// Distance of touch origins from the object center.
pub const APPROACH_RADIUS: f64 = 1.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    /// Half-width of the square image footprint; the pad itself is the
    /// inscribed disk.
    pub footprint_radius: f64,
    pub image_size: usize,
    /// Indentation that maps to a pixel value of 1.
    pub max_press_depth: f64,
    /// Contact threshold on mean intensity in 0..=255 units.
    pub intensity_threshold: f64,
    /// Advance of the sensor plane per press iteration.
    pub step: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            footprint_radius: 0.15,
            image_size: 64,
            max_press_depth: 0.04,
            intensity_threshold: 1.0,
            step: 0.005,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.image_size >= 8
            && self.footprint_radius > 0.0
            && self.step > 0.0
            && self.max_press_depth > 0.0
            && (0.0..=255.0).contains(&self.intensity_threshold);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid sensor spec {self:?}")))
        }
    }

    /// Pixel edge length in object units.
    pub fn pixel_pitch(&self) -> f64 {
        2.0 * self.footprint_radius / self.image_size as f64
    }

    /// Sensor-frame `(x, y)` of the center of pixel `(row, col)`. Columns run
    /// along +x and rows along +y.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let p = self.pixel_pitch();
        (
            -self.footprint_radius + (col as f64 + 0.5) * p,
            -self.footprint_radius + (row as f64 + 0.5) * p,
        )
    }

    pub fn in_pad(&self, x: f64, y: f64) -> bool {
        x * x + y * y <= self.footprint_radius * self.footprint_radius
    }

    /// Height above the sensor plane from which depth rays start.
    pub(crate) fn ray_start(&self) -> f64 {
        2.0 * self.max_press_depth
    }
}

/// Row-major depth image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileImage {
    pub size: usize,
    pub depth: Vec<f32>,
}

impl TactileImage {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            depth: vec![0.0; size * size],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.depth[row * self.size + col]
    }

    pub fn mean(&self) -> f64 {
        self.depth.iter().map(|&v| v as f64).sum::<f64>() / self.depth.len() as f64
    }

    /// Mean intensity on the 0..=255 scale.
    pub fn intensity(&self) -> f64 {
        255.0 * self.mean()
    }
}

/// One simulated press. `pose` maps sensor coordinates to world; the sensor
/// looks along its −z axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TouchRecord {
    pub shape_id: u64,
    pub pose: Pose,
    pub image: TactileImage,
    /// Contact surface samples in world coordinates, with outward normals.
    pub local_cloud: PointCloud,
}

/// Start point and approach direction of a press.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TouchRay {
    pub origin: Vec3,
    pub dir: UnitVec3,
}

/// Origin uniform on the sphere of radius [`APPROACH_RADIUS`] around the
/// mesh's bounding-box center, aimed at that center.
pub fn sample_touch_ray(mesh: &TriangleMesh, seed: u64) -> TouchRay {
    let center = mesh.bounds().center();
    let u = Vec3::from(UnitSphere.sample(&mut rng::stream(seed, 0)));
    TouchRay {
        origin: center + u * APPROACH_RADIUS,
        dir: UnitVec3::new_normalize(-u),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;

    #[test]
    fn touch_rays_start_on_approach_sphere() {
        let m = icosphere(2);
        for seed in 0..50 {
            let r = sample_touch_ray(&m, seed);
            assert!((r.origin.norm() - APPROACH_RADIUS).abs() < 1e-9);
            assert!((r.dir.as_ref() + r.origin / r.origin.norm()).norm() < 1e-12);
            assert_eq!(r, sample_touch_ray(&m, seed));
        }
    }

    #[test]
    fn touch_origins_are_centered() {
        let m = icosphere(1);
        let n = 10_000;
        let mean = (0..n)
            .map(|s| sample_touch_ray(&m, s).origin)
            .sum::<Vec3>()
            / n as f64;
        // Each coordinate of a uniform point on a sphere of radius R has variance R²/3.
        let sigma = APPROACH_RADIUS / (3.0 * n as f64).sqrt();
        assert!(mean.amax() < 3.0 * sigma, "{mean:?}");
    }

    #[test]
    fn spec_validation() {
        assert!(SensorSpec::default().validate().is_ok());
        let bad = SensorSpec {
            image_size: 4,
            ..SensorSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = SensorSpec {
            step: 0.0,
            ..SensorSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
