use super::{extract_local_cloud, SensorSpec, TactileImage, TouchRay, TouchRecord};
use crate::error::{Error, Result};
use crate::geometry::{MeshIndex, Pose, UnitVec3, Vec3};

/// Indentation seen along one pixel ray whose first hit is at `t` from a
/// start point `start` above the sensor plane. A first hit on a back face
/// means the start point is inside the object, which saturates the pixel.
fn pixel_depth(index: &MeshIndex, origin: &Vec3, dir: &UnitVec3, start: f64, depth: f64) -> f32 {
    match index.ray_intersect(origin, dir) {
        None => 0.0,
        Some(hit) => {
            let entering = index
                .mesh()
                .face_normal(hit.face)
                .is_none_or(|n| n.dot(dir) <= 0.0);
            if !entering {
                return 1.0;
            }
            ((start - hit.t) / depth).clamp(0.0, 1.0) as f32
        }
    }
}

/// Orthographic depth image. Rays start `2·max_press_depth` above the sensor
/// plane and travel along the sensor's −z axis; a pixel holds the height of
/// the first surface above the plane divided by `max_press_depth`, clamped to
/// `[0, 1]`. Pixels whose centers fall outside the circular pad are 0.
pub fn render_depth(index: &MeshIndex, pose: &Pose, spec: &SensorSpec) -> TactileImage {
    let n = spec.image_size;
    let mut image = TactileImage::zeros(n);
    let dir = UnitVec3::new_normalize(-pose.axis(2));
    let start = spec.ray_start();
    for row in 0..n {
        for col in 0..n {
            let (x, y) = spec.pixel_center(row, col);
            if !spec.in_pad(x, y) {
                continue;
            }
            let origin = pose.transform_point(&Vec3::new(x, y, start));
            image.depth[row * n + col] =
                pixel_depth(index, &origin, &dir, start, spec.max_press_depth);
        }
    }
    image
}

/// Sensor pose with its plane centered at `center`, looking along `dir`.
pub(crate) fn sensor_pose(center: Vec3, dir: &UnitVec3) -> Pose {
    Pose::looking_along(&-dir.into_inner(), center)
}

/// Advances the sensor plane from `ray.origin` along `ray.dir` in increments
/// of `spec.step` and stops at the first position whose rendered mean
/// intensity exceeds the threshold. The contact cloud (`cloud_points`
/// samples, seeded by `seed`) is extracted at the stopping pose.
///
/// Per-pixel first-hit distances from the starting plane predict the image at
/// every step, so only candidate stopping positions are rendered.
pub fn press(
    index: &MeshIndex,
    ray: &TouchRay,
    spec: &SensorSpec,
    shape_id: u64,
    cloud_points: usize,
    seed: u64,
) -> Result<TouchRecord> {
    spec.validate()?;
    let dir = ray.dir;
    let start_pose = sensor_pose(ray.origin, &dir);
    let n = spec.image_size;

    // Distance from the starting plane to the first surface under each pixel.
    let mut first_hit = Vec::new();
    for row in 0..n {
        for col in 0..n {
            let (x, y) = spec.pixel_center(row, col);
            if !spec.in_pad(x, y) {
                continue;
            }
            let origin = start_pose.transform_point(&Vec3::new(x, y, 0.0));
            if let Some(hit) = index.ray_intersect(&origin, &dir) {
                let entering = index
                    .mesh()
                    .face_normal(hit.face)
                    .is_none_or(|nrm| nrm.dot(&dir) <= 0.0);
                first_hit.push(if entering { hit.t } else { f64::NEG_INFINITY });
            }
        }
    }
    if first_hit.is_empty() {
        return Err(Error::NoContact);
    }
    let far = index
        .mesh()
        .vertices
        .iter()
        .map(|v| (v - ray.origin).dot(&dir))
        .fold(f64::NEG_INFINITY, f64::max);
    let limit = far + spec.max_press_depth;
    let pixels = (n * n) as f64;
    let h = spec.max_press_depth;

    let mut k: u64 = 0;
    loop {
        let s = k as f64 * spec.step;
        if s > limit {
            return Err(Error::NoContact);
        }
        let predicted: f64 = first_hit
            .iter()
            .map(|&t| ((s - t) / h).clamp(0.0, 1.0))
            .sum::<f64>()
            / pixels;
        if 255.0 * predicted > spec.intensity_threshold {
            let pose = sensor_pose(ray.origin + dir.as_ref() * s, &dir);
            let image = render_depth(index, &pose, spec);
            if image.intensity() > spec.intensity_threshold {
                let local_cloud = extract_local_cloud(index, &pose, spec, cloud_points, seed)?;
                return Ok(TouchRecord {
                    shape_id,
                    pose,
                    image,
                    local_cloud,
                });
            }
        }
        k += 1;
    }
}
