//! Pinhole cameras "looking down -z" (x right, y up) and ray generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::SceneBounds;
use crate::scene::math::{self, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-from-camera rotation (columns are the camera axes in world space).
    pub rotation: Mat3,
    /// Camera center in world space.
    pub translation: Vec3,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config("camera focal lengths must be positive".into()));
        }
        let r = &self.rotation;
        let rt_r = math::mat_mul(&math::transpose(r), r);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (rt_r[i][j] - want).abs() > 1e-6 {
                    return Err(Error::Config(format!(
                        "camera rotation not orthonormal at ({i},{j}): {}",
                        rt_r[i][j]
                    )));
                }
            }
        }
        if (math::det(r) - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "camera rotation determinant {} != +1",
                math::det(r)
            )));
        }
        Ok(())
    }

    /// World-space ray direction through pixel center `(px, py)` (row-major
    /// image coordinates; `py` grows downward).
    pub fn ray_direction(&self, px: f64, py: f64) -> Vec3 {
        let dir_cam = [
            (px + 0.5 - self.cx) / self.fx,
            -(py + 0.5 - self.cy) / self.fy,
            -1.0,
        ];
        math::normalize(math::mat_vec(&self.rotation, dir_cam))
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Unit optical-axis direction (where the camera looks).
    pub fn forward(&self) -> Vec3 {
        // -z column of the rotation
        [
            -self.rotation[0][2],
            -self.rotation[1][2],
            -self.rotation[2][2],
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn point_at(&self, t: f64) -> Vec3 {
        math::add(self.origin, math::scale(self.direction, t))
    }
}

/// Slab intersection of a ray with `bounds`; near clamped to 1e-3 and the
/// traversed segment capped at the bounds diameter.
pub fn clip_ray_to_bounds(origin: Vec3, direction: Vec3, bounds: &SceneBounds) -> Option<Ray> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if direction[a].abs() < 1e-12 {
            if origin[a] < bounds.min[a] || origin[a] > bounds.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / direction[a];
        let mut ta = (bounds.min[a] - origin[a]) * inv;
        let mut tb = (bounds.max[a] - origin[a]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t1 <= t0 {
        return None;
    }
    let t_near = t0.max(1e-3);
    let t_far = t1.min(t_near + bounds.diameter());
    if t_far <= t_near {
        return None;
    }
    Some(Ray {
        origin,
        direction,
        t_near,
        t_far,
    })
}

/// Builds a world-from-camera rotation that points the optical axis (-z)
/// from `position` toward `target`, with `up` approximately +z world.
pub fn look_at_rotation(position: Vec3, target: Vec3) -> Mat3 {
    let z_cam = math::normalize(math::sub(position, target));
    let up = [0.0, 0.0, 1.0];
    let mut x_cam = math::cross(up, z_cam);
    if math::norm(x_cam) < 1e-9 {
        x_cam = [1.0, 0.0, 0.0];
    }
    let x_cam = math::normalize(x_cam);
    let y_cam = math::cross(z_cam, x_cam);
    // columns are the camera axes
    [
        [x_cam[0], y_cam[0], z_cam[0]],
        [x_cam[1], y_cam[1], z_cam[1]],
        [x_cam[2], y_cam[2], z_cam[2]],
    ]
}

/// Cameras on a sphere enclosing the bounds, looking at the bounds center,
/// stratified in azimuth with jittered elevation. Deterministic per seed.
pub fn sample_camera_trajectory(
    bounds: &SceneBounds,
    count: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<Vec<Camera>> {
    if count < 2 {
        return Err(Error::Config(format!(
            "camera trajectory needs at least 2 cameras for direction averaging, got {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = bounds.center();
    let radius = 1.6 * 0.5 * bounds.diameter();
    let focal = 1.1 * width as f64; // ~49 degree horizontal field of view
    let mut cameras = Vec::with_capacity(count);
    for i in 0..count {
        let azimuth = (i as f64 + rng.gen_range(-0.2..0.2)) / count as f64 * std::f64::consts::TAU;
        let elevation: f64 = rng.gen_range(0.25..0.9); // radians above the horizon
        let pos = math::add(
            center,
            [
                radius * azimuth.cos() * elevation.cos(),
                radius * azimuth.sin() * elevation.cos(),
                radius * elevation.sin(),
            ],
        );
        cameras.push(Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: look_at_rotation(pos, center),
            translation: pos,
        });
    }
    Ok(cameras)
}
