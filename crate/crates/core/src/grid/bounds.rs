//! Traceable scene volume: the enlarged hull of cameras and object boxes.

use crate::error::{Error, Result};
use crate::scene::camera::Camera;

const MIN_EXTENT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBounds {
    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn size(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diameter(&self) -> f64 {
        let s = self.size();
        (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.max[a] > self.min[a]) {
                return Err(Error::Config(format!(
                    "degenerate bounds on axis {a}: [{}, {}]",
                    self.min[a], self.max[a]
                )));
            }
        }
        Ok(())
    }
}

/// Axis-aligned hull of camera centers and box corners, scaled about its
/// center by `enlargement`, with each extent floored at 0.1.
pub fn compute_scene_bounds(
    cameras: &[Camera],
    object_boxes: Option<&[([f64; 3], [f64; 3])]>,
    enlargement: f64,
) -> Result<SceneBounds> {
    if cameras.is_empty() {
        return Err(Error::Config("bounds need at least one camera".into()));
    }
    if enlargement < 1.0 {
        return Err(Error::Config(format!(
            "enlargement must be >= 1, got {enlargement}"
        )));
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut grow = |p: [f64; 3]| {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    };
    for cam in cameras {
        grow(cam.center());
    }
    if let Some(boxes) = object_boxes {
        for (lo, hi) in boxes {
            grow(*lo);
            grow(*hi);
        }
    }
    let mut out = SceneBounds { min, max };
    let center = out.center();
    for a in 0..3 {
        let half = 0.5 * (out.max[a] - out.min[a]) * enlargement;
        let half = half.max(MIN_EXTENT / 2.0);
        out.min[a] = center[a] - half;
        out.max[a] = center[a] + half;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::camera::look_at_rotation;

    fn camera_at(p: [f64; 3]) -> Camera {
        Camera {
            fx: 50.0,
            fy: 50.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
            rotation: look_at_rotation(p, [0.0, 0.0, 0.0]),
            translation: p,
        }
    }

    #[test]
    fn unit_cube_corners_give_unit_cube() {
        let mut cams = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    cams.push(camera_at([x, y, z]));
                }
            }
        }
        let b = compute_scene_bounds(&cams, None, 1.0).unwrap();
        assert_eq!(b.min, [0.0, 0.0, 0.0]);
        assert_eq!(b.max, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn enlargement_scales_about_center() {
        let mut cams = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    cams.push(camera_at([x, y, z]));
                }
            }
        }
        let b = compute_scene_bounds(&cams, None, 1.5).unwrap();
        for a in 0..3 {
            assert!((b.min[a] + 0.25).abs() < 1e-12);
            assert!((b.max[a] - 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn single_camera_inflates_to_minimum_extent() {
        let b = compute_scene_bounds(&[camera_at([2.0, 3.0, 4.0])], None, 1.0).unwrap();
        for a in 0..3 {
            assert!((b.max[a] - b.min[a] - 0.1).abs() < 1e-12);
        }
        assert_eq!(b.center(), [2.0, 3.0, 4.0]);
    }

    #[test]
    fn boxes_extend_the_hull() {
        let cams = vec![camera_at([0.0, 0.0, 0.0]), camera_at([1.0, 1.0, 1.0])];
        let boxes = [([-2.0, 0.0, 0.0], [-1.0, 0.5, 0.5])];
        let b = compute_scene_bounds(&cams, Some(&boxes), 1.0).unwrap();
        assert_eq!(b.min[0], -2.0);
        assert_eq!(b.max[0], 1.0);
    }
}
