//! Canonical radiance-and-density grids: scene bounds, density-to-opacity
//! conversion, field-to-grid extraction, and the `.grid` container format.

mod bounds;
mod extract;
mod io;

pub use bounds::{compute_scene_bounds, SceneBounds};
pub use extract::{extract_grid, extract_semantic_labels};
pub use io::{read_grid, read_label_grid, write_grid, write_label_grid};

use crate::error::{Error, Result};

/// Default preset distance for density-to-opacity conversion.
pub const DEFAULT_DELTA: f64 = 0.01;

/// Opacity threshold below which a voxel counts as empty.
pub const OCCUPANCY_EPS: f64 = 0.01;

/// Converts volume density to opacity over a preset distance:
/// `alpha = 1 - exp(-sigma * delta)`.
pub fn alpha_from_sigma(sigma: f64, delta: f64) -> Result<f64> {
    if sigma < 0.0 {
        return Err(Error::Domain(format!("negative density {sigma}")));
    }
    if delta <= 0.0 {
        return Err(Error::Domain(format!("non-positive delta {delta}")));
    }
    Ok(1.0 - (-sigma * delta).exp())
}

/// Geometry of a grid: resolution, world bounds, preset distance.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Extents (H, W, D) == (x, y, z) voxel counts.
    pub resolution: [usize; 3],
    pub bounds: SceneBounds,
    pub delta: f64,
}

impl GridSpec {
    pub fn new(resolution: [usize; 3], bounds: SceneBounds) -> Self {
        GridSpec {
            resolution,
            bounds,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.iter().product()
    }

    /// World position of the center of voxel `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let f = |idx: usize, axis: usize| {
            self.bounds.min[axis]
                + (idx as f64 + 0.5) / self.resolution[axis] as f64
                    * (self.bounds.max[axis] - self.bounds.min[axis])
        };
        [f(i, 0), f(j, 1), f(k, 2)]
    }

    /// Voxel index containing a world position (unclamped, floored).
    pub fn voxel_of(&self, p: [f64; 3]) -> [isize; 3] {
        let f = |axis: usize| {
            ((p[axis] - self.bounds.min[axis]) / (self.bounds.max[axis] - self.bounds.min[axis])
                * self.resolution[axis] as f64)
                .floor() as isize
        };
        [f(0), f(1), f(2)]
    }

    /// Continuous grid coordinate (in voxel units) of a world position.
    pub fn grid_coord(&self, p: [f64; 3]) -> [f64; 3] {
        let f = |axis: usize| {
            (p[axis] - self.bounds.min[axis]) / (self.bounds.max[axis] - self.bounds.min[axis])
                * self.resolution[axis] as f64
        };
        [f(0), f(1), f(2)]
    }
}

/// Dense H x W x D x 4 grid of (r, g, b, alpha), stored `[i][j][k][c]` with
/// the channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceDensityGrid {
    pub spec: GridSpec,
    pub values: Vec<f32>,
}

impl RadianceDensityGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.voxel_count() * 4;
        RadianceDensityGrid {
            spec,
            values: vec![0.0; n],
        }
    }

    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [_, w, d] = self.spec.resolution;
        ((i * w + j) * d + k) * 4
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> [f32; 4] {
        let base = self.voxel_index(i, j, k);
        [
            self.values[base],
            self.values[base + 1],
            self.values[base + 2],
            self.values[base + 3],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.spec.voxel_count() * 4 {
            return Err(Error::Dimension(format!(
                "grid holds {} values, resolution {:?} needs {}",
                self.values.len(),
                self.spec.resolution,
                self.spec.voxel_count() * 4
            )));
        }
        if let Some(pos) = self
            .values
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::Domain(format!(
                "grid value {} at flat index {pos} outside [0,1]",
                self.values[pos]
            )));
        }
        Ok(())
    }
}

/// Integer label grid sharing the `.grid` container (version 2).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub spec: GridSpec,
    pub labels: Vec<u16>,
}
