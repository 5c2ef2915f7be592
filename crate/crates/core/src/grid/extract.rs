//! Field-to-grid extraction: query the field at every voxel center from all
//! training cameras and average.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, LabelGrid, RadianceDensityGrid};
use crate::par;
use crate::scene::analytic::SyntheticScene;
use crate::scene::camera::Camera;
use crate::scene::field::Field;
use crate::scene::math::{self, Vec3};

/// Voxels per parallel work item; each chunk issues one batched field query.
const CHUNK: usize = 2048;

/// Anchored mean: `v0 + sum(v_i - v0) / n`. Exact for identical inputs and
/// for antisymmetric pairs, unlike `sum / n`.
#[inline]
fn anchored_mean(first: f64, sum_of_diffs: f64, n: usize) -> f64 {
    first + sum_of_diffs / n as f64
}

/// Samples the canonical radiance-and-density grid.
///
/// Every voxel center is queried once per camera with the unit direction
/// from that camera's center to the voxel; colors average arithmetically and
/// the averaged density converts to opacity via `alpha_from_sigma`.
///
/// Cameras are first sorted by a canonical position key, so the summation
/// order (and therefore the output, bit for bit) does not depend on the
/// caller's camera ordering or on scheduling.
pub fn extract_grid(
    field: &dyn Field,
    cameras: &[Camera],
    spec: &GridSpec,
) -> Result<RadianceDensityGrid> {
    if cameras.len() < 2 {
        return Err(Error::Config(format!(
            "grid extraction averages over >= 2 cameras, got {}",
            cameras.len()
        )));
    }
    spec.bounds.validate()?;
    if spec.delta <= 0.0 {
        return Err(Error::Config("grid delta must be positive".into()));
    }
    let mut order: Vec<usize> = (0..cameras.len()).collect();
    order.sort_by(|&a, &b| {
        let ka = cameras[a].translation;
        let kb = cameras[b].translation;
        ka.partial_cmp(&kb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let centers: Vec<Vec3> = order.iter().map(|&i| cameras[i].center()).collect();
    let n_cam = centers.len();
    let [rx, ry, rz] = spec.resolution;
    let n_vox = rx * ry * rz;
    let mut grid = RadianceDensityGrid::zeros(spec.clone());
    par::for_each_chunk_mut(&mut grid.values, CHUNK * 4, |chunk_idx, out| {
        let v0 = chunk_idx * CHUNK;
        let v1 = (v0 + CHUNK).min(n_vox);
        let count = v1 - v0;
        let mut points = Vec::with_capacity(count * n_cam);
        let mut dirs = Vec::with_capacity(count * n_cam);
        for v in v0..v1 {
            let i = v / (ry * rz);
            let j = (v / rz) % ry;
            let k = v % rz;
            let p = spec.voxel_center(i, j, k);
            for c in &centers {
                points.push(p);
                dirs.push(math::normalize(math::sub(p, *c)));
            }
        }
        let mut rgb = vec![[0.0f64; 3]; points.len()];
        let mut sigma = vec![0.0f64; points.len()];
        field.query_batch(&points, &dirs, &mut rgb, &mut sigma);
        for local in 0..count {
            let base = local * n_cam;
            let first_rgb = rgb[base];
            let first_sigma = sigma[base];
            let mut drgb = [0.0f64; 3];
            let mut dsigma = 0.0f64;
            for c in 0..n_cam {
                for ch in 0..3 {
                    drgb[ch] += rgb[base + c][ch] - first_rgb[ch];
                }
                dsigma += sigma[base + c] - first_sigma;
            }
            let mean_sigma = anchored_mean(first_sigma, dsigma, n_cam).max(0.0);
            let alpha = 1.0 - (-mean_sigma * spec.delta).exp();
            for ch in 0..3 {
                out[local * 4 + ch] = anchored_mean(first_rgb[ch], drgb[ch], n_cam) as f32;
            }
            out[local * 4 + 3] = alpha as f32;
        }
    });
    Ok(grid)
}

/// Rasterizes per-voxel semantic labels from the analytic scene.
pub fn extract_semantic_labels(synthetic: &SyntheticScene, spec: &GridSpec) -> LabelGrid {
    let [rx, ry, rz] = spec.resolution;
    let mut labels = vec![0u16; rx * ry * rz];
    par::for_each_chunk_mut(&mut labels, rz, |row, out| {
        let i = row / ry;
        let j = row % ry;
        for (k, o) in out.iter_mut().enumerate() {
            let p = spec.voxel_center(i, j, k);
            *o = synthetic.scene.label_at(p, &synthetic.labels);
        }
    });
    LabelGrid {
        spec: spec.clone(),
        labels,
    }
}
