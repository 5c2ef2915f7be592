//! Volumetric patch masking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::RadianceDensityGrid;

/// Deterministic selection of masked 3D patches.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub resolution: [usize; 3],
    pub patch: usize,
    pub ratio: f64,
    pub seed: u64,
    /// Sorted flat patch indices, row-major over the patch lattice.
    pub masked: Vec<u32>,
}

impl MaskSpec {
    pub fn patch_dims(&self) -> [usize; 3] {
        [
            self.resolution[0] / self.patch,
            self.resolution[1] / self.patch,
            self.resolution[2] / self.patch,
        ]
    }

    pub fn total_patches(&self) -> usize {
        self.patch_dims().iter().product()
    }

    /// Per-patch mask flags, indexed by flat patch index.
    pub fn patch_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.total_patches()];
        for &m in &self.masked {
            flags[m as usize] = true;
        }
        flags
    }

    /// Per-voxel mask flags, row-major `[i][j][k]`.
    pub fn voxel_flags(&self) -> Vec<bool> {
        let [rx, ry, rz] = self.resolution;
        let [_px, py, pz] = self.patch_dims();
        let flags = self.patch_flags();
        let mut out = vec![false; rx * ry * rz];
        for i in 0..rx {
            for j in 0..ry {
                for k in 0..rz {
                    let pidx = ((i / self.patch) * py + j / self.patch) * pz + k / self.patch;
                    out[(i * ry + j) * rz + k] = flags[pidx];
                }
            }
        }
        out
    }
}

/// Uniform random subset of patches, without replacement, of size
/// `round(m * total)`. A seeded counter-based generator makes the selection
/// reproducible bit-exactly across runs and platforms.
pub fn mask_patches(
    resolution: [usize; 3],
    patch: usize,
    ratio: f64,
    seed: u64,
) -> Result<MaskSpec> {
    if patch == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    for (axis, &r) in resolution.iter().enumerate() {
        if r == 0 || r % patch != 0 {
            return Err(Error::Config(format!(
                "extent {r} on axis {axis} not divisible by patch size {patch}"
            )));
        }
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!(
            "mask ratio must lie in [0, 1), got {ratio}"
        )));
    }
    let total = (resolution[0] / patch) * (resolution[1] / patch) * (resolution[2] / patch);
    let count = (ratio * total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // partial Fisher-Yates: the first `count` slots are the selection
    let mut pool: Vec<u32> = (0..total as u32).collect();
    for i in 0..count {
        let j = rng.gen_range(i..total);
        pool.swap(i, j);
    }
    let mut masked: Vec<u32> = pool[..count].to_vec();
    masked.sort_unstable();
    Ok(MaskSpec {
        resolution,
        patch,
        ratio,
        seed,
        masked,
    })
}

/// Zeroes all four channels inside masked patches; other voxels untouched.
pub fn apply_mask(grid: &RadianceDensityGrid, mask: &MaskSpec) -> Result<RadianceDensityGrid> {
    if grid.spec.resolution != mask.resolution {
        return Err(Error::Dimension(format!(
            "grid resolution {:?} does not match mask resolution {:?}",
            grid.spec.resolution, mask.resolution
        )));
    }
    let mut out = grid.clone();
    let [_rx, ry, rz] = mask.resolution;
    let p = mask.patch;
    let [_px, py, pz] = mask.patch_dims();
    for &m in &mask.masked {
        let m = m as usize;
        let (mi, mj, mk) = (m / (py * pz), (m / pz) % py, m % pz);
        for i in mi * p..(mi + 1) * p {
            for j in mj * p..(mj + 1) * p {
                let base = ((i * ry + j) * rz + mk * p) * 4;
                out.values[base..base + p * 4].fill(0.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, SceneBounds};

    fn grid_of_ones(res: usize) -> RadianceDensityGrid {
        let spec = GridSpec::new(
            [res, res, res],
            SceneBounds {
                min: [0.0; 3],
                max: [1.0; 3],
            },
        );
        let n = spec.voxel_count() * 4;
        RadianceDensityGrid {
            spec,
            values: vec![1.0; n],
        }
    }

    #[test]
    fn forty_cubed_quarter_unmasked() {
        // 40^3 grid, p=4, m=0.75: 1000 patches, 250 left unmasked
        let m = mask_patches([40, 40, 40], 4, 0.75, 123).unwrap();
        assert_eq!(m.total_patches(), 1000);
        assert_eq!(m.masked.len(), 750);
        assert_eq!(m.total_patches() - m.masked.len(), 250);
    }

    #[test]
    fn zero_ratio_masks_nothing() {
        let m = mask_patches([8, 8, 8], 4, 0.0, 1).unwrap();
        assert_eq!(m.total_patches(), 8);
        assert!(m.masked.is_empty());
    }

    #[test]
    fn paper_scale_patch_count() {
        let m = mask_patches([160, 160, 160], 4, 0.75, 5).unwrap();
        assert_eq!(m.total_patches(), 64000);
        assert_eq!(m.total_patches() - m.masked.len(), 16000);
    }

    #[test]
    fn indivisible_extent_is_a_config_error() {
        assert!(mask_patches([10, 8, 8], 4, 0.5, 0).is_err());
    }

    #[test]
    fn same_seed_same_selection() {
        let a = mask_patches([16, 16, 16], 4, 0.6, 42).unwrap();
        let b = mask_patches([16, 16, 16], 4, 0.6, 42).unwrap();
        assert_eq!(a.masked, b.masked);
        let c = mask_patches([16, 16, 16], 4, 0.6, 43).unwrap();
        assert_ne!(a.masked, c.masked);
    }

    #[test]
    fn indices_unique_and_in_range() {
        let m = mask_patches([24, 24, 24], 4, 0.75, 9).unwrap();
        let total = m.total_patches() as u32;
        assert!(m.masked.windows(2).all(|w| w[0] < w[1]));
        assert!(m.masked.iter().all(|&i| i < total));
    }

    #[test]
    fn apply_mask_zero_fraction_matches_ratio_exactly() {
        let grid = grid_of_ones(40);
        let mask = mask_patches([40, 40, 40], 4, 0.75, 3).unwrap();
        let masked = apply_mask(&grid, &mask).unwrap();
        let zeros = masked.values.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, (0.75 * (40usize.pow(3) * 4) as f64) as usize);
    }

    #[test]
    fn empty_mask_is_identity_and_masking_is_idempotent() {
        let grid = grid_of_ones(8);
        let empty = mask_patches([8, 8, 8], 4, 0.0, 7).unwrap();
        assert_eq!(apply_mask(&grid, &empty).unwrap(), grid);
        let mask = mask_patches([8, 8, 8], 4, 0.5, 7).unwrap();
        let once = apply_mask(&grid, &mask).unwrap();
        let twice = apply_mask(&once, &mask).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let grid = grid_of_ones(8);
        let mask = mask_patches([16, 16, 16], 4, 0.5, 7).unwrap();
        assert!(apply_mask(&grid, &mask).is_err());
    }

    #[test]
    fn voxel_flags_count_matches() {
        let mask = mask_patches([8, 8, 8], 4, 0.5, 3).unwrap();
        let flags = mask.voxel_flags();
        let marked = flags.iter().filter(|&&f| f).count();
        assert_eq!(marked, mask.masked.len() * 64);
    }
}
