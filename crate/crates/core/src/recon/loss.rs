//! Opacity-aware masked reconstruction objective.
//!
//! `L_alpha` averages squared opacity error over all voxels inside masked
//! patches (count M). `L_rad` averages the 3-channel summed squared radiance
//! error over masked voxels whose target opacity exceeds the preset distance
//! delta (count K); `K = 0` yields `L_rad = 0`. Unmasked voxels contribute
//! nothing to either term.

use crate::autodiff::graph::Ops;
use crate::autodiff::NdArray;
use crate::error::{Error, Result};
use crate::grid::RadianceDensityGrid;
use crate::swin::MaskSpec;

/// The pretraining objective record.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_rad: f64,
    pub l_alpha: f64,
    /// Opacity-active masked voxels (targets above delta).
    pub k: usize,
    /// Masked voxels.
    pub m: usize,
    pub total: f64,
}

/// Builds the loss on an ops backend. `prediction` is `[4, H, W, D]`;
/// `target` is the unmasked grid. Returns the scalar loss handle plus the
/// numeric breakdown.
pub fn recon_loss<O: Ops>(
    ops: &mut O,
    prediction: &O::T,
    target: &RadianceDensityGrid,
    mask: &MaskSpec,
    delta: f64,
) -> Result<(O::T, LossBreakdown)> {
    if delta <= 0.0 {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let [rx, ry, rz] = target.spec.resolution;
    let pshape = ops.shape(prediction);
    if pshape != vec![4, rx, ry, rz] {
        return Err(Error::Dimension(format!(
            "prediction shape {pshape:?} does not match target [4, {rx}, {ry}, {rz}]"
        )));
    }
    if mask.resolution != target.spec.resolution {
        return Err(Error::Dimension(format!(
            "mask resolution {:?} does not match grid {:?}",
            mask.resolution, target.spec.resolution
        )));
    }
    let n = rx * ry * rz;
    let flags = mask.voxel_flags();
    let m = flags.iter().filter(|&&f| f).count();

    // constants: target channels and gate masks in channels-first layout
    let mut target_cf = NdArray::zeros(vec![4, rx, ry, rz]);
    let mut alpha_mask = NdArray::zeros(vec![4, rx, ry, rz]);
    let mut rad_mask = NdArray::zeros(vec![4, rx, ry, rz]);
    let mut k = 0usize;
    {
        let td = target_cf.data_mut();
        for v in 0..n {
            for c in 0..4 {
                td[c * n + v] = target.values[v * 4 + c] as f64;
            }
        }
        let am = alpha_mask.data_mut();
        let rm = rad_mask.data_mut();
        for (v, &masked) in flags.iter().enumerate() {
            if !masked {
                continue;
            }
            am[3 * n + v] = 1.0;
            if f64::from(target.values[v * 4 + 3]) > delta {
                k += 1;
                rm[v] = 1.0;
                rm[n + v] = 1.0;
                rm[2 * n + v] = 1.0;
            }
        }
    }
    let target_t = ops.constant(target_cf);
    let diff = ops.sub(prediction, &target_t);
    let sq = ops.mul(&diff, &diff);

    let zero = ops.constant(NdArray::scalar(0.0));
    let l_alpha = if m > 0 {
        let am = ops.constant(alpha_mask);
        let gated = ops.mul(&sq, &am);
        let s = ops.sum_all(&gated);
        ops.scale(&s, 1.0 / m as f64)
    } else {
        zero.clone()
    };
    let l_rad = if k > 0 {
        let rm = ops.constant(rad_mask);
        let gated = ops.mul(&sq, &rm);
        let s = ops.sum_all(&gated);
        ops.scale(&s, 1.0 / k as f64)
    } else {
        zero
    };
    let total = ops.add(&l_rad, &l_alpha);
    let l_rad_v = ops.to_array(&l_rad).item();
    let l_alpha_v = ops.to_array(&l_alpha).item();
    let breakdown = LossBreakdown {
        l_rad: l_rad_v,
        l_alpha: l_alpha_v,
        k,
        m,
        total: l_rad_v + l_alpha_v,
    };
    Ok((total, breakdown))
}
