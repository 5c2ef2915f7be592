//! Precomputed element-index maps: one mechanism for window partitioning,
//! cyclic shifts, neighborhood concatenation, permutes, and broadcasts.

use crate::autodiff::array::NdArray;
use crate::par;
use std::sync::Arc;

/// Sentinel map entry that reads as zero (used for padded positions).
pub const PAD: u32 = u32::MAX;

/// `out[i] = src[map[i]]`, with `PAD` entries producing zero. Maps are built
/// once per model configuration and shared across steps.
#[derive(Debug)]
pub struct IndexPlan {
    pub out_shape: Vec<usize>,
    pub map: Vec<u32>,
    pub src_len: usize,
}

impl IndexPlan {
    pub fn new(out_shape: Vec<usize>, map: Vec<u32>, src_len: usize) -> Arc<Self> {
        debug_assert_eq!(out_shape.iter().product::<usize>(), map.len());
        debug_assert!(map.iter().all(|&m| m == PAD || (m as usize) < src_len));
        Arc::new(IndexPlan {
            out_shape,
            map,
            src_len,
        })
    }
}

pub fn gather(x: &NdArray, plan: &IndexPlan) -> NdArray {
    assert_eq!(x.len(), plan.src_len, "index plan source length mismatch");
    let xd = x.data();
    let mut out = NdArray::zeros(plan.out_shape.clone());
    let n = out.len();
    let chunk = n.div_ceil(64).max(1);
    par::for_each_chunk_mut(out.data_mut(), chunk, |ci, o| {
        let base = ci * chunk;
        for (i, v) in o.iter_mut().enumerate() {
            let m = plan.map[base + i];
            *v = if m == PAD { 0.0 } else { xd[m as usize] };
        }
    });
    out
}

/// Backward of `gather`: scatter-add along the map. Sequential so duplicate
/// targets accumulate in a fixed order; `PAD` entries drop their gradient.
pub fn scatter_add(grad_out: &NdArray, plan: &IndexPlan, src_shape: &[usize]) -> NdArray {
    let mut dsrc = NdArray::zeros(src_shape.to_vec());
    let dd = dsrc.data_mut();
    for (i, &m) in plan.map.iter().enumerate() {
        if m != PAD {
            dd[m as usize] += grad_out.data()[i];
        }
    }
    dsrc
}
