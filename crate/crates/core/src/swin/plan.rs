//! Precomputed index plans for windowed attention: partitioning (with
//! zero-padding to window multiples and optional cyclic shift), head
//! splitting, relative-bias broadcast, cross-window attention masks, and
//! patch-merging neighborhoods.
//!
//! Token tensors are `[P, C]` with spatial order row-major (x slowest,
//! z fastest); all spatial structure lives in these maps.

use std::sync::Arc;

use crate::autodiff::kernels::indexmap::{IndexPlan, PAD};
use crate::autodiff::NdArray;

pub struct AttnPlan {
    /// `[P, C] -> [nw * t, C]`, pad + optional cyclic shift + window split.
    pub partition: Arc<IndexPlan>,
    /// `[nw * t, C] -> [P, C]`, inverse of `partition` restricted to real tokens.
    pub reverse: Arc<IndexPlan>,
    /// `[nw * t, 3C] -> [nw * h, t, d]` for each of q, k, v.
    pub q: Arc<IndexPlan>,
    pub k: Arc<IndexPlan>,
    pub v: Arc<IndexPlan>,
    /// `[nw * h, t, d] -> [nw * t, C]`.
    pub merge_heads: Arc<IndexPlan>,
    /// Bias table `[h * (2w-1)^3] -> [nw * h, t, t]`.
    pub bias: Arc<IndexPlan>,
    /// Additive attention mask (0 or -inf), present when shifted or padded.
    pub mask: Option<NdArray>,
    pub num_windows: usize,
    pub tokens_per_window: usize,
    pub heads: usize,
    pub head_dim: usize,
}

fn ceil_to(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Builds the full attention plan for one stage.
///
/// `dims`: real token extents; `window`: effective window edge; `shift`:
/// cyclic displacement (0 or window/2); `channels = heads * head_dim`.
pub fn attention_plan(
    dims: [usize; 3],
    channels: usize,
    heads: usize,
    window: usize,
    shift: usize,
) -> AttnPlan {
    let w = window;
    let [sx, sy, sz] = dims;
    let pd = [ceil_to(sx, w), ceil_to(sy, w), ceil_to(sz, w)];
    let nw_axis = [pd[0] / w, pd[1] / w, pd[2] / w];
    let nw = nw_axis[0] * nw_axis[1] * nw_axis[2];
    let t = w * w * w;
    let p_real = sx * sy * sz;
    let c = channels;
    let d = c / heads;
    assert_eq!(d * heads, c, "heads must divide channels");
    let padded = pd != dims;

    // out position -> (source voxel index or PAD, pre-shift region id)
    let mut src_of = vec![PAD; nw * t];
    let mut region = vec![-1i64; nw * t];
    for wx in 0..nw_axis[0] {
        for wy in 0..nw_axis[1] {
            for wz in 0..nw_axis[2] {
                let wi = (wx * nw_axis[1] + wy) * nw_axis[2] + wz;
                for lx in 0..w {
                    for ly in 0..w {
                        for lz in 0..w {
                            let li = (lx * w + ly) * w + lz;
                            let xp = (wx * w + lx + shift) % pd[0];
                            let yp = (wy * w + ly + shift) % pd[1];
                            let zp = (wz * w + lz + shift) % pd[2];
                            if xp < sx && yp < sy && zp < sz {
                                src_of[wi * t + li] = ((xp * sy + yp) * sz + zp) as u32;
                                region[wi * t + li] =
                                    (((xp / w) * nw_axis[1] + yp / w) * nw_axis[2] + zp / w)
                                        as i64;
                            }
                        }
                    }
                }
            }
        }
    }

    let mut part_map = vec![PAD; nw * t * c];
    for (pos, &src) in src_of.iter().enumerate() {
        if src != PAD {
            for ch in 0..c {
                part_map[pos * c + ch] = src * c as u32 + ch as u32;
            }
        }
    }
    let partition = IndexPlan::new(vec![nw * t, c], part_map, p_real * c);

    let mut rev_map = vec![PAD; p_real * c];
    for (pos, &src) in src_of.iter().enumerate() {
        if src != PAD {
            for ch in 0..c {
                rev_map[src as usize * c + ch] = (pos * c + ch) as u32;
            }
        }
    }
    let reverse = IndexPlan::new(vec![p_real, c], rev_map, nw * t * c);

    let head_plan = |which: usize| {
        let mut map = vec![0u32; nw * heads * t * d];
        for wi in 0..nw {
            for hi in 0..heads {
                for li in 0..t {
                    for di in 0..d {
                        let out = (((wi * heads + hi) * t + li) * d) + di;
                        map[out] = ((wi * t + li) * 3 * c + which * c + hi * d + di) as u32;
                    }
                }
            }
        }
        IndexPlan::new(vec![nw * heads, t, d], map, nw * t * 3 * c)
    };
    let (q, k, v) = (head_plan(0), head_plan(1), head_plan(2));

    let mut merge_map = vec![0u32; nw * t * c];
    for wi in 0..nw {
        for li in 0..t {
            for hi in 0..heads {
                for di in 0..d {
                    let out = (wi * t + li) * c + hi * d + di;
                    merge_map[out] = ((((wi * heads + hi) * t) + li) * d + di) as u32;
                }
            }
        }
    }
    let merge_heads = IndexPlan::new(vec![nw * t, c], merge_map, nw * heads * t * d);

    // relative position bias: same local geometry in every window
    let span = 2 * w - 1;
    let mut rel = vec![0u32; t * t];
    for i in 0..t {
        let (ix, iy, iz) = (i / (w * w), (i / w) % w, i % w);
        for j in 0..t {
            let (jx, jy, jz) = (j / (w * w), (j / w) % w, j % w);
            let dx = ix + w - 1 - jx;
            let dy = iy + w - 1 - jy;
            let dz = iz + w - 1 - jz;
            rel[i * t + j] = ((dx * span + dy) * span + dz) as u32;
        }
    }
    let table = span * span * span;
    let mut bias_map = vec![0u32; nw * heads * t * t];
    for wi in 0..nw {
        for hi in 0..heads {
            let base = (wi * heads + hi) * t * t;
            for ij in 0..t * t {
                bias_map[base + ij] = (hi * table) as u32 + rel[ij];
            }
        }
    }
    let bias = IndexPlan::new(vec![nw * heads, t, t], bias_map, heads * table);

    let mask = if shift > 0 || padded {
        let mut m = NdArray::zeros(vec![nw * heads, t, t]);
        let md = m.data_mut();
        for wi in 0..nw {
            for i in 0..t {
                let ri = region[wi * t + i];
                for j in 0..t {
                    let rj = region[wi * t + j];
                    let allowed = i == j || (ri == rj && ri >= 0);
                    if !allowed {
                        for hi in 0..heads {
                            md[((wi * heads + hi) * t + i) * t + j] = f64::NEG_INFINITY;
                        }
                    }
                }
            }
        }
        Some(m)
    } else {
        None
    };

    AttnPlan {
        partition,
        reverse,
        q,
        k,
        v,
        merge_heads,
        bias,
        mask,
        num_windows: nw,
        tokens_per_window: t,
        heads,
        head_dim: d,
    }
}

/// `[P, C] -> [P/8, 8C]`: concatenates each 2x2x2 neighborhood, corners in
/// lexicographic (dx, dy, dz) order.
pub fn patch_merge_plan(dims: [usize; 3], channels: usize) -> Arc<IndexPlan> {
    let [sx, sy, sz] = dims;
    assert!(
        sx % 2 == 0 && sy % 2 == 0 && sz % 2 == 0,
        "patch merging needs even extents, got {dims:?}"
    );
    let (mx, my, mz) = (sx / 2, sy / 2, sz / 2);
    let c = channels;
    let mut map = vec![0u32; mx * my * mz * 8 * c];
    for x in 0..mx {
        for y in 0..my {
            for z in 0..mz {
                let out_base = ((x * my + y) * mz + z) * 8 * c;
                for dx in 0..2 {
                    for dy in 0..2 {
                        for dz in 0..2 {
                            let n = (dx * 2 + dy) * 2 + dz;
                            let src = (((2 * x + dx) * sy + (2 * y + dy)) * sz + (2 * z + dz)) * c;
                            for ch in 0..c {
                                map[out_base + n * c + ch] = (src + ch) as u32;
                            }
                        }
                    }
                }
            }
        }
    }
    IndexPlan::new(vec![mx * my * mz, 8 * c], map, sx * sy * sz * c)
}

/// Channels-first volume `[C, X, Y, Z] -> [P, C]` token layout.
pub fn volume_to_tokens_plan(dims: [usize; 3], channels: usize) -> Arc<IndexPlan> {
    let p: usize = dims.iter().product();
    let mut map = vec![0u32; p * channels];
    for pos in 0..p {
        for c in 0..channels {
            map[pos * channels + c] = (c * p + pos) as u32;
        }
    }
    IndexPlan::new(vec![p, channels], map, p * channels)
}

/// Token layout `[P, C] -> [C, X, Y, Z]` channels-first volume.
pub fn tokens_to_volume_plan(dims: [usize; 3], channels: usize) -> Arc<IndexPlan> {
    let p: usize = dims.iter().product();
    let mut map = vec![0u32; p * channels];
    for c in 0..channels {
        for pos in 0..p {
            map[c * p + pos] = (pos * channels + c) as u32;
        }
    }
    IndexPlan::new(vec![channels, dims[0], dims[1], dims[2]], map, p * channels)
}

/// Broadcast a `[C]` vector to `[P, C]` rows.
pub fn broadcast_rows_plan(positions: usize, channels: usize) -> Arc<IndexPlan> {
    let mut map = vec![0u32; positions * channels];
    for pos in 0..positions {
        for c in 0..channels {
            map[pos * channels + c] = c as u32;
        }
    }
    IndexPlan::new(vec![positions, channels], map, channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::kernels::indexmap::gather;

    #[test]
    fn partition_then_reverse_is_identity() {
        for &(dims, w, shift) in &[
            ([4usize, 4, 4], 2usize, 0usize),
            ([4, 4, 4], 2, 1),
            ([5, 5, 5], 4, 0), // padded
            ([5, 5, 5], 4, 2), // padded + shifted
            ([10, 10, 10], 4, 2),
        ] {
            let c = 3;
            let plan = attention_plan(dims, c, 1, w, shift);
            let p: usize = dims.iter().product();
            let x = NdArray::new(
                vec![p, c],
                (0..p * c).map(|v| v as f64 * 0.25 + 1.0).collect(),
            );
            let windowed = gather(&x, &plan.partition);
            let back = gather(&windowed, &plan.reverse);
            assert_eq!(back.data(), x.data(), "dims {dims:?} w {w} shift {shift}");
        }
    }

    #[test]
    fn window_count_rule() {
        // 40^3 tokens, W=4 -> 10 windows per axis, cubed
        let plan = attention_plan([40, 40, 40], 8, 2, 4, 0);
        assert_eq!(plan.num_windows, 1000);
        assert_eq!(plan.tokens_per_window, 64);
        assert!(plan.mask.is_none());
    }

    #[test]
    fn padded_stage_has_mask_and_more_windows() {
        // 10^3 padded to 12^3 -> 27 windows
        let plan = attention_plan([10, 10, 10], 8, 2, 4, 0);
        assert_eq!(plan.num_windows, 27);
        assert!(plan.mask.is_some());
    }

    #[test]
    fn shifted_mask_blocks_cross_window_pairs() {
        let plan = attention_plan([4, 4, 4], 2, 1, 2, 1);
        let mask = plan.mask.as_ref().unwrap();
        // every window must contain at least one blocked pair after a shift
        let t = plan.tokens_per_window;
        let mut blocked = 0;
        for v in mask.data() {
            if *v == f64::NEG_INFINITY {
                blocked += 1;
            }
        }
        assert!(blocked > 0);
        // diagonal always allowed
        for wh in 0..plan.num_windows * plan.heads {
            for i in 0..t {
                assert_eq!(mask.data()[(wh * t + i) * t + i], 0.0);
            }
        }
    }

    #[test]
    fn merge_plan_concatenates_neighborhoods() {
        let plan = patch_merge_plan([2, 2, 2], 1);
        let x = NdArray::new(vec![8, 1], (0..8).map(|v| v as f64).collect());
        let y = gather(&x, &plan);
        assert_eq!(y.shape(), &[1, 8]);
        // corners in (dx,dy,dz) lexicographic order over row-major source
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn volume_token_roundtrip() {
        let dims = [2, 3, 2];
        let c = 4;
        let p: usize = dims.iter().product();
        let x = NdArray::new(vec![p, c], (0..p * c).map(|v| v as f64).collect());
        let vol = gather(&x, &tokens_to_volume_plan(dims, c));
        assert_eq!(vol.shape(), &[4, 2, 3, 2]);
        let back = gather(&vol, &volume_to_tokens_plan(dims, c));
        assert_eq!(back.data(), x.data());
    }
}
