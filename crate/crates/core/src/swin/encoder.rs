//! The 3D shifted-window encoder: patch embedding with mask-token
//! substitution and positional embeddings, four stages of (S)W-MSA blocks
//! with patch merging in between, producing the four-level feature pyramid.

use std::sync::Arc;

use crate::autodiff::graph::Ops;
use crate::autodiff::params::{ParamId, ParamKind, ParamSet};
use crate::autodiff::NdArray;
use crate::error::Result;
use crate::grid::RadianceDensityGrid;
use crate::swin::config::{EncoderConfig, NUM_STAGES};
use crate::swin::mask::MaskSpec;
use crate::swin::plan::{
    attention_plan, broadcast_rows_plan, patch_merge_plan, volume_to_tokens_plan, AttnPlan,
};

const LN_EPS: f64 = 1e-5;

pub struct BlockIds {
    pub norm1: (ParamId, ParamId),
    pub qkv: (ParamId, ParamId),
    pub proj: (ParamId, ParamId),
    pub rel_bias: ParamId,
    pub norm2: (ParamId, ParamId),
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
}

pub struct StageIds {
    pub blocks: Vec<BlockIds>,
    pub out_norm: (ParamId, ParamId),
    /// LN + linear reduction after this stage (stages 0..=2).
    pub merge: Option<(ParamId, ParamId, ParamId)>,
}

pub struct EncoderIds {
    pub patch_weight: ParamId,
    pub patch_bias: ParamId,
    pub pos_embed: ParamId,
    pub mask_token: ParamId,
    pub stages: Vec<StageIds>,
}

struct StagePlan {
    dims: [usize; 3],
    channels: usize,
    /// Plan for unshifted blocks, and for shifted blocks when the stage
    /// admits a nonzero shift.
    attn_even: AttnPlan,
    attn_odd: Option<AttnPlan>,
    merge: Option<Arc<crate::autodiff::kernels::indexmap::IndexPlan>>,
}

/// Per-stage feature volumes in token layout `[P_s, C_s]`.
pub struct FeaturePyramid<T> {
    pub levels: Vec<T>,
    pub dims: [[usize; 3]; NUM_STAGES],
    pub channels: [usize; NUM_STAGES],
}

/// Encoder output: the pyramid plus the post-embedding token volume
/// (consumed as an extra skip by the semantic head).
pub struct EncodeOutput<T> {
    pub pyramid: FeaturePyramid<T>,
    pub embed_tokens: T,
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    pub resolution: [usize; 3],
    pub ids: EncoderIds,
    stages: Vec<StagePlan>,
    to_tokens: Arc<crate::autodiff::kernels::indexmap::IndexPlan>,
    broadcast_token: Arc<crate::autodiff::kernels::indexmap::IndexPlan>,
}

impl Encoder {
    /// Registers all encoder parameters under `encoder.*` and precomputes
    /// the per-stage index plans.
    pub fn build(
        cfg: EncoderConfig,
        resolution: [usize; 3],
        params: &mut ParamSet,
    ) -> Result<Encoder> {
        cfg.validate(resolution)?;
        let p = cfg.patch;
        let e = cfg.embed_dim;
        let patch_weight = params.register(
            "encoder.patch_embed.weight",
            vec![e, cfg.in_channels, p, p, p],
            ParamKind::Weight,
        );
        let patch_bias = params.register("encoder.patch_embed.bias", vec![e], ParamKind::Bias);
        let stage0 = cfg.stage_dims(resolution, 0);
        let p0: usize = stage0.iter().product();
        let pos_embed = params.register("encoder.pos_embed", vec![p0, e], ParamKind::Weight);
        let mask_token = params.register("encoder.mask_token", vec![e], ParamKind::Weight);

        let mut stages = Vec::new();
        let mut stage_ids = Vec::new();
        for s in 0..NUM_STAGES {
            let dims = cfg.stage_dims(resolution, s);
            let c = cfg.stage_channels(s);
            let h = cfg.heads[s];
            let w_eff = cfg.window.min(*dims.iter().min().unwrap()).max(1);
            let shift = w_eff / 2;
            let attn_even = attention_plan(dims, c, h, w_eff, 0);
            let attn_odd = (shift > 0).then(|| attention_plan(dims, c, h, w_eff, shift));
            let span = 2 * w_eff - 1;
            let mut blocks = Vec::new();
            for b in 0..cfg.depths[s] {
                let pre = format!("encoder.stage{s}.block{b}");
                blocks.push(BlockIds {
                    norm1: (
                        params.register(&format!("{pre}.norm1.gamma"), vec![c], ParamKind::NormGamma),
                        params.register(&format!("{pre}.norm1.beta"), vec![c], ParamKind::NormBeta),
                    ),
                    qkv: (
                        params.register(&format!("{pre}.attn.qkv.weight"), vec![c, 3 * c], ParamKind::Weight),
                        params.register(&format!("{pre}.attn.qkv.bias"), vec![3 * c], ParamKind::Bias),
                    ),
                    proj: (
                        params.register(&format!("{pre}.attn.proj.weight"), vec![c, c], ParamKind::Weight),
                        params.register(&format!("{pre}.attn.proj.bias"), vec![c], ParamKind::Bias),
                    ),
                    rel_bias: params.register(
                        &format!("{pre}.attn.rel_bias"),
                        vec![h * span * span * span],
                        ParamKind::BiasTable,
                    ),
                    norm2: (
                        params.register(&format!("{pre}.norm2.gamma"), vec![c], ParamKind::NormGamma),
                        params.register(&format!("{pre}.norm2.beta"), vec![c], ParamKind::NormBeta),
                    ),
                    fc1: (
                        params.register(&format!("{pre}.mlp.fc1.weight"), vec![c, 4 * c], ParamKind::Weight),
                        params.register(&format!("{pre}.mlp.fc1.bias"), vec![4 * c], ParamKind::Bias),
                    ),
                    fc2: (
                        params.register(&format!("{pre}.mlp.fc2.weight"), vec![4 * c, c], ParamKind::Weight),
                        params.register(&format!("{pre}.mlp.fc2.bias"), vec![c], ParamKind::Bias),
                    ),
                });
            }
            let out_norm = (
                params.register(&format!("encoder.norm_out{s}.gamma"), vec![c], ParamKind::NormGamma),
                params.register(&format!("encoder.norm_out{s}.beta"), vec![c], ParamKind::NormBeta),
            );
            let merge_ids = (s < NUM_STAGES - 1).then(|| {
                (
                    params.register(&format!("encoder.merge{s}.norm.gamma"), vec![8 * c], ParamKind::NormGamma),
                    params.register(&format!("encoder.merge{s}.norm.beta"), vec![8 * c], ParamKind::NormBeta),
                    params.register(&format!("encoder.merge{s}.reduce.weight"), vec![8 * c, 2 * c], ParamKind::Weight),
                )
            });
            let merge_plan = (s < NUM_STAGES - 1).then(|| patch_merge_plan(dims, c));
            stages.push(StagePlan {
                dims,
                channels: c,
                attn_even,
                attn_odd,
                merge: merge_plan,
            });
            stage_ids.push(StageIds {
                blocks,
                out_norm,
                merge: merge_ids,
            });
        }
        let to_tokens = volume_to_tokens_plan(stage0, e);
        let broadcast_token = broadcast_rows_plan(p0, e);
        Ok(Encoder {
            cfg,
            resolution,
            ids: EncoderIds {
                patch_weight,
                patch_bias,
                pos_embed,
                mask_token,
                stages: stage_ids,
            },
            stages,
            to_tokens,
            broadcast_token,
        })
    }

    pub fn stage_dims(&self, s: usize) -> [usize; 3] {
        self.stages[s].dims
    }

    pub fn stage_channels(&self, s: usize) -> usize {
        self.stages[s].channels
    }

    /// Grid values to channels-first input array `[C, H, W, D]` in f64.
    pub fn grid_to_input(grid: &RadianceDensityGrid) -> NdArray {
        let [rx, ry, rz] = grid.spec.resolution;
        let n = rx * ry * rz;
        let mut out = NdArray::zeros(vec![4, rx, ry, rz]);
        let od = out.data_mut();
        for v in 0..n {
            for c in 0..4 {
                od[c * n + v] = grid.values[v * 4 + c] as f64;
            }
        }
        out
    }

    /// Patch embedding: strided conv, mask-token substitution at masked
    /// positions, learned positional embedding. Returns tokens `[P0, E]`.
    pub fn patch_embed<O: Ops>(&self, ops: &mut O, bound: &[O::T], input: &O::T, mask: &MaskSpec) -> O::T {
        let conv = ops.conv3d(
            input,
            &bound[self.ids.patch_weight],
            Some(&bound[self.ids.patch_bias]),
            self.cfg.patch,
            0,
        );
        let tokens = ops.gather(&conv, &self.to_tokens);
        // substitute the learned token at masked positions:
        // tokens * (1 - m) + mask_token * m
        let p0: usize = self.stages[0].dims.iter().product();
        let e = self.cfg.embed_dim;
        debug_assert_eq!(mask.total_patches(), p0, "mask resolution mismatch");
        let flags = mask.patch_flags();
        let mut keep = NdArray::zeros(vec![p0, e]);
        let mut take = NdArray::zeros(vec![p0, e]);
        for (i, &f) in flags.iter().enumerate() {
            let (k, t) = if f { (0.0, 1.0) } else { (1.0, 0.0) };
            keep.data_mut()[i * e..(i + 1) * e].fill(k);
            take.data_mut()[i * e..(i + 1) * e].fill(t);
        }
        let keep = ops.constant(keep);
        let take = ops.constant(take);
        let kept = ops.mul(&tokens, &keep);
        let token_rows = ops.gather(&bound[self.ids.mask_token], &self.broadcast_token);
        let taken = ops.mul(&token_rows, &take);
        let substituted = ops.add(&kept, &taken);
        ops.add(&substituted, &bound[self.ids.pos_embed])
    }

    fn attention<O: Ops>(
        &self,
        ops: &mut O,
        bound: &[O::T],
        block: &BlockIds,
        plan: &AttnPlan,
        x: &O::T,
    ) -> O::T {
        let xw = ops.gather(x, &plan.partition);
        let qkv = ops.linear(&xw, &bound[block.qkv.0], &bound[block.qkv.1]);
        let q = ops.gather(&qkv, &plan.q);
        let k = ops.gather(&qkv, &plan.k);
        let v = ops.gather(&qkv, &plan.v);
        let scale = 1.0 / (plan.head_dim as f64).sqrt();
        let q = ops.scale(&q, scale);
        let scores = ops.bmm(&q, &k, true);
        let bias = ops.gather(&bound[block.rel_bias], &plan.bias);
        let mut scores = ops.add(&scores, &bias);
        if let Some(mask) = &plan.mask {
            let m = ops.constant(mask.clone());
            scores = ops.add(&scores, &m);
        }
        let attn = ops.softmax_last(&scores);
        let out = ops.bmm(&attn, &v, false);
        let merged = ops.gather(&out, &plan.merge_heads);
        let proj = ops.linear(&merged, &bound[block.proj.0], &bound[block.proj.1]);
        ops.gather(&proj, &plan.reverse)
    }

    /// One block: `x += WindowAttention(LN(x)); x += MLP(LN(x))`.
    fn swin_block<O: Ops>(
        &self,
        ops: &mut O,
        bound: &[O::T],
        block: &BlockIds,
        plan: &AttnPlan,
        x: O::T,
    ) -> O::T {
        let h = ops.layer_norm(&x, &bound[block.norm1.0], &bound[block.norm1.1], LN_EPS);
        let h = self.attention(ops, bound, block, plan, &h);
        let x = ops.add(&x, &h);
        let h = ops.layer_norm(&x, &bound[block.norm2.0], &bound[block.norm2.1], LN_EPS);
        let h = ops.linear(&h, &bound[block.fc1.0], &bound[block.fc1.1]);
        let h = ops.gelu(&h);
        let h = ops.linear(&h, &bound[block.fc2.0], &bound[block.fc2.1]);
        ops.add(&x, &h)
    }

    /// Full encode of a masked grid input `[C, H, W, D]`.
    pub fn encode<O: Ops>(
        &self,
        ops: &mut O,
        bound: &[O::T],
        input: &O::T,
        mask: &MaskSpec,
    ) -> EncodeOutput<O::T> {
        let embed = self.patch_embed(ops, bound, input, mask);
        let mut x = embed.clone();
        let mut levels = Vec::with_capacity(NUM_STAGES);
        let mut dims = [[0usize; 3]; NUM_STAGES];
        let mut channels = [0usize; NUM_STAGES];
        for s in 0..NUM_STAGES {
            let plan = &self.stages[s];
            let ids = &self.ids.stages[s];
            for (b, block) in ids.blocks.iter().enumerate() {
                let attn = if b % 2 == 1 {
                    plan.attn_odd.as_ref().unwrap_or(&plan.attn_even)
                } else {
                    &plan.attn_even
                };
                x = self.swin_block(ops, bound, block, attn, x);
            }
            let f = ops.layer_norm(&x, &bound[ids.out_norm.0], &bound[ids.out_norm.1], LN_EPS);
            levels.push(f);
            dims[s] = plan.dims;
            channels[s] = plan.channels;
            if let (Some(merge_plan), Some((g, bta, w))) = (&plan.merge, &ids.merge) {
                let grouped = ops.gather(&x, merge_plan);
                let normed = ops.layer_norm(&grouped, &bound[*g], &bound[*bta], LN_EPS);
                x = ops.matmul(&normed, &bound[*w]);
            }
        }
        EncodeOutput {
            pyramid: FeaturePyramid {
                levels,
                dims,
                channels,
            },
            embed_tokens: embed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::graph::{EvalOps, TapeOps};
    use crate::autodiff::init_parameters;
    use crate::grid::{GridSpec, SceneBounds};
    use crate::swin::mask::mask_patches;

    fn desk_grid(res: usize, seed: u64) -> RadianceDensityGrid {
        use rand::{Rng, SeedableRng};
        let spec = GridSpec::new(
            [res, res, res],
            SceneBounds {
                min: [-1.0; 3],
                max: [1.0; 3],
            },
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..spec.voxel_count() * 4)
            .map(|_| rng.gen_range(0.0f32..1.0))
            .collect();
        RadianceDensityGrid { spec, values }
    }

    fn build_desk(res: usize) -> (Encoder, ParamSet) {
        let mut params = ParamSet::new();
        let enc = Encoder::build(EncoderConfig::desk(), [res, res, res], &mut params).unwrap();
        init_parameters(&mut params, 7);
        (enc, params)
    }

    fn build_micro() -> (Encoder, ParamSet) {
        let mut params = ParamSet::new();
        let cfg = EncoderConfig {
            embed_dim: 8,
            depths: [1, 1, 1, 1],
            heads: [1, 2, 4, 8],
            window: 4,
            patch: 2,
            in_channels: 4,
        };
        let enc = Encoder::build(cfg, [16, 16, 16], &mut params).unwrap();
        init_parameters(&mut params, 7);
        (enc, params)
    }

    #[test]
    fn desk_pyramid_shapes_follow_halving_rule() {
        // 32^3 input, E=16: 8^3x16, 4^3x32, 2^3x64, 1^3x128
        let (enc, params) = build_desk(32);
        let grid = desk_grid(32, 1);
        let mask = mask_patches([32, 32, 32], 4, 0.75, 3).unwrap();
        let mut ops = EvalOps::new();
        let bound = params.bind(&mut ops);
        let input = ops.constant(Encoder::grid_to_input(&grid));
        let out = enc.encode(&mut ops, &bound, &input, &mask);
        assert_eq!(out.pyramid.dims, [[8; 3], [4; 3], [2; 3], [1; 3]]);
        assert_eq!(out.pyramid.channels, [16, 32, 64, 128]);
        for (i, level) in out.pyramid.levels.iter().enumerate() {
            let p: usize = out.pyramid.dims[i].iter().product();
            assert_eq!(level.shape(), &[p, out.pyramid.channels[i]]);
        }
        assert_eq!(out.embed_tokens.shape(), &[512, 16]);
    }

    #[test]
    fn depth_does_not_change_shapes() {
        let mut params = ParamSet::new();
        let mut cfg = EncoderConfig::desk();
        cfg.depths = [1, 1, 1, 1];
        let enc = Encoder::build(cfg, [32, 32, 32], &mut params).unwrap();
        init_parameters(&mut params, 7);
        let grid = desk_grid(32, 1);
        let mask = mask_patches([32, 32, 32], 4, 0.5, 3).unwrap();
        let mut ops = EvalOps::new();
        let bound = params.bind(&mut ops);
        let input = ops.constant(Encoder::grid_to_input(&grid));
        let out = enc.encode(&mut ops, &bound, &input, &mask);
        assert_eq!(out.pyramid.dims, [[8; 3], [4; 3], [2; 3], [1; 3]]);
    }

    #[test]
    fn tape_and_eval_encodes_agree_bitwise() {
        let (enc, params) = build_micro();
        let grid = desk_grid(16, 5);
        let mask = mask_patches([16, 16, 16], 2, 0.5, 2).unwrap();

        let mut eval = EvalOps::new();
        let bound = params.bind(&mut eval);
        let input = eval.constant(Encoder::grid_to_input(&grid));
        let out_e = enc.encode(&mut eval, &bound, &input, &mask);

        let mut tape = TapeOps::new();
        let bound_t = params.bind(&mut tape);
        let input_t = tape.constant(Encoder::grid_to_input(&grid));
        let out_t = enc.encode(&mut tape, &bound_t, &input_t, &mask);

        for (e, t) in out_e.pyramid.levels.iter().zip(&out_t.pyramid.levels) {
            let tv = tape.to_array(t);
            assert_eq!(e.data(), tv.data());
        }
    }

    #[test]
    fn distinct_positions_embed_distinctly() {
        // identical input patches at two positions embed to different vectors
        // because the positional table is injective at init
        let (enc, params) = build_micro();
        let spec = GridSpec::new(
            [16, 16, 16],
            SceneBounds {
                min: [-1.0; 3],
                max: [1.0; 3],
            },
        );
        let grid = RadianceDensityGrid {
            values: vec![0.5; spec.voxel_count() * 4],
            spec,
        };
        let mask = mask_patches([16, 16, 16], 2, 0.0, 0).unwrap();
        let mut ops = EvalOps::new();
        let bound = params.bind(&mut ops);
        let input = ops.constant(Encoder::grid_to_input(&grid));
        let tokens = enc.patch_embed(&mut ops, &bound, &input, &mask);
        let e = enc.cfg.embed_dim;
        let row0 = &tokens.data()[0..e];
        let row1 = &tokens.data()[e..2 * e];
        assert_ne!(row0, row1);
    }
}
