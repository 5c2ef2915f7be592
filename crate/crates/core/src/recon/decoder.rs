//! Skip-connected transposed-convolution decoding of the feature pyramid
//! back to a full-resolution 4-channel grid.

use std::sync::Arc;

use crate::autodiff::graph::Ops;
use crate::autodiff::kernels::indexmap::IndexPlan;
use crate::autodiff::params::{ParamId, ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::swin::encoder::FeaturePyramid;
use crate::swin::plan::tokens_to_volume_plan;
use crate::swin::EncoderConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Output channels after each x2 upsampling stage. The first three
    /// stages consume skips from f2, f1, f0; any further stages bridge the
    /// patch-embedding stride without skips.
    pub channels: Vec<usize>,
    pub out_channels: usize,
}

impl DecoderConfig {
    /// Derives the plan from the encoder: three skip stages at 4E, 2E, E and
    /// one halving per remaining patch-stride doubling.
    pub fn for_encoder(cfg: &EncoderConfig) -> Self {
        let e = cfg.embed_dim;
        let mut channels = vec![4 * e, 2 * e, e];
        let mut extra = cfg.patch;
        let mut c = e;
        while extra > 1 {
            c = (c / 2).max(8);
            channels.push(c);
            extra /= 2;
        }
        DecoderConfig {
            channels,
            out_channels: 4,
        }
    }
}

struct StageIds {
    up: (ParamId, ParamId),
    skip: Option<(ParamId, ParamId)>,
    conv: Option<(ParamId, ParamId)>,
}

pub struct Decoder {
    pub cfg: DecoderConfig,
    stages: Vec<StageIds>,
    head_mid: (ParamId, ParamId),
    head_out: (ParamId, ParamId),
    level_plans: Vec<Arc<IndexPlan>>,
    grid_dims: [usize; 3],
}

impl Decoder {
    /// Registers decoder parameters under `decoder.*` (or another prefix for
    /// task heads that reuse this layout).
    pub fn build(
        prefix: &str,
        enc_cfg: &EncoderConfig,
        cfg: DecoderConfig,
        resolution: [usize; 3],
        params: &mut ParamSet,
    ) -> Result<Decoder> {
        let f_channels: Vec<usize> = (0..4).map(|s| enc_cfg.stage_channels(s)).collect();
        let expect_stages = 3 + (cfg.patch_log2(enc_cfg.patch)?);
        if cfg.channels.len() != expect_stages {
            return Err(Error::Config(format!(
                "decoder channel plan has {} stages, patch {} needs {}",
                cfg.channels.len(),
                enc_cfg.patch,
                expect_stages
            )));
        }
        let mut stages = Vec::new();
        let mut c_in = f_channels[3];
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            let up = (
                params.register(
                    &format!("{prefix}.up{i}.weight"),
                    vec![c_in, c_out, 2, 2, 2],
                    ParamKind::Weight,
                ),
                params.register(&format!("{prefix}.up{i}.bias"), vec![c_out], ParamKind::Bias),
            );
            let (skip, conv) = if i < 3 {
                let f_ch = f_channels[2 - i];
                (
                    Some((
                        params.register(
                            &format!("{prefix}.skip{i}.weight"),
                            vec![c_out, f_ch, 1, 1, 1],
                            ParamKind::Weight,
                        ),
                        params.register(
                            &format!("{prefix}.skip{i}.bias"),
                            vec![c_out],
                            ParamKind::Bias,
                        ),
                    )),
                    Some((
                        params.register(
                            &format!("{prefix}.conv{i}.weight"),
                            vec![c_out, c_out, 3, 3, 3],
                            ParamKind::Weight,
                        ),
                        params.register(
                            &format!("{prefix}.conv{i}.bias"),
                            vec![c_out],
                            ParamKind::Bias,
                        ),
                    )),
                )
            } else {
                (None, None)
            };
            stages.push(StageIds { up, skip, conv });
            c_in = c_out;
        }
        let c_last = *cfg.channels.last().unwrap();
        let head_mid = (
            params.register(
                &format!("{prefix}.head.mid.weight"),
                vec![c_last, c_last, 3, 3, 3],
                ParamKind::Weight,
            ),
            params.register(&format!("{prefix}.head.mid.bias"), vec![c_last], ParamKind::Bias),
        );
        let head_out = (
            params.register(
                &format!("{prefix}.head.out.weight"),
                vec![cfg.out_channels, c_last, 3, 3, 3],
                ParamKind::Weight,
            ),
            params.register(
                &format!("{prefix}.head.out.bias"),
                vec![cfg.out_channels],
                ParamKind::Bias,
            ),
        );
        let level_plans = (0..4)
            .map(|s| tokens_to_volume_plan(enc_cfg.stage_dims(resolution, s), f_channels[s]))
            .collect();
        Ok(Decoder {
            cfg,
            stages,
            head_mid,
            head_out,
            level_plans,
            grid_dims: resolution,
        })
    }

    /// Decoder state just before the output head: transposed-conv upsampling
    /// with projected skips from f2, f1, f0, then skip-free doublings back to
    /// grid resolution. Returns `[C_last, H, W, D]`.
    pub fn decode_features<O: Ops>(
        &self,
        ops: &mut O,
        bound: &[O::T],
        pyramid: &FeaturePyramid<O::T>,
    ) -> Result<O::T> {
        let mut d = ops.gather(&pyramid.levels[3], &self.level_plans[3]);
        for (i, stage) in self.stages.iter().enumerate() {
            d = ops.conv_transpose3d(&d, &bound[stage.up.0], Some(&bound[stage.up.1]), 2);
            if let Some(skip_ids) = &stage.skip {
                let level = 2 - i;
                let skip_vol = ops.gather(&pyramid.levels[level], &self.level_plans[level]);
                let skip = ops.conv3d(
                    &skip_vol,
                    &bound[skip_ids.0],
                    Some(&bound[skip_ids.1]),
                    1,
                    0,
                );
                let ds = ops.shape(&d);
                let ss = ops.shape(&skip);
                if ds != ss {
                    return Err(Error::Dimension(format!(
                        "decoder stage {i}: upsampled state {ds:?} does not match skip {ss:?} from f{level}"
                    )));
                }
                d = ops.add(&d, &skip);
                let conv_ids = stage.conv.as_ref().unwrap();
                d = ops.conv3d(&d, &bound[conv_ids.0], Some(&bound[conv_ids.1]), 1, 1);
            }
            d = ops.gelu(&d);
        }
        let ds = ops.shape(&d);
        if ds[1..] != self.grid_dims {
            return Err(Error::Dimension(format!(
                "decoded state {ds:?} does not reach grid resolution {:?}",
                self.grid_dims
            )));
        }
        Ok(d)
    }

    /// Full reconstruction: features, then a residual 3x3x3 block and a
    /// sigmoid head to `out_channels`. Returns `[4, H, W, D]` in (0,1).
    pub fn decode_pyramid<O: Ops>(
        &self,
        ops: &mut O,
        bound: &[O::T],
        pyramid: &FeaturePyramid<O::T>,
    ) -> Result<O::T> {
        let d = self.decode_features(ops, bound, pyramid)?;
        let mid = ops.conv3d(&d, &bound[self.head_mid.0], Some(&bound[self.head_mid.1]), 1, 1);
        let mid = ops.gelu(&mid);
        let res = ops.add(&d, &mid);
        let out = ops.conv3d(&res, &bound[self.head_out.0], Some(&bound[self.head_out.1]), 1, 1);
        Ok(ops.sigmoid(&out))
    }
}

impl DecoderConfig {
    fn patch_log2(&self, patch: usize) -> Result<usize> {
        if !patch.is_power_of_two() {
            return Err(Error::Config(format!(
                "patch size {patch} must be a power of two"
            )));
        }
        Ok(patch.trailing_zeros() as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::graph::EvalOps;
    use crate::autodiff::init_parameters;
    use crate::swin::{mask_patches, Encoder};

    #[test]
    fn desk_decoder_reaches_grid_resolution_in_0_1() {
        let enc_cfg = EncoderConfig::desk();
        let mut params = ParamSet::new();
        let enc = Encoder::build(enc_cfg.clone(), [32, 32, 32], &mut params).unwrap();
        let dec = Decoder::build(
            "decoder",
            &enc_cfg,
            DecoderConfig::for_encoder(&enc_cfg),
            [32, 32, 32],
            &mut params,
        )
        .unwrap();
        init_parameters(&mut params, 5);
        let grid = crate::grid::RadianceDensityGrid::zeros(crate::grid::GridSpec::new(
            [32, 32, 32],
            crate::grid::SceneBounds {
                min: [-1.0; 3],
                max: [1.0; 3],
            },
        ));
        let mask = mask_patches([32, 32, 32], 4, 0.75, 1).unwrap();
        let mut ops = EvalOps::new();
        let bound = params.bind(&mut ops);
        let input = ops.constant(Encoder::grid_to_input(&grid));
        let out = enc.encode(&mut ops, &bound, &input, &mask);
        let recon = dec.decode_pyramid(&mut ops, &bound, &out.pyramid).unwrap();
        assert_eq!(recon.shape(), &[4, 32, 32, 32]);
        assert!(recon.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn paper_channel_plan() {
        let cfg = DecoderConfig::for_encoder(&EncoderConfig::paper());
        assert_eq!(cfg.channels, vec![384, 192, 96, 48, 24]);
    }
}
