//! The radiance/density field abstraction and the trainable lattice field.

use std::sync::Arc;

use crate::autodiff::graph::{EvalOps, Ops};
use crate::autodiff::params::{ParamId, ParamKind, ParamSet};
use crate::autodiff::NdArray;
use crate::grid::SceneBounds;
use crate::scene::math::Vec3;

/// Anything that maps (position, view direction) to (rgb, density).
pub trait Field: Sync {
    /// Batch query; `rgb` and `sigma` are caller-allocated, one entry per point.
    fn query_batch(&self, points: &[Vec3], dirs: &[Vec3], rgb: &mut [Vec3], sigma: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    /// Lattice points per axis.
    pub resolution: usize,
    /// Per-cell color feature width.
    pub feature_dim: usize,
    /// Hidden width of the direction mixer.
    pub hidden: usize,
    pub bounds: SceneBounds,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            resolution: 40,
            feature_dim: 8,
            hidden: 16,
            bounds: SceneBounds {
                min: [-1.0; 3],
                max: [1.0; 3],
            },
        }
    }
}

pub struct FieldParamIds {
    pub density: ParamId,
    pub color: ParamId,
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
}

/// Trainable field: a density lattice (softplus-mapped), a color-feature
/// lattice, and a 2-layer perceptron mixing features with view direction
/// into sigmoid-mapped rgb.
pub struct TrainableField {
    pub cfg: FieldConfig,
    pub params: ParamSet,
    pub ids: FieldParamIds,
}

/// Raw density init: softplus(-2) ~ 0.13, a faint uniform haze.
const DENSITY_RAW_INIT: f64 = -2.0;

impl TrainableField {
    pub fn new(cfg: FieldConfig) -> Self {
        let r = cfg.resolution;
        let mut params = ParamSet::new();
        let density = params.register("field.density", vec![r, r, r, 1], ParamKind::Weight);
        let color = params.register(
            "field.color",
            vec![r, r, r, cfg.feature_dim],
            ParamKind::Weight,
        );
        let fc1_weight = params.register(
            "field.mixer.fc1.weight",
            vec![cfg.feature_dim + 3, cfg.hidden],
            ParamKind::Weight,
        );
        let fc1_bias = params.register("field.mixer.fc1.bias", vec![cfg.hidden], ParamKind::Bias);
        let fc2_weight = params.register(
            "field.mixer.fc2.weight",
            vec![cfg.hidden, 3],
            ParamKind::Weight,
        );
        let fc2_bias = params.register("field.mixer.fc2.bias", vec![3], ParamKind::Bias);
        TrainableField {
            cfg,
            params,
            ids: FieldParamIds {
                density,
                color,
                fc1_weight,
                fc1_bias,
                fc2_weight,
                fc2_bias,
            },
        }
    }

    pub fn init(&mut self, seed: u64) {
        crate::autodiff::init_parameters(&mut self.params, seed);
        for v in self.params.value_mut(self.ids.density).data_mut() {
            *v = DENSITY_RAW_INIT;
        }
    }

    /// World position to continuous lattice coordinate.
    pub fn lattice_coord(&self, p: Vec3) -> [f64; 3] {
        let b = &self.cfg.bounds;
        let r = (self.cfg.resolution - 1) as f64;
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = (p[a] - b.min[a]) / (b.max[a] - b.min[a]) * r;
        }
        out
    }

    /// Differentiable forward: returns `(rgb [N,3], sigma [N,1])` given bound
    /// parameter handles. Runs on any ops backend; the plain query path uses
    /// `EvalOps` over the exact same code.
    pub fn forward<O: Ops>(
        &self,
        ops: &mut O,
        bound: &[O::T],
        points: &Arc<Vec<[f64; 3]>>,
        dirs: &NdArray,
    ) -> (O::T, O::T) {
        let raw = ops.trilinear_sample(&bound[self.ids.density], points);
        let sigma = ops.softplus(&raw);
        let feat = ops.trilinear_sample(&bound[self.ids.color], points);
        let dirs_t = ops.constant(dirs.clone());
        let mixed = ops.concat_last(&feat, &dirs_t);
        let h = ops.linear(&mixed, &bound[self.ids.fc1_weight], &bound[self.ids.fc1_bias]);
        let h = ops.gelu(&h);
        let rgb = ops.linear(&h, &bound[self.ids.fc2_weight], &bound[self.ids.fc2_bias]);
        let rgb = ops.sigmoid(&rgb);
        (rgb, sigma)
    }
}

impl Field for TrainableField {
    fn query_batch(&self, points: &[Vec3], dirs: &[Vec3], rgb: &mut [Vec3], sigma: &mut [f64]) {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| self.lattice_coord(*p)).collect();
        let coords = Arc::new(coords);
        let mut dirs_arr = NdArray::zeros(vec![dirs.len(), 3]);
        for (i, d) in dirs.iter().enumerate() {
            dirs_arr.data_mut()[i * 3..i * 3 + 3].copy_from_slice(d);
        }
        let mut ops = EvalOps::new();
        let bound = self.params.bind(&mut ops);
        let (rgb_t, sigma_t) = self.forward(&mut ops, &bound, &coords, &dirs_arr);
        for (i, out) in rgb.iter_mut().enumerate() {
            out.copy_from_slice(&rgb_t.data()[i * 3..i * 3 + 3]);
        }
        for (i, out) in sigma.iter_mut().enumerate() {
            *out = sigma_t.data()[i];
        }
    }
}
