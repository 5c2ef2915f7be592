//! Per-scene field fitting: photometric MSE over sampled pixels.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::graph::{Ops, TapeOps};
use crate::autodiff::optim::{Adam, AdamConfig};
use crate::autodiff::params::derive_seed;
use crate::autodiff::NdArray;
use crate::error::{Error, Result};
use crate::scene::camera::{clip_ray_to_bounds, Camera};
use crate::scene::field::TrainableField;
use crate::scene::math::Vec3;
use crate::scene::render::RenderConfig;

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub steps: usize,
    pub rays_per_step: usize,
    pub samples_per_ray: usize,
    pub learning_rate: f64,
    pub background: Vec3,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 2000,
            rays_per_step: 512,
            samples_per_ray: 48,
            learning_rate: 1e-2,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

/// A posed image: row-major pixels in [0,1].
pub struct PosedImage {
    pub camera: Camera,
    pub pixels: Vec<Vec3>,
}

/// Fits the field to posed images by Adam on mean squared photometric error
/// over randomly sampled pixels. Deterministic per seed. Returns the loss
/// history (one entry per step).
pub fn fit_field(
    images: &[PosedImage],
    field: &mut TrainableField,
    cfg: &FitConfig,
) -> Result<Vec<f64>> {
    if images.len() < 2 {
        return Err(Error::Dataset(format!(
            "field fitting needs >= 2 posed images, got {}",
            images.len()
        )));
    }
    for (i, im) in images.iter().enumerate() {
        if im.pixels.len() != im.camera.width * im.camera.height {
            return Err(Error::Dataset(format!(
                "image {i} has {} pixels but camera is {}x{}",
                im.pixels.len(),
                im.camera.width,
                im.camera.height
            )));
        }
    }
    if cfg.rays_per_step < 1 {
        return Err(Error::Config("rays_per_step must be >= 1".into()));
    }
    let bounds = field.cfg.bounds;
    let render_cfg = RenderConfig {
        samples_per_ray: cfg.samples_per_ray,
        background: cfg.background,
        jitter: true,
        seed: cfg.seed,
    };
    render_cfg.validate()?;
    let mut opt = Adam::new(&field.params, AdamConfig::default());
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "fit_step", step as u64));
        // assemble a batch of rays that actually traverse the bounds
        let s = cfg.samples_per_ray;
        let mut coords: Vec<[f64; 3]> = Vec::with_capacity(cfg.rays_per_step * s);
        let mut dirs = NdArray::zeros(vec![cfg.rays_per_step * s, 3]);
        let mut deltas = NdArray::zeros(vec![cfg.rays_per_step, s]);
        let mut targets = NdArray::zeros(vec![cfg.rays_per_step, 3]);
        let mut filled = 0;
        let mut attempts = 0;
        while filled < cfg.rays_per_step && attempts < cfg.rays_per_step * 20 {
            attempts += 1;
            let ii = rng.gen_range(0..images.len());
            let im = &images[ii];
            let px = rng.gen_range(0..im.camera.width);
            let py = rng.gen_range(0..im.camera.height);
            let dir = im.camera.ray_direction(px as f64, py as f64);
            let Some(ray) = clip_ray_to_bounds(im.camera.center(), dir, &bounds) else {
                continue;
            };
            let step_len = (ray.t_far - ray.t_near) / s as f64;
            for i in 0..s {
                let t = ray.t_near + (i as f64 + rng.gen_range(0.0..1.0)) * step_len;
                let p = ray.point_at(t);
                coords.push(field.lattice_coord(p));
                dirs.data_mut()[(filled * s + i) * 3..(filled * s + i) * 3 + 3]
                    .copy_from_slice(&dir);
                deltas.data_mut()[filled * s + i] = step_len;
            }
            let target = im.pixels[py * im.camera.width + px];
            targets.data_mut()[filled * 3..filled * 3 + 3].copy_from_slice(&target);
            filled += 1;
        }
        if filled == 0 {
            return Err(Error::Dataset(
                "no sampled ray intersected the scene bounds".into(),
            ));
        }
        let coords = Arc::new(coords);
        let deltas = deltas.reshaped(vec![filled, s]);
        let targets = targets.reshaped(vec![filled, 3]);

        let mut ops = TapeOps::new();
        let bound = field.params.bind(&mut ops);
        let (rgb, sigma) = field.forward(&mut ops, &bound, &coords, &dirs);
        let sigma = ops.reshape(&sigma, vec![filled, s]);
        let rgb = ops.reshape(&rgb, vec![filled, s, 3]);
        let pred = ops.composite(&sigma, &rgb, &deltas, cfg.background);
        let target_t = ops.constant(targets);
        let diff = ops.sub(&pred, &target_t);
        let sq = ops.mul(&diff, &diff);
        let loss = ops.mean_all(&sq);
        let loss_value = ops.value(loss).item();
        let mut grads = ops.backward(loss)?;
        let grad_vec: Vec<Option<NdArray>> =
            bound.iter().map(|v| grads.take(*v)).collect();
        opt.step(&mut field.params, &grad_vec, cfg.learning_rate);
        history.push(loss_value);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SceneBounds;
    use crate::scene::camera::sample_camera_trajectory;
    use crate::scene::field::FieldConfig;

    #[test]
    fn background_only_scene_starts_near_optimal() {
        // images that are pure background: with the faint haze init the loss
        // is already small and fitting cannot blow it up
        let bounds = SceneBounds {
            min: [-1.0; 3],
            max: [1.0; 3],
        };
        let cams = sample_camera_trajectory(&bounds, 3, 4, 16, 16).unwrap();
        let images: Vec<PosedImage> = cams
            .into_iter()
            .map(|camera| PosedImage {
                pixels: vec![[0.0; 3]; camera.width * camera.height],
                camera,
            })
            .collect();
        let mut field = TrainableField::new(FieldConfig {
            resolution: 8,
            bounds,
            ..Default::default()
        });
        field.init(1);
        let cfg = FitConfig {
            steps: 5,
            rays_per_step: 32,
            samples_per_ray: 16,
            seed: 3,
            ..Default::default()
        };
        let history = fit_field(&images, &mut field, &cfg).unwrap();
        assert!(history[0] < 0.05, "haze init loss {}", history[0]);
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let bounds = SceneBounds {
            min: [-1.0; 3],
            max: [1.0; 3],
        };
        let cams = sample_camera_trajectory(&bounds, 3, 4, 16, 16).unwrap();
        let images: Vec<PosedImage> = cams
            .into_iter()
            .map(|camera| PosedImage {
                pixels: vec![[0.5; 3]; camera.width * camera.height],
                camera,
            })
            .collect();
        let cfg = FitConfig {
            steps: 4,
            rays_per_step: 16,
            samples_per_ray: 8,
            seed: 11,
            ..Default::default()
        };
        let mut f1 = TrainableField::new(FieldConfig {
            resolution: 6,
            bounds,
            ..Default::default()
        });
        f1.init(2);
        let h1 = fit_field(&images, &mut f1, &cfg).unwrap();
        let mut f2 = TrainableField::new(FieldConfig {
            resolution: 6,
            bounds,
            ..Default::default()
        });
        f2.init(2);
        let h2 = fit_field(&images, &mut f2, &cfg).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn image_count_mismatch_is_a_dataset_error() {
        let bounds = SceneBounds {
            min: [-1.0; 3],
            max: [1.0; 3],
        };
        let cams = sample_camera_trajectory(&bounds, 2, 4, 8, 8).unwrap();
        let images = vec![PosedImage {
            camera: cams[0].clone(),
            pixels: vec![[0.0; 3]; 64],
        }];
        let mut field = TrainableField::new(FieldConfig {
            resolution: 4,
            bounds,
            ..Default::default()
        });
        field.init(0);
        assert!(fit_field(&images, &mut field, &FitConfig::default()).is_err());
    }
}
