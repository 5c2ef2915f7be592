//! Eq.-style volume rendering over any field: uniform (optionally jittered)
//! sampling between the ray bounds and front-to-back compositing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::kernels::render as render_kernel;
use crate::autodiff::params::derive_seed;
use crate::autodiff::NdArray;
use crate::error::{Error, Result};
use crate::grid::SceneBounds;
use crate::par;
use crate::scene::camera::{clip_ray_to_bounds, Camera, Ray};
use crate::scene::field::Field;
use crate::scene::math::Vec3;

#[derive(Debug, Clone)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub background: Vec3,
    pub jitter: bool,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples_per_ray: 64,
            background: [0.0; 3],
            jitter: false,
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray < 2 {
            return Err(Error::Config(format!(
                "samples_per_ray must be >= 2, got {}",
                self.samples_per_ray
            )));
        }
        Ok(())
    }
}

/// Sample positions along a ray: midpoints of uniform bins, or stratified
/// within each bin when jitter is enabled.
pub fn sample_ts(ray: &Ray, config: &RenderConfig, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    let s = config.samples_per_ray;
    let step = (ray.t_far - ray.t_near) / s as f64;
    match (config.jitter, rng) {
        (true, Some(rng)) => (0..s)
            .map(|i| ray.t_near + (i as f64 + rng.gen_range(0.0..1.0)) * step)
            .collect(),
        _ => (0..s)
            .map(|i| ray.t_near + (i as f64 + 0.5) * step)
            .collect(),
    }
}

/// Renders one ray. Deterministic when jitter is off.
pub fn render_ray(field: &dyn Field, ray: &Ray, config: &RenderConfig) -> Result<Vec3> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ts = sample_ts(ray, config, config.jitter.then_some(&mut rng));
    let s = ts.len();
    let step = (ray.t_far - ray.t_near) / s as f64;
    let points: Vec<Vec3> = ts.iter().map(|&t| ray.point_at(t)).collect();
    let dirs = vec![ray.direction; s];
    let mut rgb = vec![[0.0f64; 3]; s];
    let mut sigma = vec![0.0f64; s];
    field.query_batch(&points, &dirs, &mut rgb, &mut sigma);
    let density = NdArray::new(vec![1, s], sigma);
    let mut colors = NdArray::zeros(vec![1, s, 3]);
    for (i, c) in rgb.iter().enumerate() {
        colors.data_mut()[i * 3..i * 3 + 3].copy_from_slice(c);
    }
    let deltas = NdArray::filled(vec![1, s], step);
    let (out, _) = render_kernel::composite(&density, &colors, &deltas, config.background);
    Ok([out.data()[0], out.data()[1], out.data()[2]])
}

/// Renders a full image, parallel over pixels. Pixels whose rays miss the
/// bounds take the background color. Jitter streams are derived per pixel so
/// results do not depend on scheduling.
pub fn render_image(
    field: &dyn Field,
    camera: &Camera,
    bounds: &SceneBounds,
    config: &RenderConfig,
) -> Result<Vec<Vec3>> {
    config.validate()?;
    let (w, h) = (camera.width, camera.height);
    let mut image = vec![[0.0f64; 3]; w * h];
    let err = std::sync::Mutex::new(None);
    par::for_each_chunk_mut(&mut image, w, |row, pixels| {
        for (col, px) in pixels.iter_mut().enumerate() {
            let dir = camera.ray_direction(col as f64, row as f64);
            match clip_ray_to_bounds(camera.center(), dir, bounds) {
                Some(ray) => {
                    let cfg = RenderConfig {
                        seed: derive_seed(config.seed, "pixel", (row * w + col) as u64),
                        ..config.clone()
                    };
                    match render_ray(field, &ray, &cfg) {
                        Ok(c) => *px = c,
                        Err(e) => {
                            let mut slot = err.lock().unwrap();
                            if slot.is_none() {
                                *slot = Some(e);
                            }
                        }
                    }
                }
                None => *px = config.background,
            }
        }
    });
    if let Some(e) = err.into_inner().unwrap() {
        return Err(e);
    }
    Ok(image)
}
