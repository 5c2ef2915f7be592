//! Shared helpers for the integration suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxmae::grid::{GridSpec, RadianceDensityGrid, SceneBounds};

pub fn unit_bounds() -> SceneBounds {
    SceneBounds {
        min: [-1.0; 3],
        max: [1.0; 3],
    }
}

pub fn random_grid(res: usize, seed: u64) -> RadianceDensityGrid {
    let spec = GridSpec::new([res, res, res], unit_bounds());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..spec.voxel_count() * 4)
        .map(|_| rng.gen_range(0.0f32..1.0))
        .collect();
    RadianceDensityGrid { spec, values }
}
