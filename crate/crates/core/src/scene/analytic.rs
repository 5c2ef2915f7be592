//! Synthetic analytic scenes: closed-form density/albedo fields that double
//! as the test oracle for grid extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::SceneBounds;
use crate::scene::field::Field;
use crate::scene::math::{self, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
}

impl Shape {
    pub fn contains(&self, p: Vec3) -> bool {
        match self {
            Shape::Sphere { center, radius } => {
                math::norm(math::sub(p, *center)) <= *radius
            }
            Shape::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
        }
    }

    /// Tight axis-aligned bounding box.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        match self {
            Shape::Sphere { center, radius } => (
                math::sub(*center, [*radius; 3]),
                math::add(*center, [*radius; 3]),
            ),
            Shape::Box { min, max } => (*min, *max),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Shape::Sphere { radius, .. } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            Shape::Box { min, max } => (0..3).map(|a| max[a] - min[a]).product(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub density: f64,
    pub albedo: Vec3,
}

/// Closed-form scene: density sums over containing primitives, color is the
/// density-weighted mean of their albedos, view independent.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub background: Vec3,
    pub bounds: SceneBounds,
}

impl AnalyticScene {
    pub fn query(&self, p: Vec3) -> (Vec3, f64) {
        let mut sigma = 0.0;
        let mut color = [0.0; 3];
        for prim in &self.primitives {
            if prim.shape.contains(p) {
                sigma += prim.density;
                for c in 0..3 {
                    color[c] += prim.density * prim.albedo[c];
                }
            }
        }
        if sigma == 0.0 {
            (self.background, 0.0)
        } else {
            (math::scale(color, 1.0 / sigma), sigma)
        }
    }

    /// Label of the primitive dominating a point (highest density
    /// contribution, lowest index on ties); 0 where empty.
    pub fn label_at(&self, p: Vec3, labels: &[u16]) -> u16 {
        let mut best = 0u16;
        let mut best_density = 0.0;
        for (prim, &label) in self.primitives.iter().zip(labels) {
            if prim.shape.contains(p) && prim.density > best_density {
                best_density = prim.density;
                best = label;
            }
        }
        best
    }
}

impl Field for AnalyticScene {
    fn query_batch(&self, points: &[Vec3], _dirs: &[Vec3], rgb: &mut [Vec3], sigma: &mut [f64]) {
        for (i, p) in points.iter().enumerate() {
            let (c, s) = self.query(*p);
            rgb[i] = c;
            sigma[i] = s;
        }
    }
}

/// A generated scene with per-primitive semantic labels and tight boxes.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene: AnalyticScene,
    /// Label id per primitive, 1..=n (0 means empty space).
    pub labels: Vec<u16>,
    /// Tight AABB per primitive, aligned with `labels`.
    pub boxes: Vec<(Vec3, Vec3)>,
}

/// Density range of generated primitives; low enough that 2D views see
/// through objects and per-scene field fits stay well conditioned.
pub const DENSITY_RANGE: (f64, f64) = (8.0, 30.0);

/// Generates a deterministic synthetic scene. Primitives are labeled by a
/// canonical ordering (spheres before boxes, larger volume first) so label
/// ids carry shape/size semantics across scenes.
pub fn make_synthetic_scene(
    seed: u64,
    primitive_count_range: (usize, usize),
    bounds: SceneBounds,
) -> Result<SyntheticScene> {
    bounds.validate()?;
    let (lo, hi) = primitive_count_range;
    if lo < 1 || hi > 16 || lo > hi {
        return Err(Error::Config(format!(
            "primitive count range must lie in [1,16], got [{lo},{hi}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(lo..=hi);
    let center = bounds.center();
    let size = bounds.size();
    let min_half = 0.5 * size.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut primitives = Vec::with_capacity(n);
    for _ in 0..n {
        let is_sphere = rng.gen_bool(0.5);
        let extent = rng.gen_range(0.12..0.30) * min_half;
        // place so the shape stays inside the bounds
        let mut c = [0.0; 3];
        for a in 0..3 {
            let room = (0.5 * size[a] - extent).max(0.0);
            c[a] = center[a] + rng.gen_range(-1.0..1.0) * room;
        }
        let shape = if is_sphere {
            Shape::Sphere {
                center: c,
                radius: extent,
            }
        } else {
            let mut half = [0.0; 3];
            for h in half.iter_mut() {
                *h = extent * rng.gen_range(0.6..1.0);
            }
            Shape::Box {
                min: math::sub(c, half),
                max: math::add(c, half),
            }
        };
        let density = rng.gen_range(DENSITY_RANGE.0..DENSITY_RANGE.1);
        let albedo = [
            rng.gen_range(0.15..1.0),
            rng.gen_range(0.15..1.0),
            rng.gen_range(0.15..1.0),
        ];
        primitives.push(Primitive {
            shape,
            density,
            albedo,
        });
    }
    // canonical label order: spheres first, then by volume descending
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let sa = matches!(primitives[a].shape, Shape::Box { .. });
        let sb = matches!(primitives[b].shape, Shape::Box { .. });
        sa.cmp(&sb).then(
            primitives[b]
                .shape
                .volume()
                .partial_cmp(&primitives[a].shape.volume())
                .unwrap(),
        )
    });
    let mut labels = vec![0u16; n];
    for (rank, &idx) in order.iter().enumerate() {
        labels[idx] = (rank + 1) as u16;
    }
    let boxes = primitives.iter().map(|p| p.shape.aabb()).collect();
    Ok(SyntheticScene {
        scene: AnalyticScene {
            primitives,
            background: [0.0, 0.0, 0.0],
            bounds,
        },
        labels,
        boxes,
    })
}
