//! Synthetic scene generation, radiance/density fields, volume rendering,
//! camera sampling, and per-scene field fitting.

pub mod analytic;
pub mod camera;
pub mod field;
pub mod fit;
pub mod math;
pub mod render;

pub use analytic::{make_synthetic_scene, AnalyticScene, Primitive, Shape, SyntheticScene};
pub use camera::{clip_ray_to_bounds, sample_camera_trajectory, Camera, Ray};
pub use field::{Field, FieldConfig, TrainableField};
pub use fit::{fit_field, FitConfig, PosedImage};
pub use render::{render_image, render_ray, RenderConfig};
