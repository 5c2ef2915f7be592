//! Named parameter store shared by every model in the crate.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::array::NdArray;
use crate::autodiff::graph::{Ops, Var};
use crate::error::{Error, Result};

/// How a parameter is initialized by [`init_parameters`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Linear / conv weights and learned embeddings: truncated normal.
    Weight,
    /// Bias vectors: zero.
    Bias,
    /// Norm scale: one.
    NormGamma,
    /// Norm shift: zero.
    NormBeta,
    /// Relative position bias tables: zero.
    BiasTable,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: NdArray,
    pub kind: ParamKind,
    pub requires_grad: bool,
}

/// Index of a parameter within its [`ParamSet`].
pub type ParamId = usize;

/// Ordered, uniquely named parameter collection.
#[derive(Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: Vec<usize>, kind: ParamKind) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        self.params.push(Parameter {
            name: name.to_string(),
            value: NdArray::zeros(shape),
            kind,
            requires_grad: true,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn value(&self, id: ParamId) -> &NdArray {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut NdArray {
        &mut self.params[id].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Binds every parameter into an ops backend, aligned by `ParamId`.
    pub fn bind<O: Ops>(&self, ops: &mut O) -> Vec<O::T> {
        self.params.iter().map(|p| ops.leaf(&p.value)).collect()
    }
}

/// Derives a stable stream seed from a base seed and a label.
/// FNV-1a so results do not depend on platform hashers.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(label.as_bytes());
    eat(&index.to_le_bytes());
    h
}

/// Draws from N(0, sigma^2) rejecting samples beyond two standard deviations.
pub fn truncated_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    }
}

/// Initializes every parameter from its kind. Each parameter gets its own
/// seeded stream keyed by name, so insertion order does not matter.
pub fn init_parameters(params: &mut ParamSet, seed: u64) {
    const SIGMA: f64 = 0.02;
    for p in params.params.iter_mut() {
        match p.kind {
            ParamKind::Weight => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &p.name, 0));
                for v in p.value.data_mut() {
                    *v = truncated_normal(&mut rng, SIGMA);
                }
            }
            ParamKind::Bias | ParamKind::NormBeta | ParamKind::BiasTable => {
                for v in p.value.data_mut() {
                    *v = 0.0;
                }
            }
            ParamKind::NormGamma => {
                for v in p.value.data_mut() {
                    *v = 1.0;
                }
            }
        }
    }
}

/// Loads raw values into a parameter, checking the shape.
pub fn load_value(params: &mut ParamSet, id: ParamId, value: NdArray) -> Result<()> {
    let p = &mut params.params[id];
    if p.value.shape() != value.shape() {
        return Err(Error::Dimension(format!(
            "parameter {} has shape {:?}, got {:?}",
            p.name,
            p.value.shape(),
            value.shape()
        )));
    }
    p.value = value;
    Ok(())
}

/// Convenience collection mapping bound tape vars back to parameter ids.
pub struct BoundParams {
    pub vars: Vec<Var>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let mut a = ParamSet::new();
        a.register("w", vec![64], ParamKind::Weight);
        a.register("g", vec![8], ParamKind::NormGamma);
        let mut b = ParamSet::new();
        b.register("w", vec![64], ParamKind::Weight);
        b.register("g", vec![8], ParamKind::NormGamma);
        init_parameters(&mut a, 42);
        init_parameters(&mut b, 42);
        assert_eq!(a.value(0).data(), b.value(0).data());
        assert_eq!(a.value(1).data(), b.value(1).data());
    }

    #[test]
    fn gamma_is_exactly_one_biases_zero() {
        let mut p = ParamSet::new();
        let g = p.register("norm.gamma", vec![5], ParamKind::NormGamma);
        let b = p.register("lin.bias", vec![5], ParamKind::Bias);
        init_parameters(&mut p, 7);
        assert!(p.value(g).data().iter().all(|&v| v == 1.0));
        assert!(p.value(b).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncated_normal_statistics() {
        let mut p = ParamSet::new();
        let w = p.register("big.weight", vec![100_000], ParamKind::Weight);
        init_parameters(&mut p, 12345);
        let data = p.value(w).data();
        assert!(data.iter().all(|v| v.abs() <= 0.04));
        let std = (data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64).sqrt();
        // std of a normal truncated at +-2 sigma: sigma * sqrt(1 - 4 phi(2) / (2 Phi(2) - 1))
        let phi2 = (-2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mass = libm::erf(2.0 / std::f64::consts::SQRT_2);
        let expected = 0.02 * (1.0 - 4.0 * phi2 / mass).sqrt();
        assert!(
            ((std - expected) / expected).abs() < 0.03,
            "std {std} not within 3% of truncated-normal value {expected}"
        );
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.register("x", vec![1], ParamKind::Weight);
        p.register("x", vec![2], ParamKind::Weight);
    }
}
