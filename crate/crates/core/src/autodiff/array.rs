//! Dense N-dimensional `f64` arrays, row-major with the last axis fastest.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NdArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NdArray {
    /// Builds an array, panicking if the element count does not match the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match {} values",
            shape,
            data.len()
        );
        NdArray { shape, data }
    }

    /// Like `new` but rejects shape mismatches and non-finite values.
    pub fn checked(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value {} at flat index {}",
                data[pos], pos
            )));
        }
        Ok(NdArray { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        NdArray {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        NdArray {
            shape,
            data: vec![value; n],
        }
    }

    /// A rank-0 array holding one value.
    pub fn scalar(value: f64) -> Self {
        NdArray {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The value of a rank-0 / single-element array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on array of len {}", self.len());
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterprets the buffer under a new shape of equal element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} -> {:?}",
            self.shape,
            shape
        );
        self.shape = shape;
        self
    }

    /// Row-major strides (elements, last axis stride 1).
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NdArray {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &NdArray) -> f64 {
        assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }
}

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_rejects_nan_and_shape_mismatch() {
        assert!(NdArray::checked(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(NdArray::checked(vec![2], vec![1.0, f64::INFINITY]).is_err());
        assert!(NdArray::checked(vec![3], vec![1.0, 2.0]).is_err());
        assert!(NdArray::checked(vec![2], vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn strides_are_row_major_last_fastest() {
        let a = NdArray::zeros(vec![2, 3, 4]);
        assert_eq!(a.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn scalar_roundtrip() {
        let s = NdArray::scalar(3.5);
        assert!(s.is_scalar());
        assert_eq!(s.item(), 3.5);
        assert_eq!(s.shape(), &[] as &[usize]);
    }
}
