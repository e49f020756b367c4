//! Dense row-major float arrays and named learnable parameters.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense multi-dimensional array of f64 values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NdArray {
    /// Checked constructor: shape/data length must agree and all values must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in array".into()));
        }
        Ok(NdArray { shape, data })
    }

    /// Unchecked internal constructor for op outputs.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NdArray { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        NdArray {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        NdArray {
            shape,
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        NdArray {
            shape: vec![1],
            data: vec![v],
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// 2D accessor, `self` must be rank 2.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    /// 3D accessor, `self` must be rank 3.
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Elementwise in-place `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &NdArray) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }
}

/// A learnable tensor: value plus accumulated gradient, identified by a
/// name unique within its model.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: NdArray,
    pub grad: NdArray,
}

impl Param {
    pub fn new(name: impl Into<String>, value: NdArray) -> Self {
        let grad = NdArray::zeros(value.shape().to_vec());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn uniform_fan_in(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> NdArray {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    NdArray::from_parts(shape, data)
}

/// Adjacency init: (1/side) * ones plus U(-0.01, 0.01) noise.
pub fn adjacency_init(side: usize, rng: &mut ChaCha8Rng) -> NdArray {
    let base = 1.0 / side as f64;
    let data = (0..side * side)
        .map(|_| base + rng.gen_range(-0.01..0.01))
        .collect();
    NdArray::from_parts(vec![side, side], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_constructor_rejects_bad_inputs() {
        assert!(NdArray::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(NdArray::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(NdArray::new(vec![2], vec![f64::NAN, 0.0]).is_err());
        assert!(NdArray::new(vec![2], vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let a = NdArray::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(a.at2(0, 2), 2.0);
        assert_eq!(a.at2(1, 0), 3.0);
        let b = NdArray::new(vec![2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(b.at3(1, 0, 1), 5.0);
    }
}
