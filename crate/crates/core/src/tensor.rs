//! Dense row-major tensors: a real-valued [`Tensor`] generic over the scalar
//! type and a byte-backed binary [`SpikeTensor`].
//!
//! Reductions and products accumulate left to right in index order so that
//! results are bit-stable across runs.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Splits `shape` around `axis` into (outer, extent, inner) block sizes.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return shape_err(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| F::of(v)).collect())
    }

    pub fn full(shape: Vec<usize>, value: F) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, F::one())
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = F::one();
        }
        t
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> F) -> Self {
        let data = (0..numel(&shape)).map(f).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn get(&self, index: &[usize]) -> F {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: F) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                assert!(i < n, "index {i} out of bounds for extent {n}");
                acc * n + i
            })
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn into_reshaped(self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!(
                "elementwise shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, c: F) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        self.data
            .iter()
            .zip(&other.data)
            .fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, b: &Self) -> Result<Self> {
        if self.rank() != 2 || b.rank() != 2 {
            return shape_err(format!(
                "matmul expects rank-2 operands, got {:?} and {:?}",
                self.shape, b.shape
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (b.shape[0], b.shape[1]);
        if k != k2 {
            return shape_err(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape, b.shape
            ));
        }
        Ok(Self {
            shape: vec![m, n],
            data: matmul_raw(&self.data, &b.data, m, k, n),
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return shape_err(format!("transpose expects rank 2, got {:?}", self.shape));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Sums along `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return shape_err(format!(
                "axis {axis} out of range for rank {}",
                self.rank()
            ));
        }
        let (outer, extent, inner) = split_at_axis(&self.shape, axis);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let base = (o * extent + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + self.data[base + i];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Self { shape, data: out })
    }
}

/// Row-major `m×k` times `k×n` with fixed accumulation order.
pub(crate) fn matmul_raw<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw<F: Scalar>(x: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Binary tensor; every element is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeTensor {
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn new(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return shape_err(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            ));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Domain(format!("spike value {bad} is not binary")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![0; n],
        }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![1; n],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> bool) -> Self {
        let data = (0..numel(&shape)).map(|i| u8::from(f(i))).collect();
        Self { shape, data }
    }

    /// Converts a real tensor holding exact 0/1 values.
    pub fn from_real<F: Scalar>(t: &Tensor<F>) -> Result<Self> {
        let mut data = Vec::with_capacity(t.len());
        for &v in t.data() {
            if v == F::zero() {
                data.push(0);
            } else if v == F::one() {
                data.push(1);
            } else {
                return Err(Error::Domain(format!("value {v} is not a spike")));
            }
        }
        Ok(Self {
            shape: t.shape().to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn firing_rate(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.data.len() as f64
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn to_real<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| if v == 1 { F::one() } else { F::zero() })
                .collect(),
        }
    }

    /// Spike counts along `axis`, as a real tensor.
    pub fn sum_axis<F: Scalar>(&self, axis: usize) -> Result<Tensor<F>> {
        if axis >= self.rank() {
            return shape_err(format!(
                "axis {axis} out of range for rank {}",
                self.rank()
            ));
        }
        let (outer, extent, inner) = split_at_axis(&self.shape, axis);
        let mut counts = vec![0u32; outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let base = (o * extent + a) * inner;
                for i in 0..inner {
                    counts[o * inner + i] += self.data[base + i] as u32;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Tensor {
            shape,
            data: counts.into_iter().map(|c| F::of(c as f64)).collect(),
        })
    }
}
