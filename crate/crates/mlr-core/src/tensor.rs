//! Dense row-major tensor, the universal numeric carrier.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Dense N-dimensional array of `f64` values in row-major order.
///
/// Training math runs in 64-bit precision throughout; on-disk formats store
/// 32-bit floats and the conversion happens at the IO boundary. The only
/// structural invariant is `product(dims) == data.len()`; finiteness is
/// enforced at the checkpoints that matter (losses, gradients, fitted
/// statistics) rather than after every elementwise pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) {
            return Err(CoreError::shape(
                "tensor::new",
                format!("zero-sized dimension in {dims:?}"),
            ));
        }
        if expect != data.len() {
            return Err(CoreError::shape(
                "tensor::new",
                format!("dims {dims:?} require {expect} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(other.dims())
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Interpret as `[B, C, H, W]`; errors when the rank is not 4.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(CoreError::shape(
                op,
                format!("expected rank-4 [B,C,H,W] tensor, got {:?}", self.dims),
            )),
        }
    }

    /// Interpret as `[rows, cols]`; errors when the rank is not 2.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(CoreError::shape(
                op,
                format!("expected rank-2 tensor, got {:?}", self.dims),
            )),
        }
    }

    /// Reinterpret the same buffer under new dims of equal volume.
    pub fn reshaped(mut self, dims: Vec<usize>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if expect != self.data.len() {
            return Err(CoreError::shape(
                "tensor::reshape",
                format!(
                    "cannot view {} values ({:?}) as {dims:?}",
                    self.data.len(),
                    self.dims
                ),
            ));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(CoreError::non_finite(format!(
                "{context}: element {i} of {:?} is {}",
                self.dims, self.data[i]
            ))),
        }
    }

    pub fn shape_string(&self) -> String {
        format!("{:?}", self.dims)
    }
}

/// Strict same-shape guard used by binary elementwise operations.
pub fn require_same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(CoreError::shape(
            op,
            format!("dims {:?} vs {:?}", a.dims(), b.dims()),
        ));
    }
    Ok(())
}
