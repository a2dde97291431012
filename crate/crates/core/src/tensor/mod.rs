//! Dense f64 tensors, a reverse-mode tape, and the optimizer used to train
//! cell networks at desk scale.

mod checkpoint;
mod gemm;
mod optim;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, ManifestEntry};
pub(crate) use checkpoint::write_atomic;
pub use optim::{cosine_lr, BatchNormState, RmsProp, RmsPropConfig, BN_EPSILON, BN_MOMENTUM};
pub use tape::{BatchStats, Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Row-major dense tensor. Image batches use (batch, channels, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {len} elements, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Dimensions of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Shape(format!("expected rank-4 tensor, got {:?}", self.shape))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_inplace(&mut self, f: f64) {
        for v in &mut self.data {
            *v *= f;
        }
    }

    /// Copies the sub-block starting at `offsets` with extent `extents`.
    pub fn block(&self, offsets: &[usize], extents: &[usize]) -> Result<Tensor> {
        let idx = block_indices(&self.shape, offsets, extents)?;
        Ok(Tensor { shape: extents.to_vec(), data: idx.iter().map(|&i| self.data[i]).collect() })
    }
}

/// Flat indices of a sub-block, in row-major order of the block.
pub fn block_indices(shape: &[usize], offsets: &[usize], extents: &[usize]) -> Result<Vec<usize>> {
    if shape.len() != offsets.len() || shape.len() != extents.len() {
        return Err(Error::Shape("block rank mismatch".into()));
    }
    for d in 0..shape.len() {
        if offsets[d] + extents[d] > shape[d] {
            return Err(Error::Shape(format!(
                "block {offsets:?}+{extents:?} exceeds shape {shape:?}"
            )));
        }
    }
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let total: usize = extents.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut counter = vec![0usize; shape.len()];
    for _ in 0..total {
        let flat: usize = (0..shape.len()).map(|d| (offsets[d] + counter[d]) * strides[d]).sum();
        out.push(flat);
        for d in (0..shape.len()).rev() {
            counter[d] += 1;
            if counter[d] < extents[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_of_matrix() {
        let t = Tensor::new(vec![3, 3], (0..9).map(f64::from).collect()).unwrap();
        let b = t.block(&[1, 1], &[2, 2]).unwrap();
        assert_eq!(b.data(), &[4.0, 5.0, 7.0, 8.0]);
        assert!(t.block(&[2, 0], &[2, 1]).is_err());
    }

    #[test]
    fn shape_checked() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
