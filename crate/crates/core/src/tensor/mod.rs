//! Dense row-major tensors and a tape-based reverse-mode autodiff engine.
//!
//! [`Tensor`] is a plain owned array. Differentiable computation happens on a
//! [`Graph`], which hands out [`Var`] handles and records every operation whose
//! inputs need gradients. Calling [`Graph::backward`] on a scalar walks the
//! tape in reverse and accumulates gradients into the leaves.

mod element;
mod fpmode;
mod graph;
pub mod kernels;

pub use element::Element;
pub use fpmode::FlushSubnormals;
pub use graph::{Graph, OpCounter, Var};

/// Row-wise softmax over the last axis, stabilized by the row maximum.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    graph::softmax_rows(logits)
}

use crate::error::{Error, Result};

/// Dense N-dimensional array stored contiguously in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {n} elements but data has {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Element at a multi-index. Panics when the index is out of bounds.
    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                assert!(i < n, "index {i} out of bounds for axis of length {n}");
                acc * n + i
            })
    }

    /// Same data viewed under another shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    /// Physically reorders the data so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let shape = kernels::permuted_shape(&self.shape, axes)?;
        let data = kernels::permute(&self.data, &self.shape, axes);
        Ok(Self { shape, data })
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Leading row of a tensor whose first axis indexes samples.
    pub fn slice_rows(&self, rows: std::ops::Range<usize>) -> Self {
        let row_len: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Self {
            shape,
            data: self.data[rows.start * row_len..rows.end * row_len].to_vec(),
        }
    }

    /// Gathers rows of the leading axis in the given order.
    pub fn gather_rows(&self, rows: &[usize]) -> Self {
        let row_len: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        let mut data = Vec::with_capacity(rows.len() * row_len);
        for &r in rows {
            data.extend_from_slice(&self.data[r * row_len..(r + 1) * row_len]);
        }
        Self { shape, data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Graph<f64> {
        Graph::new()
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_and_summation() {
        let mut g = g();
        let x = g.constant(t(&[2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Tensor::zeros(&[2]));
        assert_eq!(g.dense(&x, &w, &b).unwrap().value().data(), &[1.0, 2.0]);

        let x = g.constant(Tensor::ones(&[3]));
        let w = g.constant(Tensor::ones(&[3, 2]));
        let b = g.constant(Tensor::full(&[2], 0.5));
        assert_eq!(g.dense(&x, &w, &b).unwrap().value().data(), &[3.5, 3.5]);
    }

    #[test]
    fn dense_keeps_leading_axes() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[81, 32, 15]));
        let w = g.constant(Tensor::zeros(&[15, 128]));
        let b = g.constant(Tensor::zeros(&[128]));
        assert_eq!(g.dense(&x, &w, &b).unwrap().shape(), &[81, 32, 128]);
        let bad = g.constant(Tensor::zeros(&[14, 128]));
        let err = g.dense(&x, &bad, &b).unwrap_err().to_string();
        assert!(err.contains("[81, 32, 15]") && err.contains("[14, 128]"), "{err}");
    }

    #[test]
    fn conv3d_examples() {
        let mut g = g();
        let x = g.constant(Tensor::zeros(&[3, 3, 3, 2]));
        let k = g.constant(Tensor::from_fn(&[3, 3, 3, 2, 4], |i| i as f64));
        let b = g.constant(Tensor::zeros(&[4]));
        assert!(g.conv3d(&x, &k, &b).unwrap().value().data().iter().all(|&v| v == 0.0));

        let x = g.constant(Tensor::ones(&[3, 3, 3, 1]));
        let k = g.constant(Tensor::ones(&[3, 3, 3, 1, 1]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv3d(&x, &k, &b).unwrap();
        assert_eq!(y.value().at(&[1, 1, 1, 0]), 27.0);
        assert_eq!(y.value().at(&[0, 0, 0, 0]), 8.0);

        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[9, 9, 15, 1]));
        let k = g.constant(Tensor::zeros(&[3, 3, 3, 1, 16]));
        let b = g.constant(Tensor::zeros(&[16]));
        assert_eq!(g.conv3d(&x, &k, &b).unwrap().shape(), &[9, 9, 15, 16]);
        let k2 = g.constant(Tensor::zeros(&[3, 3, 3, 2, 16]));
        assert!(matches!(g.conv3d(&x, &k2, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn depthwise_examples() {
        let mut g = g();
        let x = g.constant(Tensor::from_fn(&[4, 5, 2], |i| i as f64 * 0.3 - 1.0));
        let mut delta = Tensor::zeros(&[3, 3, 2]);
        delta.data_mut()[4 * 2] = 1.0;
        delta.data_mut()[4 * 2 + 1] = 1.0;
        let k = g.constant(delta);
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.depthwise_conv2d(&x, &k, &b).unwrap();
        assert_eq!(y.value(), x.value());

        let x = g.constant(Tensor::ones(&[3, 3, 1]));
        let k = g.constant(Tensor::ones(&[3, 3, 1]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.depthwise_conv2d(&x, &k, &b).unwrap();
        assert_eq!(y.value().at(&[1, 1, 0]), 9.0);
        assert_eq!(y.value().at(&[0, 0, 0]), 4.0);

        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[9, 9, 960]));
        let k = g.constant(Tensor::zeros(&[3, 3, 960]));
        let b = g.constant(Tensor::zeros(&[960]));
        assert_eq!(g.depthwise_conv2d(&x, &k, &b).unwrap().shape(), &[9, 9, 960]);
        let k = g.constant(Tensor::zeros(&[3, 3, 959]));
        assert!(g.depthwise_conv2d(&x, &k, &b).is_err());
    }

    #[test]
    fn activations() {
        let mut g = g();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        assert_eq!(g.relu(&x).unwrap().value().data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::scalar(0.0));
        assert_eq!(g.sigmoid(&z).unwrap().value().data(), &[0.5]);
        assert_eq!(g.gelu(&z).unwrap().value().data(), &[0.0]);
        let big = g.constant(t(&[2], &[-800.0, 800.0]));
        assert_eq!(g.sigmoid(&big).unwrap().value().data(), &[0.0, 1.0]);
    }

    #[test]
    fn layout_ops() {
        let mut g = g();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let p = g.permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.value().at(&[3, 1, 2]), x.value().at(&[1, 2, 3]));
        let back = g.permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(back.value(), x.value());
        assert!(g.permute(&x, &[0, 0, 1]).is_err());
        assert!(g.reshape(&x, &[5, 5]).is_err());

        let a = g.constant(Tensor::zeros(&[9, 9, 15, 32]));
        let c = g.concat(&[a.clone(), a.clone()], 3).unwrap();
        assert_eq!(c.shape(), &[9, 9, 15, 64]);
        let odd = g.constant(Tensor::zeros(&[9, 9, 14, 32]));
        assert!(g.concat(&[a, odd], 3).is_err());
    }

    #[test]
    fn global_avg_pool_examples() {
        let mut g = g();
        let x = g.constant(Tensor::full(&[2, 2, 3], 1.5));
        assert_eq!(g.global_avg_pool(&x).unwrap().value().data(), &[1.5; 3]);
        let x = g.constant(Tensor::from_fn(&[9, 9, 1], |i| i as f64));
        assert_eq!(g.global_avg_pool(&x).unwrap().value().data(), &[40.0]);
        let x = g.constant(Tensor::zeros(&[9, 9, 960]));
        assert_eq!(g.global_avg_pool(&x).unwrap().shape(), &[960]);
    }

    #[test]
    fn softmax_cross_entropy_examples() {
        let mut g = g();
        let logits = g.param(Tensor::zeros(&[1, 4]));
        let (loss, probs) = g.softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!((loss.value().data()[0] - 4f64.ln()).abs() < 1e-15);

        let logits = g.param(t(&[1, 2], &[1000.0, 0.0]));
        let (loss, probs) = g.softmax_cross_entropy(&logits, &[0]).unwrap();
        assert_eq!(probs.data()[0], 1.0);
        assert!(probs.data()[1] < 1e-300);
        assert!(loss.value().data()[0].abs() < 1e-6);

        assert!(matches!(
            g.softmax_cross_entropy(&logits, &[2]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn backward_sum_of_squares_and_accumulation() {
        let mut g = g();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(&x, &x).unwrap();
        let loss = g.sum(&sq).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), &[2.0, 4.0]);
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), &[4.0, 8.0]);
        g.zero_grad();
        assert_eq!(g.grad(&x).unwrap(), &[0.0, 0.0]);

        assert!(matches!(g.backward(&sq), Err(Error::Usage(_))));
        let c = g.constant(Tensor::scalar(1.0));
        assert!(matches!(g.backward(&c), Err(Error::Usage(_))));
    }

    #[test]
    fn finite_checks_flag_non_finite_outputs() {
        let mut g = Graph::<f64>::new().with_finite_checks();
        let x = g.constant(t(&[1], &[f64::MAX]));
        assert!(matches!(g.add(&x, &x), Err(Error::NonFinite { op: "add" })));
    }
}
