use std::rc::Rc;
use std::sync::OnceLock;

use super::kernels::{self, Conv3dGeom, DepthwiseGeom};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value living on a [`Graph`].
///
/// A `Var` with a tape id participates in backpropagation; one without is a
/// constant (or was produced while no input needed gradients).
#[derive(Clone, Debug)]
pub struct Var<T: Element = f32> {
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Element> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }
}

/// Multiply-accumulate and floating-op tallies of the forward ops executed so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub macs: u64,
    pub flops: u64,
}

#[derive(Debug)]
enum Op<T: Element> {
    Leaf,
    Dense { x: Var<T>, w: Var<T>, b: Var<T> },
    Conv3d { x: Var<T>, k: Var<T>, b: Var<T>, geom: Conv3dGeom },
    Depthwise { x: Var<T>, k: Var<T>, b: Var<T>, geom: DepthwiseGeom },
    Relu { x: Var<T> },
    Sigmoid { x: Var<T>, out: Rc<Tensor<T>> },
    Gelu { x: Var<T> },
    Add { a: Var<T>, b: Var<T> },
    Mul { a: Var<T>, b: Var<T> },
    Sum { x: Var<T> },
    Permute { x: Var<T>, axes: Vec<usize> },
    Reshape { x: Var<T> },
    Concat { xs: Vec<Var<T>>, axis: usize },
    GlobalAvgPool { x: Var<T> },
    SoftmaxCrossEntropy { logits: Var<T>, probs: Rc<Tensor<T>>, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node<T: Element> {
    op: Op<T>,
    len: usize,
}

/// Records executed operations for reverse-mode differentiation.
///
/// Node ids increase with execution order, so the tape is always in
/// topological order. Gradients of leaves accumulate across
/// [`backward`](Graph::backward) calls until [`zero_grad`](Graph::zero_grad).
#[derive(Debug)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
    counter: OpCounter,
    check_finite: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| {
        std::env::var("SSMIX_CHECK_FINITE")
            .map(|v| v == "1")
            .unwrap_or(false)
    })
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            counter: OpCounter::default(),
            check_finite: check_finite_enabled(),
        }
    }

    /// Turns on NaN/Inf checks after every op regardless of `SSMIX_CHECK_FINITE`.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counter(&self) -> OpCounter {
        self.counter
    }

    /// A trainable leaf; its gradient is retained after backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var<T> {
        let id = self.push(Op::Leaf, value.len());
        Var {
            id: Some(id),
            value: Rc::new(value),
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var<T> {
        Var {
            id: None,
            value: Rc::new(value),
        }
    }

    pub fn grad(&self, var: &Var<T>) -> Option<&[T]> {
        var.id
            .and_then(|id| self.leaf_grads.get(id))
            .and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.fill(T::zero());
        }
    }

    fn push(&mut self, op: Op<T>, len: usize) -> usize {
        self.nodes.push(Node { op, len });
        self.leaf_grads.push(None);
        self.nodes.len() - 1
    }

    fn emit(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, tracked: bool) -> Result<Var<T>> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let id = tracked.then(|| self.push(op, value.len()));
        Ok(Var {
            id,
            value: Rc::new(value),
        })
    }

    fn count(&mut self, macs: usize, extra_flops: usize) {
        self.counter.macs += macs as u64;
        self.counter.flops += 2 * macs as u64 + extra_flops as u64;
    }

    /// `y[..., j] = Σ_i x[..., i]·w[i, j] + b[j]`, weights shared across leading axes.
    pub fn dense(&mut self, x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        let ws = w.shape();
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] || b.shape() != [ws[1]] {
            return Err(Error::dim(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", b.shape()),
            ));
        }
        let (n_in, n_out) = (ws[0], ws[1]);
        let rows = x.value.len() / n_in.max(1);
        let mut y = Vec::with_capacity(rows * n_out);
        for _ in 0..rows {
            y.extend_from_slice(b.value.data());
        }
        kernels::matmul(x.value.data(), false, w.value.data(), false, &mut y, rows, n_in, n_out, true);
        self.count(rows * n_in * n_out, rows * n_out);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = n_out;
        let tracked = x.requires_grad() || w.requires_grad() || b.requires_grad();
        let op = Op::Dense {
            x: x.clone(),
            w: w.clone(),
            b: b.clone(),
        };
        self.emit("dense", Tensor::new(&shape, y)?, op, tracked)
    }

    /// "Same" 3×3×3 cross-correlation, stride 1, over `[B?, H, W, S, Cin]` with
    /// kernel `[3, 3, 3, Cin, Cout]`.
    pub fn conv3d(&mut self, x: &Var<T>, k: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        let ks = k.shape();
        let (batch, spatial) = match xs.len() {
            4 => (1, xs),
            5 => (xs[0], &xs[1..]),
            _ => {
                return Err(Error::dim(
                    "conv3d",
                    format!("input {xs:?} must be [H,W,S,C] or [B,H,W,S,C]"),
                ))
            }
        };
        if ks.len() != 5 || ks[..3] != [3, 3, 3] || ks[3] != spatial[3] || b.shape() != [ks[4]] {
            return Err(Error::dim(
                "conv3d",
                format!("input {xs:?}, kernel {ks:?}, bias {:?}", b.shape()),
            ));
        }
        let geom = Conv3dGeom {
            batch,
            h: spatial[0],
            w: spatial[1],
            s: spatial[2],
            cin: ks[3],
            cout: ks[4],
        };
        let y = kernels::conv3d_forward(&geom, x.value.data(), k.value.data(), b.value.data());
        let outputs = batch * geom.positions() * geom.cout;
        self.count(outputs * geom.patch_len(), outputs);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = geom.cout;
        let tracked = x.requires_grad() || k.requires_grad() || b.requires_grad();
        let op = Op::Conv3d {
            x: x.clone(),
            k: k.clone(),
            b: b.clone(),
            geom,
        };
        self.emit("conv3d", Tensor::new(&shape, y)?, op, tracked)
    }

    /// "Same" 3×3 depthwise convolution over `[B?, H, W, C]` with kernel `[3, 3, C]`.
    pub fn depthwise_conv2d(&mut self, x: &Var<T>, k: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        let (batch, spatial) = match xs.len() {
            3 => (1, xs),
            4 => (xs[0], &xs[1..]),
            _ => {
                return Err(Error::dim(
                    "depthwise_conv2d",
                    format!("input {xs:?} must be [H,W,C] or [B,H,W,C]"),
                ))
            }
        };
        let c = spatial[2];
        if k.shape() != [3, 3, c] || b.shape() != [c] {
            return Err(Error::dim(
                "depthwise_conv2d",
                format!("input {xs:?}, kernel {:?}, bias {:?}", k.shape(), b.shape()),
            ));
        }
        let geom = DepthwiseGeom {
            batch,
            h: spatial[0],
            w: spatial[1],
            c,
        };
        let y = kernels::depthwise_forward(&geom, x.value.data(), k.value.data(), b.value.data());
        self.count(y.len() * 9, y.len());
        let tracked = x.requires_grad() || k.requires_grad() || b.requires_grad();
        let op = Op::Depthwise {
            x: x.clone(),
            k: k.clone(),
            b: b.clone(),
            geom,
        };
        self.emit("depthwise_conv2d", Tensor::new(xs, y)?, op, tracked)
    }

    fn map(&self, x: &Var<T>, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = x.value.data().iter().map(|&v| f(v)).collect();
        Tensor::new(x.shape(), data).expect("shape preserved")
    }

    pub fn relu(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let y = self.map(x, |v| if v > T::zero() { v } else { T::zero() });
        self.count(0, y.len());
        self.emit("relu", y, Op::Relu { x: x.clone() }, x.requires_grad())
    }

    pub fn sigmoid(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let y = Rc::new(self.map(x, kernels::sigmoid));
        self.count(0, y.len());
        if self.check_finite && !y.all_finite() {
            return Err(Error::NonFinite { op: "sigmoid" });
        }
        let id = x.requires_grad().then(|| {
            self.push(
                Op::Sigmoid {
                    x: x.clone(),
                    out: y.clone(),
                },
                y.len(),
            )
        });
        Ok(Var { id, value: y })
    }

    pub fn gelu(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let y = self.map(x, kernels::gelu);
        self.count(0, y.len());
        self.emit("gelu", y, Op::Gelu { x: x.clone() }, x.requires_grad())
    }

    fn same_shape(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::dim(
                op,
                format!("operands {:?} and {:?}", a.shape(), b.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        Self::same_shape("add", a, b)?;
        let data = a.value.data().iter().zip(b.value.data()).map(|(&x, &y)| x + y).collect();
        self.count(0, a.value.len());
        let tracked = a.requires_grad() || b.requires_grad();
        let op = Op::Add {
            a: a.clone(),
            b: b.clone(),
        };
        self.emit("add", Tensor::new(a.shape(), data)?, op, tracked)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        Self::same_shape("mul", a, b)?;
        let data = a.value.data().iter().zip(b.value.data()).map(|(&x, &y)| x * y).collect();
        self.count(0, a.value.len());
        let tracked = a.requires_grad() || b.requires_grad();
        let op = Op::Mul {
            a: a.clone(),
            b: b.clone(),
        };
        self.emit("mul", Tensor::new(a.shape(), data)?, op, tracked)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let s: T = x.value.data().iter().copied().sum();
        self.emit("sum", Tensor::scalar(s), Op::Sum { x: x.clone() }, x.requires_grad())
    }

    pub fn permute(&mut self, x: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
        let y = x.value.permute(axes)?;
        let op = Op::Permute {
            x: x.clone(),
            axes: axes.to_vec(),
        };
        self.emit("permute", y, op, x.requires_grad())
    }

    pub fn reshape(&mut self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let y = Tensor::new(shape, x.value.data().to_vec())
            .map_err(|_| Error::dim("reshape", format!("cannot view {:?} as {shape:?}", x.shape())))?;
        self.emit("reshape", y, Op::Reshape { x: x.clone() }, x.requires_grad())
    }

    pub fn concat(&mut self, xs: &[Var<T>], axis: usize) -> Result<Var<T>> {
        let first = xs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut shape = first.clone();
        shape[axis] = 0;
        for x in xs {
            let s = x.shape();
            let agrees = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::dim(
                    "concat",
                    format!("shape {s:?} disagrees with {first:?} off axis {axis}"),
                ));
            }
            shape[axis] += s[axis];
        }
        let parts: Vec<(&[T], &[usize])> = xs.iter().map(|x| (x.value.data(), x.shape())).collect();
        let data = kernels::concat(&parts, axis);
        let tracked = xs.iter().any(Var::requires_grad);
        let op = Op::Concat {
            xs: xs.to_vec(),
            axis,
        };
        self.emit("concat", Tensor::new(&shape, data)?, op, tracked)
    }

    /// Spatial mean per channel: `[B?, H, W, C] → [B?, C]`.
    pub fn global_avg_pool(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        let (batch, h, w, c) = match *xs {
            [h, w, c] => (1, h, w, c),
            [b, h, w, c] => (b, h, w, c),
            _ => {
                return Err(Error::dim(
                    "global_avg_pool",
                    format!("input {xs:?} must be [H,W,C] or [B,H,W,C]"),
                ))
            }
        };
        let area = h * w;
        let scale = T::one() / T::from_f64(area as f64);
        let mut y = vec![T::zero(); batch * c];
        for (b, yb) in y.chunks_exact_mut(c).enumerate() {
            let xb = &x.value.data()[b * area * c..(b + 1) * area * c];
            for px in xb.chunks_exact(c) {
                for (acc, &v) in yb.iter_mut().zip(px) {
                    *acc += v;
                }
            }
            for v in yb.iter_mut() {
                *v *= scale;
            }
        }
        self.count(0, x.value.len());
        let shape: Vec<usize> = if xs.len() == 3 { vec![c] } else { vec![batch, c] };
        self.emit("global_avg_pool", Tensor::new(&shape, y)?, Op::GlobalAvgPool { x: x.clone() }, x.requires_grad())
    }

    /// Mean softmax cross-entropy over a `[B, K]` batch; also returns the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: &Var<T>, labels: &[usize]) -> Result<(Var<T>, Tensor<T>)> {
        let (batch, k) = match *logits.shape() {
            [b, k] => (b, k),
            _ => return Err(Error::dim("softmax_cross_entropy", format!("logits {:?} must be [B,K]", logits.shape()))),
        };
        if labels.len() != batch {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{} labels for a batch of {batch}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
        }
        let probs = softmax_rows(logits.value());
        let mut loss = 0.0f64;
        for (row, &label) in logits.value.data().chunks_exact(k).zip(labels) {
            let max = row.iter().copied().fold(row[0], T::max);
            let lse: f64 = row.iter().map(|&v| (v - max).exp().to_f64()).sum::<f64>().ln();
            loss += lse - (row[label] - max).to_f64();
        }
        let loss = T::from_f64(loss / batch.max(1) as f64);
        let probs = Rc::new(probs);
        let op = Op::SoftmaxCrossEntropy {
            logits: logits.clone(),
            probs: probs.clone(),
            labels: labels.to_vec(),
        };
        let out = self.emit("softmax_cross_entropy", Tensor::scalar(loss), op, logits.requires_grad())?;
        Ok((out, Rc::unwrap_or_clone(probs)))
    }

    /// Backpropagates from a scalar, adding `∂loss/∂leaf` into every leaf's gradient.
    pub fn backward(&mut self, loss: &Var<T>) -> Result<()> {
        if loss.value.len() != 1 || !loss.value.shape().is_empty() && loss.value.shape() != [1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let root = loss
            .id
            .ok_or_else(|| Error::Usage("backward on a value that does not require grad".into()))?;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root + 1];
        grads[root] = Some(vec![T::one()]);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            debug_assert_eq!(g.len(), node.len);
            match &node.op {
                Op::Leaf => {
                    let slot = self.leaf_grads[id].get_or_insert_with(|| vec![T::zero(); g.len()]);
                    for (s, v) in slot.iter_mut().zip(&g) {
                        *s += *v;
                    }
                }
                op => backprop(op, &g, &mut grads),
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_rows<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let k = *logits.shape().last().unwrap_or(&1);
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k.max(1)) {
        let max = row.iter().copied().fold(row[0], T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Tensor::new(logits.shape(), out).expect("shape preserved")
}

/// Gradient buffer for `var`, allocated on first use; `None` for constants.
fn slot<'a, T: Element>(grads: &'a mut [Option<Vec<T>>], var: &Var<T>) -> Option<&'a mut Vec<T>> {
    var.id
        .map(|id| grads[id].get_or_insert_with(|| vec![T::zero(); var.value.len()]))
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], var: &Var<T>, contrib: impl FnOnce(&mut [T])) {
    if let Some(buf) = slot(grads, var) {
        contrib(buf);
    }
}

fn backprop<T: Element>(op: &Op<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    match op {
        Op::Leaf => unreachable!(),
        Op::Dense { x, w, b } => {
            let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
            let rows = g.len() / n_out.max(1);
            accumulate(grads, x, |dx| {
                kernels::matmul(g, false, w.value.data(), true, dx, rows, n_out, n_in, true)
            });
            accumulate(grads, w, |dw| {
                kernels::matmul(x.value.data(), true, g, false, dw, n_in, rows, n_out, true)
            });
            accumulate(grads, b, |db| {
                for row in g.chunks_exact(n_out) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            });
        }
        Op::Conv3d { x, k, b, geom } => {
            let mut dx = x.id.map(|_| vec![T::zero(); x.value.len()]);
            let mut dk = k.id.map(|_| vec![T::zero(); k.value.len()]);
            let mut db = b.id.map(|_| vec![T::zero(); b.value.len()]);
            kernels::conv3d_backward(
                geom,
                x.value.data(),
                k.value.data(),
                g,
                dx.as_deref_mut(),
                dk.as_deref_mut(),
                db.as_deref_mut(),
            );
            add_into(grads, x, dx);
            add_into(grads, k, dk);
            add_into(grads, b, db);
        }
        Op::Depthwise { x, k, b, geom } => {
            let mut dx = x.id.map(|_| vec![T::zero(); x.value.len()]);
            let mut dk = k.id.map(|_| vec![T::zero(); k.value.len()]);
            let mut db = b.id.map(|_| vec![T::zero(); b.value.len()]);
            kernels::depthwise_backward(
                geom,
                x.value.data(),
                k.value.data(),
                g,
                dx.as_deref_mut(),
                dk.as_deref_mut(),
                db.as_deref_mut(),
            );
            add_into(grads, x, dx);
            add_into(grads, k, dk);
            add_into(grads, b, db);
        }
        Op::Relu { x } => accumulate(grads, x, |dx| {
            for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(x.value.data()) {
                if xv > T::zero() {
                    *d += gv;
                }
            }
        }),
        Op::Sigmoid { x, out } => accumulate(grads, x, |dx| {
            for ((d, &gv), &s) in dx.iter_mut().zip(g).zip(out.data()) {
                *d += gv * s * (T::one() - s);
            }
        }),
        Op::Gelu { x } => accumulate(grads, x, |dx| {
            for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(x.value.data()) {
                *d += gv * kernels::gelu_grad(xv);
            }
        }),
        Op::Add { a, b } => {
            accumulate(grads, a, |da| kernels::axpy(da, T::one(), g));
            accumulate(grads, b, |db| kernels::axpy(db, T::one(), g));
        }
        Op::Mul { a, b } => {
            accumulate(grads, a, |da| {
                for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(b.value.data()) {
                    *d += gv * bv;
                }
            });
            accumulate(grads, b, |db| {
                for ((d, &gv), &av) in db.iter_mut().zip(g).zip(a.value.data()) {
                    *d += gv * av;
                }
            });
        }
        Op::Sum { x } => accumulate(grads, x, |dx| {
            for d in dx.iter_mut() {
                *d += g[0];
            }
        }),
        Op::Permute { x, axes } => accumulate(grads, x, |dx| {
            let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
            let back = kernels::permute(g, &out_shape, &kernels::inverse_permutation(axes));
            kernels::axpy(dx, T::one(), &back);
        }),
        Op::Reshape { x } => accumulate(grads, x, |dx| kernels::axpy(dx, T::one(), g)),
        Op::Concat { xs, axis } => {
            let (outer, _, _) = kernels::split_axis(xs[0].shape(), *axis);
            let chunks: Vec<usize> = xs.iter().map(|x| x.shape()[*axis..].iter().product()).collect();
            let stride: usize = chunks.iter().sum();
            let mut offset = 0;
            for (x, &chunk) in xs.iter().zip(&chunks) {
                accumulate(grads, x, |dx| {
                    for o in 0..outer {
                        let src = &g[o * stride + offset..o * stride + offset + chunk];
                        kernels::axpy(&mut dx[o * chunk..(o + 1) * chunk], T::one(), src);
                    }
                });
                offset += chunk;
            }
        }
        Op::GlobalAvgPool { x } => accumulate(grads, x, |dx| {
            let xs = x.shape();
            let c = xs[xs.len() - 1];
            let area = xs[xs.len() - 3] * xs[xs.len() - 2];
            let scale = T::one() / T::from_f64(area as f64);
            for (b, gb) in g.chunks_exact(c).enumerate() {
                for px in dx[b * area * c..(b + 1) * area * c].chunks_exact_mut(c) {
                    for (d, &gv) in px.iter_mut().zip(gb) {
                        *d += gv * scale;
                    }
                }
            }
        }),
        Op::SoftmaxCrossEntropy { logits, probs, labels } => accumulate(grads, logits, |dl| {
            let k = logits.shape()[1];
            let scale = g[0] / T::from_f64(labels.len().max(1) as f64);
            for (r, &label) in labels.iter().enumerate() {
                let p = &probs.data()[r * k..(r + 1) * k];
                let d = &mut dl[r * k..(r + 1) * k];
                for (j, (dv, &pv)) in d.iter_mut().zip(p).enumerate() {
                    let target = if j == label { T::one() } else { T::zero() };
                    *dv += scale * (pv - target);
                }
            }
        }),
    }
}

fn add_into<T: Element>(grads: &mut [Option<Vec<T>>], var: &Var<T>, contrib: Option<Vec<T>>) {
    if let (Some(c), Some(buf)) = (contrib, slot(grads, var)) {
        kernels::axpy(buf, T::one(), &c);
    }
}
