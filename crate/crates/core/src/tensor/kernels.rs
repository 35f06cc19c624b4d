//! Slice-level compute kernels behind the graph operations.
//!
//! Every kernel works on contiguous row-major buffers. Inner loops are written
//! as `y[..] += a * x[..]` sweeps so they vectorize; matrix products go
//! through the blocked GEMM in [`Element::gemm`].

use super::Element;
use crate::error::{Error, Result};

/// `out = a·b` (or `out += a·b` when `accumulate`), with optional transposes.
///
/// `a` is logically `m×k` and `b` is `k×n`; when `trans_a` is set the buffer
/// `a` holds the `k×m` matrix instead, likewise for `trans_b`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Element>(
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths checked above; the three buffers are distinct borrows.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn axpy<T: Element>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn permuted_shape(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let mut seen = vec![false; shape.len()];
    if axes.len() != shape.len() {
        return Err(Error::dim(
            "permute",
            format!("axes {axes:?} do not match rank of {shape:?}"),
        ));
    }
    for &a in axes {
        if a >= shape.len() || seen[a] {
            return Err(Error::dim(
                "permute",
                format!("axes {axes:?} are not a permutation of 0..{}", shape.len()),
            ));
        }
        seen[a] = true;
    }
    Ok(axes.iter().map(|&a| shape[a]).collect())
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Materializes `data` (of `shape`) with output axis `i` taken from input axis `axes[i]`.
pub fn permute<T: Element>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = shape.len();
    if rank == 0 || data.is_empty() {
        return data.to_vec();
    }
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let inner_len = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner_len]);
        } else {
            out.extend((0..inner_len).map(|j| data[base + j * inner_stride]));
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

/// Splits a shape around `axis` into (outer count, axis length, inner count).
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat<T: Element>(parts: &[(&[T], &[usize])], axis: usize) -> Vec<T> {
    let total: usize = parts.iter().map(|(d, _)| d.len()).sum();
    let mut out = Vec::with_capacity(total);
    let (outer, _, _) = split_axis(parts[0].1, axis);
    for o in 0..outer {
        for (d, s) in parts {
            let chunk = s[axis..].iter().product::<usize>();
            out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

/// Geometry of a batched 3-axis "same" convolution with a 3×3×3 kernel.
#[derive(Clone, Copy, Debug)]
pub struct Conv3dGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub s: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Conv3dGeom {
    pub fn positions(&self) -> usize {
        self.h * self.w * self.s
    }

    pub fn patch_len(&self) -> usize {
        27 * self.cin
    }

    /// Fills `col` (`positions × 27·cin`) with the zero-padded neighbourhoods of one sample.
    fn im2col<T: Element>(&self, x: &[T], col: &mut [T]) {
        let (h, w, s, c) = (self.h, self.w, self.s, self.cin);
        let row = self.patch_len();
        col.fill(T::zero());
        for i in 0..h {
            for j in 0..w {
                for k in 0..s {
                    let base = ((i * w + j) * s + k) * row;
                    for di in 0..3 {
                        let ii = i + di;
                        if ii == 0 || ii > h {
                            continue;
                        }
                        for dj in 0..3 {
                            let jj = j + dj;
                            if jj == 0 || jj > w {
                                continue;
                            }
                            for dk in 0..3 {
                                let kk = k + dk;
                                if kk == 0 || kk > s {
                                    continue;
                                }
                                let src = (((ii - 1) * w + (jj - 1)) * s + (kk - 1)) * c;
                                let dst = base + ((di * 3 + dj) * 3 + dk) * c;
                                col[dst..dst + c].copy_from_slice(&x[src..src + c]);
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Element>(&self, col: &[T], dx: &mut [T]) {
        let (h, w, s, c) = (self.h, self.w, self.s, self.cin);
        let row = self.patch_len();
        for i in 0..h {
            for j in 0..w {
                for k in 0..s {
                    let base = ((i * w + j) * s + k) * row;
                    for di in 0..3 {
                        let ii = i + di;
                        if ii == 0 || ii > h {
                            continue;
                        }
                        for dj in 0..3 {
                            let jj = j + dj;
                            if jj == 0 || jj > w {
                                continue;
                            }
                            for dk in 0..3 {
                                let kk = k + dk;
                                if kk == 0 || kk > s {
                                    continue;
                                }
                                let dst = (((ii - 1) * w + (jj - 1)) * s + (kk - 1)) * c;
                                let src = base + ((di * 3 + dj) * 3 + dk) * c;
                                for (d, &v) in dx[dst..dst + c].iter_mut().zip(&col[src..src + c]) {
                                    *d += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<T: Element>(g: &Conv3dGeom, x: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let pos = g.positions();
    let row = g.patch_len();
    let in_len = pos * g.cin;
    let out_len = pos * g.cout;
    let mut y = vec![T::zero(); g.batch * out_len];
    let mut col = vec![T::zero(); pos * row];
    for b in 0..g.batch {
        g.im2col(&x[b * in_len..(b + 1) * in_len], &mut col);
        let yb = &mut y[b * out_len..(b + 1) * out_len];
        for p in 0..pos {
            yb[p * g.cout..(p + 1) * g.cout].copy_from_slice(bias);
        }
        matmul(&col, false, kernel, false, yb, pos, row, g.cout, true);
    }
    y
}

/// Accumulates input, kernel and bias gradients of [`conv3d_forward`].
pub fn conv3d_backward<T: Element>(
    g: &Conv3dGeom,
    x: &[T],
    kernel: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dk: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let pos = g.positions();
    let row = g.patch_len();
    let in_len = pos * g.cin;
    let out_len = pos * g.cout;
    if let Some(db) = db {
        for chunk in dy.chunks_exact(g.cout) {
            for (d, &v) in db.iter_mut().zip(chunk) {
                *d += v;
            }
        }
    }
    let mut col = vec![T::zero(); pos * row];
    if let Some(dk) = dk {
        for b in 0..g.batch {
            g.im2col(&x[b * in_len..(b + 1) * in_len], &mut col);
            let dyb = &dy[b * out_len..(b + 1) * out_len];
            matmul(&col, true, dyb, false, dk, row, pos, g.cout, true);
        }
    }
    if let Some(dx) = dx {
        for b in 0..g.batch {
            let dyb = &dy[b * out_len..(b + 1) * out_len];
            matmul(dyb, false, kernel, true, &mut col, pos, g.cout, row, false);
            g.col2im(&col, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
}

/// Geometry of a batched 3×3 depthwise "same" convolution.
#[derive(Clone, Copy, Debug)]
pub struct DepthwiseGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl DepthwiseGeom {
    /// Valid (output pixel, input pixel, tap) triples for one sample.
    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (h, w) = (self.h, self.w);
        (0..h).flat_map(move |i| {
            (0..w).flat_map(move |j| {
                (0..9).filter_map(move |t| {
                    let (ii, jj) = (i + t / 3, j + t % 3);
                    if ii == 0 || ii > h || jj == 0 || jj > w {
                        None
                    } else {
                        Some((i * w + j, (ii - 1) * w + (jj - 1), t))
                    }
                })
            })
        })
    }
}

pub fn depthwise_forward<T: Element>(g: &DepthwiseGeom, x: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let c = g.c;
    let plane = g.h * g.w * c;
    let mut y = vec![T::zero(); g.batch * plane];
    for b in 0..g.batch {
        let xb = &x[b * plane..(b + 1) * plane];
        let yb = &mut y[b * plane..(b + 1) * plane];
        for px in yb.chunks_exact_mut(c) {
            px.copy_from_slice(bias);
        }
        for (o, i, t) in g.taps() {
            let yo = &mut yb[o * c..(o + 1) * c];
            let xi = &xb[i * c..(i + 1) * c];
            let kt = &kernel[t * c..(t + 1) * c];
            for ((yv, &xv), &kv) in yo.iter_mut().zip(xi).zip(kt) {
                *yv += xv * kv;
            }
        }
    }
    y
}

pub fn depthwise_backward<T: Element>(
    g: &DepthwiseGeom,
    x: &[T],
    kernel: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let c = g.c;
    let plane = g.h * g.w * c;
    if let Some(db) = db {
        for chunk in dy.chunks_exact(c) {
            for (d, &v) in db.iter_mut().zip(chunk) {
                *d += v;
            }
        }
    }
    for b in 0..g.batch {
        let xb = &x[b * plane..(b + 1) * plane];
        let dyb = &dy[b * plane..(b + 1) * plane];
        for (o, i, t) in g.taps() {
            let go = &dyb[o * c..(o + 1) * c];
            if let Some(dx) = dx.as_deref_mut() {
                let dxi = &mut dx[b * plane + i * c..b * plane + (i + 1) * c];
                let kt = &kernel[t * c..(t + 1) * c];
                for ((d, &gv), &kv) in dxi.iter_mut().zip(go).zip(kt) {
                    *d += gv * kv;
                }
            }
            if let Some(dk) = dk.as_deref_mut() {
                let dkt = &mut dk[t * c..(t + 1) * c];
                let xi = &xb[i * c..(i + 1) * c];
                for ((d, &gv), &xv) in dkt.iter_mut().zip(go).zip(xi) {
                    *d += gv * xv;
                }
            }
        }
    }
}

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn gelu_grad<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(half * x * x)).exp() * T::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

#[inline]
pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
