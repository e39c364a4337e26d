//! Forward numerics for every primitive, over flat row-major buffers.

use rayon::prelude::*;

use super::kind::{numel, PrimitiveKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Evaluate `kind` on concrete inputs. Shapes were already validated by
/// [`PrimitiveKind::infer_shape`]; `out_shape` is its result.
pub fn forward<T: Scalar>(kind: &PrimitiveKind, inputs: &[(&[T], &[usize])], out_shape: &[usize]) -> Result<Vec<T>> {
    use PrimitiveKind::*;
    let (a, ashape) = inputs[0];
    let out = match kind {
        Add => zip(a, inputs[1].0, |x, y| x + y),
        Sub => zip(a, inputs[1].0, |x, y| x - y),
        Mul => zip(a, inputs[1].0, |x, y| x * y),
        Recip => a.iter().map(|&x| if x == T::zero() { T::zero() } else { x.recip() }).collect(),
        ScaleBy(c) => {
            let c = T::lit(*c);
            a.iter().map(|&x| x * c).collect()
        }
        Sum { to } => sum_to(a, ashape, to),
        Mean => {
            let n = T::from_usize(a.len().max(1)).unwrap();
            vec![a.iter().copied().sum::<T>() / n]
        }
        Abs => a.iter().map(|x| x.abs()).collect(),
        Square => a.iter().map(|&x| x * x).collect(),
        Sqrt => {
            if let Some(v) = a.iter().find(|v| **v < T::zero()) {
                return Err(Error::Domain(format!("sqrt of negative value {v}")));
            }
            a.iter().map(|x| x.sqrt()).collect()
        }
        L2Norm => {
            let n = ashape[0];
            let per = if n == 0 { 0 } else { a.len() / n };
            (0..n).map(|i| a[i * per..(i + 1) * per].iter().map(|&v| v * v).sum::<T>().sqrt()).collect()
        }
        LeakyRelu { slope } => {
            let s = T::lit(*slope);
            a.iter().map(|&x| if x >= T::zero() { x } else { x * s }).collect()
        }
        LeakyReluMask { slope } => {
            let s = T::lit(*slope);
            a.iter().map(|&x| if x >= T::zero() { T::one() } else { s }).collect()
        }
        RangeMask { lo, hi } => {
            let (lo, hi) = (T::lit(*lo), T::lit(*hi));
            a.iter().map(|&x| if x >= lo && x <= hi { T::one() } else { T::zero() }).collect()
        }
        Clamp { lo, hi } => {
            let (lo, hi) = (T::lit(*lo), T::lit(*hi));
            a.iter().map(|&x| x.max(lo).min(hi)).collect()
        }
        Round => a.iter().map(|x| x.round()).collect(),
        Sign => a.iter().map(|&x| if x > T::zero() { T::one() } else if x < T::zero() { -T::one() } else { T::zero() }).collect(),
        StopGradient => a.to_vec(),
        Matmul => {
            let (b, bshape) = inputs[1];
            let (m, k, n) = (ashape[0], ashape[1], bshape[1]);
            let mut c = vec![T::zero(); m * n];
            T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, T::zero(), &mut c, n as isize, 1);
            c
        }
        Conv2d { stride, pad } => {
            let (k, kshape) = inputs[1];
            conv2d(a, ashape, k, kshape, *stride, *pad, out_shape)
        }
        ConvTranspose2d { stride, pad, .. } => {
            let (k, kshape) = inputs[1];
            conv_transpose2d(a, ashape, k, kshape, *stride, *pad, out_shape)
        }
        Conv2dKernelGrad { stride, pad, .. } => {
            let (g, gshape) = inputs[1];
            conv2d_kernel_grad(a, ashape, g, gshape, *stride, *pad, out_shape)
        }
        Upsample { factor } => upsample(a, ashape, *factor),
        AvgPool { factor } => avg_pool(a, ashape, *factor),
        Concat { axis } => concat(inputs, *axis, out_shape),
        Slice { axis, start, end } => slice(a, ashape, *axis, *start, *end),
        Pad { axis, before, after } => pad(a, ashape, *axis, *before, *after),
        Broadcast { to } => broadcast(a, ashape, to),
        Reshape { .. } => a.to_vec(),
        Permute { axes } => permute(a, ashape, axes),
    };
    debug_assert_eq!(out.len(), numel(out_shape));
    Ok(out)
}

fn zip<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `small` seen through the axes of `big` (0 on broadcast axes).
fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    let off = big.len() - small.len();
    let st = strides(small);
    (0..big.len())
        .map(|i| if i < off || small[i - off] == 1 { 0 } else { st[i - off] })
        .collect()
}

/// Calls `f(out_index, in_index)` for every element of `big`, where
/// `in_index` is the matching element of the broadcast `small`.
fn for_each_broadcast(small: &[usize], big: &[usize], mut f: impl FnMut(usize, usize)) {
    let bst = broadcast_strides(small, big);
    let total = numel(big);
    if total == 0 {
        return;
    }
    let rank = big.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in 0..total {
        f(o, src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += bst[ax];
            if idx[ax] < big[ax] {
                break;
            }
            src -= bst[ax] * big[ax];
            idx[ax] = 0;
        }
    }
}

fn broadcast<T: Scalar>(a: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); numel(to)];
    for_each_broadcast(from, to, |o, i| out[o] = a[i]);
    out
}

fn sum_to<T: Scalar>(a: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); numel(to)];
    for_each_broadcast(to, from, |i, o| out[o] += a[i]);
    out
}

fn permute<T: Scalar>(a: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let st = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&i| shape[i]).collect();
    let src_st: Vec<usize> = axes.iter().map(|&i| st[i]).collect();
    let total = a.len();
    let mut out = Vec::with_capacity(total);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..total {
        out.push(a[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_st[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_st[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Split a shape around `axis` into (outer, axis extent, inner).
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn concat<T: Scalar>(inputs: &[(&[T], &[usize])], axis: usize, out_shape: &[usize]) -> Vec<T> {
    let (outer, _, inner) = around(out_shape, axis);
    let mut out = Vec::with_capacity(numel(out_shape));
    for o in 0..outer {
        for (vals, shape) in inputs {
            let block = shape[axis] * inner;
            out.extend_from_slice(&vals[o * block..(o + 1) * block]);
        }
    }
    out
}

fn slice<T: Scalar>(a: &[T], shape: &[usize], axis: usize, start: usize, end: usize) -> Vec<T> {
    let (outer, len, inner) = around(shape, axis);
    let mut out = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        let base = o * len * inner;
        out.extend_from_slice(&a[base + start * inner..base + end * inner]);
    }
    out
}

fn pad<T: Scalar>(a: &[T], shape: &[usize], axis: usize, before: usize, after: usize) -> Vec<T> {
    let (outer, len, inner) = around(shape, axis);
    let mut out = Vec::with_capacity(outer * (len + before + after) * inner);
    for o in 0..outer {
        out.extend(std::iter::repeat_n(T::zero(), before * inner));
        out.extend_from_slice(&a[o * len * inner..(o + 1) * len * inner]);
        out.extend(std::iter::repeat_n(T::zero(), after * inner));
    }
    out
}

fn upsample<T: Scalar>(a: &[T], shape: &[usize], f: usize) -> Vec<T> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let planes = numel(&shape[..r - 2]);
    let mut out = Vec::with_capacity(a.len() * f * f);
    for p in 0..planes {
        let plane = &a[p * h * w..(p + 1) * h * w];
        for i in 0..h * f {
            let row = &plane[(i / f) * w..(i / f + 1) * w];
            for &v in row {
                out.extend(std::iter::repeat_n(v, f));
            }
        }
    }
    out
}

fn avg_pool<T: Scalar>(a: &[T], shape: &[usize], f: usize) -> Vec<T> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let (ho, wo) = (h / f, w / f);
    let planes = numel(&shape[..r - 2]);
    let norm = T::from_usize(f * f).unwrap();
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let plane = &a[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                let mut s = T::zero();
                for di in 0..f {
                    for dj in 0..f {
                        s += plane[(i * f + di) * w + j * f + dj];
                    }
                }
                dst[i * wo + j] = s / norm;
            }
        }
    }
    out
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Whether the im2col matrix is the input plane itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Visit every im2col row segment that lies inside the input: calls
    /// `f(dst, src, len)` where im2col entries `dst + t` read sample offset
    /// `src + t * stride` for `t < len`. Entries never visited are padding.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (s, p) = (self.stride, self.pad as isize);
        let ncols = self.cols();
        let mut r = 0;
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    // valid output columns: 0 <= oj*s + kj - p < w
                    let lo = (p - kj as isize).max(0) as usize;
                    let lo = lo.div_ceil(s);
                    let hi_excl = self.w as isize + p - kj as isize;
                    let hi = if hi_excl <= 0 { 0 } else { ((hi_excl as usize - 1) / s + 1).min(self.wo) };
                    for oi in 0..self.ho {
                        let ii = (oi * s + ki) as isize - p;
                        if ii < 0 || ii as usize >= self.h || lo >= hi {
                            continue;
                        }
                        let jj0 = lo * s + kj - self.pad;
                        f(r * ncols + oi * self.wo + lo, (ci * self.h + ii as usize) * self.w + jj0, hi - lo);
                    }
                    r += 1;
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.rows() * self.cols()];
        let s = self.stride;
        self.for_each_run(|dst, src, len| {
            if s == 1 {
                cols[dst..dst + len].copy_from_slice(&x[src..src + len]);
            } else {
                for t in 0..len {
                    cols[dst + t] = x[src + t * s];
                }
            }
        });
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let s = self.stride;
        self.for_each_run(|src, dst, len| {
            if s == 1 {
                for (o, &v) in x[dst..dst + len].iter_mut().zip(&cols[src..src + len]) {
                    *o += v;
                }
            } else {
                for t in 0..len {
                    x[dst + t * s] += cols[src + t];
                }
            }
        });
    }
}

fn geom(x: &[usize], k_hw: (usize, usize), out_hw: (usize, usize), stride: usize, pad: usize) -> ConvGeom {
    ConvGeom { c: x[1], h: x[2], w: x[3], kh: k_hw.0, kw: k_hw.1, ho: out_hw.0, wo: out_hw.1, stride, pad }
}

fn conv2d<T: Scalar>(x: &[T], xs: &[usize], k: &[T], ks: &[usize], stride: usize, pad: usize, out_shape: &[usize]) -> Vec<T> {
    let g = geom(xs, (ks[2], ks[3]), (out_shape[2], out_shape[3]), stride, pad);
    let kout = ks[0];
    let in_len = g.c * g.h * g.w;
    let out_len = kout * g.cols();
    let mut out = vec![T::zero(); xs[0] * out_len];
    out.par_chunks_mut(out_len.max(1)).enumerate().for_each(|(n, dst)| {
        let sample = &x[n * in_len..(n + 1) * in_len];
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            sample
        } else {
            owned = g.im2col(sample);
            &owned
        };
        let (rows, ncol) = (g.rows(), g.cols());
        T::gemm(kout, rows, ncol, T::one(), k, rows as isize, 1, cols, ncol as isize, 1, T::zero(), dst, ncol as isize, 1);
    });
    out
}

fn conv_transpose2d<T: Scalar>(gy: &[T], gs: &[usize], k: &[T], ks: &[usize], stride: usize, pad: usize, out_shape: &[usize]) -> Vec<T> {
    let g = geom(out_shape, (ks[2], ks[3]), (gs[2], gs[3]), stride, pad);
    let kout = ks[0];
    let in_len = kout * g.cols();
    let out_len = g.c * g.h * g.w;
    let mut out = vec![T::zero(); gs[0] * out_len];
    out.par_chunks_mut(out_len.max(1)).enumerate().for_each(|(n, dst)| {
        let grad = &gy[n * in_len..(n + 1) * in_len];
        let (rows, ncol) = (g.rows(), g.cols());
        if g.is_pointwise() {
            T::gemm(rows, kout, ncol, T::one(), k, 1, rows as isize, grad, ncol as isize, 1, T::zero(), dst, ncol as isize, 1);
        } else {
            let mut cols = vec![T::zero(); rows * ncol];
            T::gemm(rows, kout, ncol, T::one(), k, 1, rows as isize, grad, ncol as isize, 1, T::zero(), &mut cols, ncol as isize, 1);
            g.col2im(&cols, dst);
        }
    });
    out
}

fn conv2d_kernel_grad<T: Scalar>(x: &[T], xs: &[usize], gy: &[T], gs: &[usize], stride: usize, pad: usize, out_shape: &[usize]) -> Vec<T> {
    let g = geom(xs, (out_shape[2], out_shape[3]), (gs[2], gs[3]), stride, pad);
    let kout = gs[1];
    let in_len = g.c * g.h * g.w;
    let g_len = kout * g.cols();
    let (rows, ncol) = (g.rows(), g.cols());
    let partials: Vec<Vec<T>> = (0..xs[0])
        .into_par_iter()
        .map(|n| {
            let sample = &x[n * in_len..(n + 1) * in_len];
            let grad = &gy[n * g_len..(n + 1) * g_len];
            let owned;
            let cols: &[T] = if g.is_pointwise() {
                sample
            } else {
                owned = g.im2col(sample);
                &owned
            };
            let mut dk = vec![T::zero(); kout * rows];
            T::gemm(kout, ncol, rows, T::one(), grad, ncol as isize, 1, cols, 1, ncol as isize, T::zero(), &mut dk, rows as isize, 1);
            dk
        })
        .collect();
    // fixed summation order keeps the result independent of scheduling
    let mut out = vec![T::zero(); kout * rows];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}
