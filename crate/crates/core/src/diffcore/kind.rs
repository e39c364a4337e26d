use crate::error::{Error, Result};

/// Tensor extents, outermost first. The empty shape is a scalar.
pub type Shape = Vec<usize>;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Every operation the graph knows how to evaluate and differentiate.
///
/// Each kind's adjoint is itself built from kinds in this enum, so a
/// gradient can be differentiated again. The conv family is closed under
/// adjoints: the input adjoint of [`Conv2d`](Self::Conv2d) is
/// [`ConvTranspose2d`](Self::ConvTranspose2d), the kernel adjoint is
/// [`Conv2dKernelGrad`](Self::Conv2dKernelGrad), and each of those two has
/// adjoints back in the family.
#[derive(Clone, Debug, PartialEq)]
pub enum PrimitiveKind {
    Add,
    Sub,
    Mul,
    /// `1/x`, with `1/0` defined as `0`.
    Recip,
    ScaleBy(f64),
    /// Reduce to a broadcast-compatible shape (right-aligned, like numpy).
    Sum { to: Shape },
    /// Mean of all elements, producing a scalar.
    Mean,
    Abs,
    Square,
    Sqrt,
    /// Euclidean norm over every axis but the first: `[N, ...] -> [N]`.
    L2Norm,
    LeakyRelu { slope: f64 },
    /// `[m, k] x [k, n] -> [m, n]`.
    Matmul,
    /// Cross-correlation `[N,C,H,W] x [K,C,kh,kw] -> [N,K,H',W']`.
    Conv2d { stride: usize, pad: usize },
    /// Adjoint of `Conv2d` in its input: `[N,K,H',W'] x [K,C,kh,kw] -> [N,C,H,W]`.
    ConvTranspose2d { stride: usize, pad: usize, out_hw: (usize, usize) },
    /// Adjoint of `Conv2d` in its kernel: `[N,C,H,W] x [N,K,H',W'] -> [K,C,kh,kw]`.
    Conv2dKernelGrad { stride: usize, pad: usize, kernel_hw: (usize, usize) },
    /// Nearest-neighbour upsampling of the two trailing axes.
    Upsample { factor: usize },
    AvgPool { factor: usize },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    /// Zero padding along one axis; the adjoint of `Slice`.
    Pad { axis: usize, before: usize, after: usize },
    Broadcast { to: Shape },
    Reshape { to: Shape },
    Permute { axes: Vec<usize> },
    Clamp { lo: f64, hi: f64 },
    /// Nearest integer, ties away from zero. Zero adjoint.
    Round,
    /// Sign with `sign(0) = 0`. Zero adjoint.
    Sign,
    StopGradient,
    /// Derivative of `LeakyRelu`: `1` where `x >= 0`, `slope` elsewhere. Zero adjoint.
    LeakyReluMask { slope: f64 },
    /// `1` where `lo <= x <= hi`, `0` elsewhere. Zero adjoint.
    RangeMask { lo: f64, hi: f64 },
}

impl PrimitiveKind {
    pub fn name(&self) -> &'static str {
        use PrimitiveKind::*;
        match self {
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Recip => "recip",
            ScaleBy(_) => "scale",
            Sum { .. } => "sum",
            Mean => "mean",
            Abs => "abs",
            Square => "square",
            Sqrt => "sqrt",
            L2Norm => "l2-norm",
            LeakyRelu { .. } => "leaky-relu",
            Matmul => "matmul",
            Conv2d { .. } => "conv2d",
            ConvTranspose2d { .. } => "conv-transpose2d",
            Conv2dKernelGrad { .. } => "conv2d-kernel-grad",
            Upsample { .. } => "nearest-upsample",
            AvgPool { .. } => "avg-pool",
            Concat { .. } => "concat",
            Slice { .. } => "slice",
            Pad { .. } => "pad",
            Broadcast { .. } => "broadcast",
            Reshape { .. } => "reshape",
            Permute { .. } => "permute",
            Clamp { .. } => "clamp",
            Round => "round",
            Sign => "sign",
            StopGradient => "stop-gradient",
            LeakyReluMask { .. } => "leaky-relu-mask",
            RangeMask { .. } => "range-mask",
        }
    }

    /// Kinds whose output carries no gradient back to any input.
    pub fn blocks_gradient(&self) -> bool {
        matches!(
            self,
            PrimitiveKind::Round
                | PrimitiveKind::Sign
                | PrimitiveKind::StopGradient
                | PrimitiveKind::LeakyReluMask { .. }
                | PrimitiveKind::RangeMask { .. }
        )
    }

    fn arity(&self) -> Option<usize> {
        use PrimitiveKind::*;
        match self {
            Add | Sub | Mul | Matmul | Conv2d { .. } | ConvTranspose2d { .. } | Conv2dKernelGrad { .. } => Some(2),
            Concat { .. } => None,
            _ => Some(1),
        }
    }

    /// Output shape for the given input shapes, or a shape error.
    pub fn infer_shape(&self, inputs: &[&[usize]]) -> Result<Shape> {
        use PrimitiveKind::*;
        let name = self.name();
        match self.arity() {
            Some(n) if inputs.len() != n => {
                return Err(Error::shape(format!("{name} takes {n} inputs, got {}", inputs.len())))
            }
            None if inputs.is_empty() => return Err(Error::shape(format!("{name} needs at least one input"))),
            _ => {}
        }
        let first = inputs[0];
        match self {
            Add | Sub | Mul => {
                if inputs[0] != inputs[1] {
                    return Err(Error::shape(format!("{name}: {:?} vs {:?}", inputs[0], inputs[1])));
                }
                Ok(first.to_vec())
            }
            Recip | ScaleBy(_) | Abs | Square | Sqrt | LeakyRelu { .. } | Clamp { .. } | Round | Sign
            | StopGradient | LeakyReluMask { .. } | RangeMask { .. } => Ok(first.to_vec()),
            Sum { to } => {
                check_broadcastable(to, first).map_err(|e| Error::shape(format!("sum: {e}")))?;
                Ok(to.clone())
            }
            Broadcast { to } => {
                check_broadcastable(first, to).map_err(|e| Error::shape(format!("broadcast: {e}")))?;
                Ok(to.clone())
            }
            Mean => Ok(vec![]),
            L2Norm => {
                if first.is_empty() {
                    return Err(Error::shape("l2-norm needs a leading batch axis"));
                }
                Ok(vec![first[0]])
            }
            Matmul => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                    return Err(Error::shape(format!("matmul: {a:?} x {b:?}")));
                }
                Ok(vec![a[0], b[1]])
            }
            Conv2d { stride, pad } => {
                let (x, k) = (inputs[0], inputs[1]);
                if x.len() != 4 || k.len() != 4 || x[1] != k[1] {
                    return Err(Error::shape(format!("conv2d: input {x:?}, kernel {k:?}")));
                }
                let ho = conv_extent(x[2], k[2], *stride, *pad)?;
                let wo = conv_extent(x[3], k[3], *stride, *pad)?;
                Ok(vec![x[0], k[0], ho, wo])
            }
            ConvTranspose2d { stride, pad, out_hw } => {
                let (g, k) = (inputs[0], inputs[1]);
                if g.len() != 4 || k.len() != 4 || g[1] != k[0] {
                    return Err(Error::shape(format!("conv-transpose2d: grad {g:?}, kernel {k:?}")));
                }
                let ho = conv_extent(out_hw.0, k[2], *stride, *pad)?;
                let wo = conv_extent(out_hw.1, k[3], *stride, *pad)?;
                if (ho, wo) != (g[2], g[3]) {
                    return Err(Error::shape(format!(
                        "conv-transpose2d: grad extent {:?} does not match output {out_hw:?}",
                        &g[2..]
                    )));
                }
                Ok(vec![g[0], k[1], out_hw.0, out_hw.1])
            }
            Conv2dKernelGrad { stride, pad, kernel_hw } => {
                let (x, g) = (inputs[0], inputs[1]);
                if x.len() != 4 || g.len() != 4 || x[0] != g[0] {
                    return Err(Error::shape(format!("conv2d-kernel-grad: input {x:?}, grad {g:?}")));
                }
                let ho = conv_extent(x[2], kernel_hw.0, *stride, *pad)?;
                let wo = conv_extent(x[3], kernel_hw.1, *stride, *pad)?;
                if (ho, wo) != (g[2], g[3]) {
                    return Err(Error::shape("conv2d-kernel-grad: grad extent mismatch"));
                }
                Ok(vec![g[1], x[1], kernel_hw.0, kernel_hw.1])
            }
            Upsample { factor } => {
                if first.len() < 2 || *factor == 0 {
                    return Err(Error::shape("nearest-upsample needs two trailing spatial axes"));
                }
                let mut s = first.to_vec();
                let r = s.len();
                s[r - 2] *= factor;
                s[r - 1] *= factor;
                Ok(s)
            }
            AvgPool { factor } => {
                let r = first.len();
                if r < 2 || *factor == 0 || first[r - 2] % factor != 0 || first[r - 1] % factor != 0 {
                    return Err(Error::shape(format!("avg-pool factor {factor} does not divide {first:?}")));
                }
                let mut s = first.to_vec();
                s[r - 2] /= factor;
                s[r - 1] /= factor;
                Ok(s)
            }
            Concat { axis } => {
                let mut out = first.to_vec();
                if *axis >= out.len() {
                    return Err(Error::shape("concat axis out of range"));
                }
                for s in &inputs[1..] {
                    let same_rest = s.len() == out.len()
                        && s.iter().zip(first).enumerate().all(|(i, (a, b))| i == *axis || a == b);
                    if !same_rest {
                        return Err(Error::shape(format!("concat: {first:?} vs {s:?} along {axis}")));
                    }
                    out[*axis] += s[*axis];
                }
                Ok(out)
            }
            Slice { axis, start, end } => {
                if *axis >= first.len() || start > end || *end > first[*axis] {
                    return Err(Error::shape(format!("slice {start}..{end} of axis {axis} in {first:?}")));
                }
                let mut s = first.to_vec();
                s[*axis] = end - start;
                Ok(s)
            }
            Pad { axis, before, after } => {
                if *axis >= first.len() {
                    return Err(Error::shape("pad axis out of range"));
                }
                let mut s = first.to_vec();
                s[*axis] += before + after;
                Ok(s)
            }
            Reshape { to } => {
                if numel(to) != numel(first) {
                    return Err(Error::shape(format!("reshape {first:?} -> {to:?}")));
                }
                Ok(to.clone())
            }
            Permute { axes } => {
                let mut seen = vec![false; first.len()];
                if axes.len() != first.len() || axes.iter().any(|&a| a >= first.len() || std::mem::replace(&mut seen[a], true)) {
                    return Err(Error::shape(format!("permute {axes:?} of {first:?}")));
                }
                Ok(axes.iter().map(|&a| first[a]).collect())
            }
        }
    }
}

/// Output extent of a strided convolution; fails unless it is integral.
pub fn conv_extent(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k % 2 == 0 || stride == 0 {
        return Err(Error::shape(format!("kernel extent {k} must be odd and stride positive")));
    }
    let span = (size + 2 * pad)
        .checked_sub(k)
        .ok_or_else(|| Error::shape(format!("kernel {k} larger than padded input {size}+2*{pad}")))?;
    if span % stride != 0 {
        return Err(Error::shape(format!(
            "non-integral conv output: ({size}+2*{pad}-{k})/{stride}"
        )));
    }
    Ok(span / stride + 1)
}

/// `from` can be broadcast to `to` when, aligned on the right, every axis of
/// `from` is 1 or equal to the matching axis of `to`.
pub fn check_broadcastable(from: &[usize], to: &[usize]) -> std::result::Result<(), String> {
    if from.len() > to.len() {
        return Err(format!("{from:?} has more axes than {to:?}"));
    }
    let off = to.len() - from.len();
    for (i, &d) in from.iter().enumerate() {
        if d != 1 && d != to[off + i] {
            return Err(format!("{from:?} not broadcastable to {to:?}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_extent_rejects_fractional_output() {
        assert_eq!(conv_extent(3, 3, 1, 1).unwrap(), 3);
        assert_eq!(conv_extent(7, 3, 2, 1).unwrap(), 4);
        assert!(conv_extent(8, 3, 2, 1).is_err());
        assert!(conv_extent(8, 2, 1, 0).is_err());
    }

    #[test]
    fn broadcast_rules_are_right_aligned() {
        assert!(check_broadcastable(&[3, 1], &[2, 3, 4]).is_ok());
        assert!(check_broadcastable(&[], &[2, 3]).is_ok());
        assert!(check_broadcastable(&[2], &[2, 3]).is_err());
    }

    #[test]
    fn permute_rejects_repeated_axes() {
        let k = PrimitiveKind::Permute { axes: vec![0, 0] };
        assert!(k.infer_shape(&[&[2, 3]]).is_err());
        let k = PrimitiveKind::Permute { axes: vec![1, 0] };
        assert_eq!(k.infer_shape(&[&[2, 3]]).unwrap(), vec![3, 2]);
    }
}
