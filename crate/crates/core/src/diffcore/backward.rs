//! Reverse-mode differentiation by graph construction.
//!
//! Adjoints are appended to the same graph as ordinary nodes, so the
//! tensors returned by [`Graph::grad`] can themselves be differentiated.

use super::graph::{Graph, Origin, Tensor};
use super::kind::{numel, PrimitiveKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Graph<T> {
    /// Gradients of a scalar `output` with respect to each tensor in `wrt`.
    ///
    /// A `wrt` tensor that does not influence `output` gets a zero constant
    /// of its own shape.
    pub fn grad(&mut self, output: Tensor, wrt: &[Tensor]) -> Result<Vec<Tensor>> {
        let oshape = self.shape(output).to_vec();
        if oshape.len() > 1 || numel(&oshape) != 1 {
            return Err(Error::shape(format!("grad needs a scalar output, got shape {oshape:?}")));
        }
        let end = output.0 + 1;

        // nodes on some path from a wrt tensor to the output
        let mut reaches = vec![false; end];
        for w in wrt {
            if w.0 < end {
                reaches[w.0] = true;
            }
        }
        for i in 0..end {
            if reaches[i] {
                continue;
            }
            if let Origin::Op(kind) = &self.nodes[i].origin {
                if !kind.blocks_gradient() {
                    reaches[i] = self.nodes[i].inputs.iter().any(|t| reaches[t.0]);
                }
            }
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; end];
        if reaches[output.0] {
            adj[output.0] = Some(self.full(&oshape, T::one())?);
        }
        for i in (0..end).rev() {
            let Some(g) = adj[i] else { continue };
            let Origin::Op(kind) = self.nodes[i].origin.clone() else { continue };
            if kind.blocks_gradient() {
                continue;
            }
            let inputs = self.nodes[i].inputs.clone();
            let need: Vec<bool> = inputs.iter().map(|t| reaches[t.0]).collect();
            if !need.iter().any(|&b| b) {
                continue;
            }
            let contribs = self.input_adjoints(&kind, &inputs, Tensor(i), g, &need)?;
            for (inp, c) in inputs.iter().zip(contribs) {
                let Some(mut c) = c else { continue };
                if self.corrupt_adjoint == Some(kind.name()) {
                    c = self.scale(c, 1.5)?;
                }
                adj[inp.0] = Some(match adj[inp.0] {
                    Some(prev) => self.apply(PrimitiveKind::Add, &[prev, c])?,
                    None => c,
                });
            }
        }

        wrt.iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let s = self.shape(*w).to_vec();
                    self.zeros(&s)
                }
            })
            .collect()
    }

    /// Contribution of upstream gradient `g` (shaped like `out`) to each
    /// input flagged in `need`.
    fn input_adjoints(
        &mut self,
        kind: &PrimitiveKind,
        inputs: &[Tensor],
        out: Tensor,
        g: Tensor,
        need: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        use PrimitiveKind::*;
        let x = inputs[0];
        let xshape = self.shape(x).to_vec();
        let one = |v: Tensor| Ok(vec![Some(v)]);
        match kind {
            Add => Ok(vec![Some(g), Some(g)]),
            Sub => {
                let nb = if need[1] { Some(self.neg(g)?) } else { None };
                Ok(vec![Some(g), nb])
            }
            Mul => {
                let ga = if need[0] { Some(self.apply(Mul, &[g, inputs[1]])?) } else { None };
                let gb = if need[1] { Some(self.apply(Mul, &[g, inputs[0]])?) } else { None };
                Ok(vec![ga, gb])
            }
            Recip => {
                let y2 = self.square(out)?;
                let t = self.apply(Mul, &[g, y2])?;
                one(self.neg(t)?)
            }
            ScaleBy(c) => one(self.scale(g, *c)?),
            Sum { .. } => one(self.apply(Broadcast { to: xshape }, &[g])?),
            Mean => {
                let n = numel(&xshape).max(1) as f64;
                let s = self.scale(g, 1.0 / n)?;
                one(self.apply(Broadcast { to: xshape }, &[s])?)
            }
            Abs => {
                let s = self.apply(Sign, &[x])?;
                one(self.apply(Mul, &[g, s])?)
            }
            Square => {
                let t = self.apply(Mul, &[g, x])?;
                one(self.scale(t, 2.0)?)
            }
            Sqrt => {
                let r = self.recip(out)?;
                let t = self.apply(Mul, &[g, r])?;
                one(self.scale(t, 0.5)?)
            }
            L2Norm => {
                // d|x|/dx = x/|x|, taken as 0 at the zero vector (recip(0) = 0)
                let mut col = vec![1; xshape.len()];
                col[0] = xshape[0];
                let r = self.recip(out)?;
                let w = self.apply(Mul, &[g, r])?;
                let w = self.reshape(w, &col)?;
                let w = self.apply(Broadcast { to: xshape }, &[w])?;
                one(self.apply(Mul, &[w, x])?)
            }
            LeakyRelu { slope } => {
                let m = self.apply(LeakyReluMask { slope: *slope }, &[x])?;
                one(self.apply(Mul, &[g, m])?)
            }
            Clamp { lo, hi } => {
                let m = self.apply(RangeMask { lo: *lo, hi: *hi }, &[x])?;
                one(self.apply(Mul, &[g, m])?)
            }
            Matmul => {
                let (a, b) = (inputs[0], inputs[1]);
                let ga = if need[0] {
                    let bt = self.permute(b, &[1, 0])?;
                    Some(self.matmul(g, bt)?)
                } else {
                    None
                };
                let gb = if need[1] {
                    let at = self.permute(a, &[1, 0])?;
                    Some(self.matmul(at, g)?)
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }
            Conv2d { stride, pad } => {
                let k = inputs[1];
                let ks = self.shape(k).to_vec();
                let (s, p) = (*stride, *pad);
                let gx = if need[0] {
                    Some(self.apply(ConvTranspose2d { stride: s, pad: p, out_hw: (xshape[2], xshape[3]) }, &[g, k])?)
                } else {
                    None
                };
                let gk = if need[1] {
                    Some(self.apply(Conv2dKernelGrad { stride: s, pad: p, kernel_hw: (ks[2], ks[3]) }, &[x, g])?)
                } else {
                    None
                };
                Ok(vec![gx, gk])
            }
            ConvTranspose2d { stride, pad, .. } => {
                // out = convT(gin, k); gin is x here
                let k = inputs[1];
                let ks = self.shape(k).to_vec();
                let (s, p) = (*stride, *pad);
                let d_in = if need[0] { Some(self.conv2d(g, k, s, p)?) } else { None };
                let d_k = if need[1] {
                    Some(self.apply(Conv2dKernelGrad { stride: s, pad: p, kernel_hw: (ks[2], ks[3]) }, &[g, x])?)
                } else {
                    None
                };
                Ok(vec![d_in, d_k])
            }
            Conv2dKernelGrad { stride, pad, .. } => {
                // out = kgrad(x, gin); g is kernel-shaped
                let gin = inputs[1];
                let (s, p) = (*stride, *pad);
                let d_x = if need[0] {
                    Some(self.apply(ConvTranspose2d { stride: s, pad: p, out_hw: (xshape[2], xshape[3]) }, &[gin, g])?)
                } else {
                    None
                };
                let d_gin = if need[1] { Some(self.conv2d(x, g, s, p)?) } else { None };
                Ok(vec![d_x, d_gin])
            }
            Upsample { factor } => {
                let f = *factor;
                let t = self.avg_pool(g, f)?;
                one(self.scale(t, (f * f) as f64)?)
            }
            AvgPool { factor } => {
                let f = *factor;
                let t = self.upsample(g, f)?;
                one(self.scale(t, 1.0 / (f * f) as f64)?)
            }
            Concat { axis } => {
                let mut res = Vec::with_capacity(inputs.len());
                let mut start = 0;
                for (t, &n) in inputs.iter().zip(need) {
                    let len = self.shape(*t)[*axis];
                    res.push(if n { Some(self.slice(g, *axis, start, start + len)?) } else { None });
                    start += len;
                }
                Ok(res)
            }
            Slice { axis, start, end } => {
                let after = xshape[*axis] - end;
                one(self.apply(Pad { axis: *axis, before: *start, after }, &[g])?)
            }
            Pad { axis, before, .. } => one(self.slice(g, *axis, *before, before + xshape[*axis])?),
            Broadcast { .. } => one(self.apply(Sum { to: xshape }, &[g])?),
            Reshape { .. } => one(self.apply(Reshape { to: xshape }, &[g])?),
            Permute { axes } => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                one(self.permute(g, &inv)?)
            }
            Round | Sign | StopGradient | LeakyReluMask { .. } | RangeMask { .. } => Ok(vec![None]),
        }
    }
}
