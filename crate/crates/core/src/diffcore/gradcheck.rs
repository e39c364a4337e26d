//! Finite-difference verification of reverse-mode gradients.
//!
//! The central-difference estimate here never touches the adjoint rules; it
//! only re-evaluates the forward graph with perturbed leaf values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Tensor};
use super::kind::{numel, PrimitiveKind, Shape};
use crate::error::Result;

/// Leaf values for a check: one `(shape, values)` per differentiable input.
pub type Leaves = Vec<(Shape, Vec<f64>)>;

/// Outcome of one named gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Finite-difference step for a coordinate with value `v`.
pub fn fd_step(v: f64) -> f64 {
    1e-5 * (1.0 + v.abs())
}

/// `max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|)`, zero when both vanish.
///
/// Normalising by the largest component keeps the measure meaningful for
/// coordinates whose true derivative is (near) zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn evaluate<F>(build: &F, leaves: &[(Shape, Vec<f64>)]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let mut g = Graph::new();
    let vars = leaves
        .iter()
        .map(|(s, v)| g.variable(s, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    Ok(g.item(out))
}

/// Reverse-mode gradients of the scalar built by `build` with respect to every leaf.
pub fn reverse_gradients<F>(build: &F, leaves: &[(Shape, Vec<f64>)]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    reverse_gradients_with(build, leaves, None)
}

fn reverse_gradients_with<F>(build: &F, leaves: &[(Shape, Vec<f64>)], corrupt: Option<&'static str>) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let mut g = Graph::new();
    if let Some(k) = corrupt {
        g.corrupt_adjoint_of(k);
    }
    let vars = leaves
        .iter()
        .map(|(s, v)| g.variable(s, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    let grads = g.grad(out, &vars)?;
    g.eval(&grads)
}

/// Central differences of the scalar built by `build`, one coordinate at a time.
pub fn numeric_gradients<F>(build: &F, leaves: &[(Shape, Vec<f64>)]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let mut work: Leaves = leaves.to_vec();
    let mut out = Vec::with_capacity(leaves.len());
    for li in 0..leaves.len() {
        let mut grad = Vec::with_capacity(leaves[li].1.len());
        for ei in 0..leaves[li].1.len() {
            let v = leaves[li].1[ei];
            let h = fd_step(v);
            work[li].1[ei] = v + h;
            let fp = evaluate(build, &work)?;
            work[li].1[ei] = v - h;
            let fm = evaluate(build, &work)?;
            work[li].1[ei] = v;
            grad.push((fp - fm) / (2.0 * h));
        }
        out.push(grad);
    }
    Ok(out)
}

/// Largest relative error between reverse-mode and finite-difference
/// gradients over all leaves.
pub fn check_gradient<F>(build: F, leaves: &[(Shape, Vec<f64>)]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    check_gradient_with(&build, leaves, None)
}

fn check_gradient_with<F>(build: &F, leaves: &[(Shape, Vec<f64>)], corrupt: Option<&'static str>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let analytic = reverse_gradients_with(build, leaves, corrupt)?;
    let numeric = numeric_gradients(build, leaves)?;
    // a leaf whose gradient cancels to rounding noise is measured against
    // the overall gradient scale instead of its own
    let global = analytic.iter().chain(&numeric).flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * global;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let scale = a.iter().chain(n).fold(floor, |m, v| m.max(v.abs()));
            let diff = a.iter().zip(n).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            if scale == 0.0 { 0.0 } else { diff / scale }
        })
        .fold(0.0, f64::max))
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn leaf(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Shape, Vec<f64>) {
    (shape.to_vec(), normal_vec(rng, numel(shape)))
}

/// Values kept at least `gap` away from every integer-and-a-half and from
/// zero, so piecewise functions are smooth within one finite-difference step.
fn away_from_kinks(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Shape, Vec<f64>) {
    let vals = (0..numel(shape))
        .map(|_| {
            let base: f64 = rng.random_range(-2.0..2.0);
            let frac = base - base.floor();
            let shifted = if (frac - 0.5).abs() < 0.1 { base + 0.25 } else { base };
            if shifted.abs() < 0.1 {
                shifted + 0.3
            } else {
                shifted
            }
        })
        .collect();
    (shape.to_vec(), vals)
}

/// `sum(out ⊙ w)` for a fixed random weight `w`, so every output element
/// contributes a distinct coefficient.
fn weighted_sum(g: &mut Graph<f64>, out: Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.shape(out).to_vec();
    let w = g.constant(&shape, normal_vec(&mut rng, numel(&shape)))?;
    let p = g.mul(out, w)?;
    g.sum(p)
}

/// Every primitive kind, one representative instance each.
pub fn primitive_catalog() -> Vec<PrimitiveKind> {
    use PrimitiveKind::*;
    vec![
        Add,
        Sub,
        Mul,
        Recip,
        ScaleBy(-1.7),
        Sum { to: vec![1, 3] },
        Mean,
        Abs,
        Square,
        Sqrt,
        L2Norm,
        LeakyRelu { slope: 0.2 },
        Matmul,
        Conv2d { stride: 2, pad: 1 },
        ConvTranspose2d { stride: 2, pad: 1, out_hw: (5, 5) },
        Conv2dKernelGrad { stride: 1, pad: 1, kernel_hw: (3, 3) },
        Upsample { factor: 2 },
        AvgPool { factor: 2 },
        Concat { axis: 1 },
        Slice { axis: 1, start: 1, end: 3 },
        Pad { axis: 0, before: 1, after: 2 },
        Broadcast { to: vec![2, 4, 3] },
        Reshape { to: vec![3, 4] },
        Permute { axes: vec![2, 0, 1] },
        Clamp { lo: -0.5, hi: 0.8 },
        Round,
        Sign,
        StopGradient,
        LeakyReluMask { slope: 0.2 },
        RangeMask { lo: -0.5, hi: 0.8 },
    ]
}

/// Input leaves suited to `kind`.
fn inputs_for(kind: &PrimitiveKind, rng: &mut ChaCha8Rng) -> Leaves {
    use PrimitiveKind::*;
    match kind {
        Add | Sub | Mul => vec![leaf(rng, &[2, 3]), leaf(rng, &[2, 3])],
        Recip | Sqrt => {
            let (s, v) = leaf(rng, &[2, 3]);
            vec![(s, v.into_iter().map(|x| 0.5 + x.abs()).collect())]
        }
        Sum { .. } => vec![leaf(rng, &[4, 3])],
        L2Norm => vec![leaf(rng, &[3, 2, 2])],
        Matmul => vec![leaf(rng, &[2, 3]), leaf(rng, &[3, 4])],
        Conv2d { .. } => vec![leaf(rng, &[2, 2, 5, 5]), leaf(rng, &[3, 2, 3, 3])],
        ConvTranspose2d { .. } => vec![leaf(rng, &[2, 3, 3, 3]), leaf(rng, &[3, 2, 3, 3])],
        Conv2dKernelGrad { .. } => vec![leaf(rng, &[1, 2, 4, 4]), leaf(rng, &[1, 3, 4, 4])],
        Upsample { .. } | AvgPool { .. } => vec![leaf(rng, &[1, 2, 4, 4])],
        Concat { .. } => vec![leaf(rng, &[2, 1, 3]), leaf(rng, &[2, 2, 3])],
        Slice { .. } | Pad { .. } => vec![leaf(rng, &[2, 4])],
        Broadcast { .. } => vec![leaf(rng, &[4, 1])],
        Reshape { .. } => vec![leaf(rng, &[2, 6])],
        Permute { .. } => vec![leaf(rng, &[2, 3, 4])],
        Abs | LeakyRelu { .. } | Clamp { .. } | Round | Sign | LeakyReluMask { .. } | RangeMask { .. } => {
            vec![away_from_kinks(rng, &[3, 4])]
        }
        ScaleBy(_) | Mean | Square | StopGradient => vec![leaf(rng, &[3, 4])],
    }
}

/// First-order check of a single primitive.
pub fn check_primitive(kind: &PrimitiveKind, seed: u64, corrupt: Option<&'static str>) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = inputs_for(kind, &mut rng);
    let build = |g: &mut Graph<f64>, xs: &[Tensor]| {
        let out = g.apply(kind.clone(), xs)?;
        weighted_sum(g, out, seed)
    };
    let err = if kind.blocks_gradient() {
        // the defined derivative is zero; for stop-gradient it deliberately
        // differs from the derivative of the forward map
        let analytic = reverse_gradients_with(&build, &leaves, corrupt)?;
        analytic.iter().map(|a| relative_error(a, &vec![0.0; a.len()])).fold(0.0, f64::max)
    } else {
        check_gradient_with(&build, &leaves, corrupt)?
    };
    Ok(CheckResult { name: kind.name().to_string(), max_rel_err: err, tolerance: 1e-4 })
}

/// One randomly composed graph over a few 4-D leaves.
fn random_composite(g: &mut Graph<f64>, xs: &[Tensor], recipe: &[u8], seed: u64) -> Result<Tensor> {
    let mut pool: Vec<Tensor> = xs[..2].to_vec();
    let kernel = xs[2];
    for (i, &op) in recipe.iter().enumerate() {
        let a = pool[(i * 7 + op as usize) % pool.len()];
        let b = pool[(i * 3 + 1) % pool.len()];
        let next = match op % 12 {
            0 => g.add(a, b)?,
            1 => g.sub(a, b)?,
            2 => {
                let m = g.mul(a, b)?;
                g.scale(m, 0.5)?
            }
            3 => g.leaky_relu(a, 0.2)?,
            4 => {
                // smooth and bounded: 1 / (1 + a^2)
                let s = g.square(a)?;
                let s = g.add_scalar(s, 1.0)?;
                g.recip(s)?
            }
            5 => {
                let s = g.square(a)?;
                let s = g.add_scalar(s, 0.25)?;
                g.sqrt(s)?
            }
            6 => g.conv2d(a, kernel, 1, 1)?,
            7 => {
                let p = g.avg_pool(a, 2)?;
                g.upsample(p, 2)?
            }
            8 => {
                let c = g.concat(&[a, b], 1)?;
                g.slice(c, 1, 1, 3)?
            }
            9 => {
                let p = g.permute(a, &[0, 1, 3, 2])?;
                g.add(p, b)?
            }
            10 => {
                let m = g.sum_to(a, &[1, 2, 1, 4])?;
                let m = g.scale(m, 0.25)?;
                g.mul(b, m)?
            }
            _ => {
                let n = g.l2_norm(a)?;
                let n = g.reshape(n, &[2, 1, 1, 1])?;
                g.mul(b, n)?
            }
        };
        pool.push(next);
    }
    let last = *pool.last().expect("pool is never empty");
    weighted_sum(g, last, seed)
}

/// First-order checks on `count` randomly composed graphs; returns the worst error.
pub fn check_random_composites(seed: u64, count: usize) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for case in 0..count {
        let case_seed = seed.wrapping_mul(1_000_003).wrapping_add(case as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let depth = rng.random_range(3..8);
        let recipe: Vec<u8> = (0..depth).map(|_| rng.random_range(0..12u8)).collect();
        let mut leaves = vec![leaf(&mut rng, &[2, 2, 4, 4]), leaf(&mut rng, &[2, 2, 4, 4]), leaf(&mut rng, &[2, 2, 3, 3])];
        for v in &mut leaves[2].1 {
            *v *= 0.3;
        }
        let build = |g: &mut Graph<f64>, xs: &[Tensor]| random_composite(g, xs, &recipe, case_seed);
        let e = check_gradient(&build, &leaves)?;
        worst = worst.max(e);
    }
    Ok(CheckResult { name: format!("random-composites x{count}"), max_rel_err: worst, tolerance: 1e-4 })
}

/// Mean over the batch of `(|d critic / d x| - 1)^2` for a two-conv critic
/// with leaves `[kernel1, kernel2, dense]` applied to the constant `x`.
pub fn tiny_critic_penalty(g: &mut Graph<f64>, params: &[Tensor], x: &[f64], xshape: &[usize]) -> Result<Tensor> {
    let xt = g.constant(xshape, x.to_vec())?;
    let h = g.conv2d(xt, params[0], 1, 1)?;
    let h = g.leaky_relu(h, 0.2)?;
    let h = g.conv2d(h, params[1], 1, 1)?;
    let h = g.leaky_relu(h, 0.2)?;
    let s = g.shape(h).to_vec();
    let pooled = g.sum_to(h, &[s[0], s[1], 1, 1])?;
    let pooled = g.reshape(pooled, &[s[0], s[1]])?;
    let score = g.matmul(pooled, params[2])?;
    let total = g.sum(score)?;
    let dx = g.grad(total, &[xt])?[0];
    let norm = g.l2_norm(dx)?;
    let dev = g.add_scalar(norm, -1.0)?;
    let sq = g.square(dev)?;
    g.mean(sq)
}

/// Second-order check: parameter gradient of a gradient penalty.
pub fn check_penalty_second_order(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xshape = [2, 1, 4, 4];
    let x = normal_vec(&mut rng, numel(&xshape));
    let mut leaves = vec![leaf(&mut rng, &[3, 1, 3, 3]), leaf(&mut rng, &[2, 3, 3, 3]), leaf(&mut rng, &[2, 1])];
    for v in &mut leaves[1].1 {
        *v *= 0.5;
    }
    let build = |g: &mut Graph<f64>, ps: &[Tensor]| tiny_critic_penalty(g, ps, &x, &xshape);
    let err = check_gradient(build, &leaves)?;
    Ok(CheckResult { name: "gradient-penalty (second order)".into(), max_rel_err: err, tolerance: 1e-3 })
}

/// The full suite: every primitive once, `composites` random graphs, and the
/// second-order penalty check. `corrupt` names a primitive whose adjoint is
/// deliberately scaled, to show the suite notices.
pub fn full_suite(seed: u64, composites: usize, corrupt: Option<&'static str>) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, kind) in primitive_catalog().iter().enumerate() {
        out.push(check_primitive(kind, seed.wrapping_add(i as u64), corrupt)?);
    }
    out.push(check_random_composites(seed, composites)?);
    out.push(check_penalty_second_order(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        let e = relative_error(&[100.0, 1e-9], &[100.0 + 1e-3, 0.0]);
        assert!((e - 1e-5).abs() < 1e-9);
    }

    #[test]
    fn catalog_names_are_unique() {
        let mut names: Vec<_> = primitive_catalog().iter().map(|k| k.name()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn corrupted_adjoint_is_detected() {
        let kind = PrimitiveKind::Conv2d { stride: 2, pad: 1 };
        let good = check_primitive(&kind, 3, None).unwrap();
        let bad = check_primitive(&kind, 3, Some("conv2d")).unwrap();
        assert!(good.passed(), "{good:?}");
        assert!(!bad.passed(), "{bad:?}");
    }
}
