//! Objectives: critic conditioning, Wasserstein scores, gradient penalty,
//! perceptual center loss, and the assembled generator/critic losses.
//!
//! Batch reductions are arithmetic means throughout.

use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::imaging::{downscale_graph, quantize_ste, DownscaleMethod};
use crate::scalar::Scalar;

/// Loss weights. `gp_weight = 1, center_weight = 1` is the unweighted sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gp_weight: f64,
    pub center_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { gp_weight: 10.0, center_weight: 1.0 }
    }
}

/// Scalar summary of one evaluation of both objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub wass_real: f64,
    pub wass_fake: f64,
    pub grad_penalty: f64,
    pub center: f64,
    pub gen_total: f64,
    pub critic_total: f64,
}

/// `gen_total = -fake + center_weight * center` and
/// `critic_total = fake - real + gp_weight * penalty`.
pub fn assemble_losses(wass_real: f64, wass_fake: f64, penalty: f64, center: f64, w: LossWeights) -> Result<LossTerms> {
    for (name, v) in [("wass_real", wass_real), ("wass_fake", wass_fake), ("penalty", penalty), ("center", center)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss term {name}")));
        }
    }
    Ok(LossTerms {
        wass_real,
        wass_fake,
        grad_penalty: penalty,
        center,
        gen_total: -wass_fake + w.center_weight * center,
        critic_total: wass_fake - wass_real + w.gp_weight * penalty,
    })
}

/// Conditioning for real samples: the all-zeros map at the low resolution.
pub fn cond_map_real<T: Scalar>(g: &mut Graph<T>, y: Tensor) -> Result<Tensor> {
    let s = g.shape(y).to_vec();
    g.zeros(&s)
}

/// Conditioning for a generated sample: `|y - q(H(x_cand))| / r`, with the
/// quantizer's straight-through gradient so the generator receives signal.
/// The result has `y`'s shape; see [`upsample_cond`].
pub fn cond_map<T: Scalar>(
    g: &mut Graph<T>,
    y: Tensor,
    x_cand: Tensor,
    factor: usize,
    method: DownscaleMethod,
    r: f64,
) -> Result<Tensor> {
    let low = downscale_graph(g, x_cand, factor, method)?;
    if g.shape(low) != g.shape(y) {
        return Err(Error::shape(format!(
            "downscaled candidate {:?} does not match y {:?}",
            g.shape(low),
            g.shape(y)
        )));
    }
    let q = quantize_ste(g, low, r)?;
    let d = g.sub(y, q)?;
    let d = g.abs(d)?;
    g.scale(d, 1.0 / r)
}

/// Nearest-upsample a low-resolution conditioning map to side `res`.
pub fn upsample_cond<T: Scalar>(g: &mut Graph<T>, cond: Tensor, res: usize) -> Result<Tensor> {
    let side = g.shape(cond)[2];
    if side == 0 || res % side != 0 {
        return Err(Error::shape(format!("cannot upsample {side} to {res}")));
    }
    g.upsample(cond, res / side)
}

/// The conditioning map of a candidate at its own resolution:
/// [`cond_map`] against `y`, nearest-upsampled to the candidate's side.
pub fn conditioned_critic_input<T: Scalar>(
    g: &mut Graph<T>,
    y: Tensor,
    x_cand: Tensor,
    method: DownscaleMethod,
    r: f64,
) -> Result<Tensor> {
    let res = g.shape(x_cand)[2];
    let side = g.shape(y)[2];
    if side == 0 || res % side != 0 {
        return Err(Error::shape(format!("candidate side {res} is not a multiple of y side {side}")));
    }
    let c = cond_map(g, y, x_cand, res / side, method, r)?;
    upsample_cond(g, c, res)
}

/// `x̂ = rho * x + (1 - rho) * x_fake`, with one `rho` per sample.
pub fn interpolate<T: Scalar>(g: &mut Graph<T>, x: Tensor, x_fake: Tensor, rho: &[T]) -> Result<Tensor> {
    let s = g.shape(x).to_vec();
    if g.shape(x_fake) != s.as_slice() || rho.len() != s[0] {
        return Err(Error::shape(format!("interpolation shapes {:?} / {:?}, {} draws", s, g.shape(x_fake), rho.len())));
    }
    if rho.iter().any(|r| *r < T::zero() || *r > T::one()) {
        return Err(Error::Domain("interpolation weights must lie in [0, 1]".into()));
    }
    let mut col = vec![1; s.len()];
    col[0] = s[0];
    let r = g.constant(&col, rho.to_vec())?;
    let one_minus: Vec<T> = rho.iter().map(|&v| T::one() - v).collect();
    let rc = g.constant(&col, one_minus)?;
    let a = g.mul(x, r)?;
    let b = g.mul(x_fake, rc)?;
    g.add(a, b)
}

/// WGAN-GP penalty on the critic's full input. Both the images and their
/// conditioning maps are interpolated with the same per-sample `rho`,
/// `(x̂, ĉ) = rho (x, c) + (1 - rho) (x_fake, c_fake)`, and the penalty is
/// the batch mean of `(|∇_(x̂,ĉ) C(x̂, ĉ)|_2 - 1)^2`. Including `ĉ` keeps the
/// critic's slope along the conditioning channels bounded too; a critic
/// that ignores its conditioning reduces to the usual image-only penalty.
/// `critic` maps `(x̂, ĉ)` to per-sample scores. The result stays
/// differentiable with respect to the critic's parameters.
pub fn gradient_penalty<T, F>(
    g: &mut Graph<T>,
    critic: F,
    real: (Tensor, Tensor),
    fake: (Tensor, Tensor),
    rho: &[T],
) -> Result<Tensor>
where
    T: Scalar,
    F: FnOnce(&mut Graph<T>, Tensor, Tensor) -> Result<Tensor>,
{
    let x_hat = interpolate(g, real.0, fake.0, rho)?;
    let c_hat = interpolate(g, real.1, fake.1, rho)?;
    let scores = critic(g, x_hat, c_hat)?;
    // samples do not interact, so the gradient of the sum is per-sample
    let total = g.sum(scores)?;
    let grads = g.grad(total, &[x_hat, c_hat])?;
    let n = g.shape(x_hat)[0];
    let mut sq_norms = Vec::with_capacity(2);
    for gr in grads {
        let sq = g.square(gr)?;
        sq_norms.push(g.sum_to(sq, &vec_with_batch(g.shape(gr), n))?);
    }
    let sq_norms = sq_norms.iter().map(|&t| g.reshape(t, &[n])).collect::<Result<Vec<_>>>()?;
    let joint = g.add(sq_norms[0], sq_norms[1])?;
    let norm = g.sqrt(joint)?;
    let dev = g.add_scalar(norm, -1.0)?;
    let sq = g.square(dev)?;
    g.mean(sq)
}

/// `[n, 1, 1, ...]` with the rank of `shape`.
fn vec_with_batch(shape: &[usize], n: usize) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    s[0] = n;
    s
}

/// Mean squared distance between two `[N, p]` latents.
pub fn center_loss<T: Scalar>(g: &mut Graph<T>, latent_real: Tensor, latent_center: Tensor) -> Result<Tensor> {
    if g.shape(latent_real) != g.shape(latent_center) {
        return Err(Error::shape(format!(
            "center loss latents {:?} vs {:?}",
            g.shape(latent_real),
            g.shape(latent_center)
        )));
    }
    let d = g.sub(latent_real, latent_center)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// `-mean C(fake) + center_weight * center`.
pub fn generator_objective<T: Scalar>(g: &mut Graph<T>, fake_scores: Tensor, center: Tensor, w: LossWeights) -> Result<Tensor> {
    let f = g.mean(fake_scores)?;
    let f = g.neg(f)?;
    let c = g.scale(center, w.center_weight)?;
    g.add(f, c)
}

/// `mean C(fake) - mean C(real) + gp_weight * penalty`.
pub fn critic_objective<T: Scalar>(
    g: &mut Graph<T>,
    real_scores: Tensor,
    fake_scores: Tensor,
    penalty: Tensor,
    w: LossWeights,
) -> Result<Tensor> {
    let f = g.mean(fake_scores)?;
    let r = g.mean(real_scores)?;
    let d = g.sub(f, r)?;
    let p = g.scale(penalty, w.gp_weight)?;
    g.add(d, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::check_gradient;
    use crate::imaging::{quantize_colors, ImageBatch, COLOR_RESOLUTION};

    const R: f64 = COLOR_RESOLUTION;

    /// `C(x) = <a, x>` per sample, `a` given per pixel.
    fn linear_critic(a: Vec<f64>) -> impl FnOnce(&mut Graph<f64>, Tensor, Tensor) -> Result<Tensor> {
        move |g, xh, _cond| {
            let s = g.shape(xh).to_vec();
            let n = s[0];
            let per = s.iter().skip(1).product::<usize>();
            let at = g.constant(&[per, 1], a)?;
            let flat = g.reshape(xh, &[n, per])?;
            g.matmul(flat, at)
        }
    }

    fn scaled_unit(norm: f64, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos() + 0.1).collect();
        let len = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.into_iter().map(|v| v * norm / len).collect()
    }

    fn penalty_for(norm: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[2, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]).unwrap();
        let xf = g.constant(&[2, 1, 2, 2], vec![0.0; 8]).unwrap();
        let c = g.zeros(&[2, 1, 2, 2]).unwrap();
        let cf = g.full(&[2, 1, 2, 2], 3.0).unwrap();
        let p = gradient_penalty(&mut g, linear_critic(scaled_unit(norm, 4)), (x, c), (xf, cf), &[0.3, 0.9]).unwrap();
        g.item(p)
    }

    #[test]
    fn penalty_norm_covers_conditioning() {
        // C = <a, x> + <b, c> per sample: the joint gradient norm is
        // sqrt(|a|^2 + |b|^2) = 5 for |a| = 3, |b| = 4, so the penalty is 16
        let (a, b) = (scaled_unit(3.0, 4), scaled_unit(4.0, 4));
        let critic = move |g: &mut Graph<f64>, xh: Tensor, ch: Tensor| -> Result<Tensor> {
            let n = g.shape(xh)[0];
            let at = g.constant(&[4, 1], a)?;
            let bt = g.constant(&[4, 1], b)?;
            let xf = g.reshape(xh, &[n, 4])?;
            let cf = g.reshape(ch, &[n, 4])?;
            let sx = g.matmul(xf, at)?;
            let sc = g.matmul(cf, bt)?;
            g.add(sx, sc)
        };
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[2, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]).unwrap();
        let xf = g.zeros(&[2, 1, 2, 2]).unwrap();
        let c = g.zeros(&[2, 1, 2, 2]).unwrap();
        let cf = g.full(&[2, 1, 2, 2], 2.0).unwrap();
        let p = gradient_penalty(&mut g, critic, (x, c), (xf, cf), &[0.25, 1.0]).unwrap();
        assert!((g.item(p) - 16.0).abs() < 1e-9, "{}", g.item(p));
    }

    #[test]
    fn unit_gradient_critic_has_zero_penalty() {
        assert!(penalty_for(1.0).abs() < 1e-12);
        assert!((penalty_for(3.0) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn worked_substitution() {
        let w = LossWeights { gp_weight: 1.0, center_weight: 1.0 };
        let t = assemble_losses(1.0, 0.25, 0.04, 0.0, w).unwrap();
        assert!((t.critic_total + 0.71).abs() < 1e-12);
        assert!((t.gen_total + 0.25).abs() < 1e-12);
        let z = assemble_losses(0.0, 0.0, 0.0, 0.0, w).unwrap();
        assert_eq!((z.critic_total, z.gen_total), (0.0, 0.0));
        let doubled = assemble_losses(1.0, 0.25, 0.04, 0.0, LossWeights { gp_weight: 2.0, ..w }).unwrap();
        assert!((doubled.critic_total - t.critic_total - 0.04).abs() < 1e-12);
        assert!(assemble_losses(f64::NAN, 0.0, 0.0, 0.0, w).is_err());
    }

    #[test]
    fn graph_objectives_match_assembly() {
        let w = LossWeights { gp_weight: 10.0, center_weight: 2.0 };
        let mut g = Graph::<f64>::new();
        let real = g.constant(&[2, 1], vec![1.5, 0.5]).unwrap();
        let fake = g.constant(&[2, 1], vec![0.25, 0.25]).unwrap();
        let pen = g.scalar(0.04).unwrap();
        let cen = g.scalar(0.3).unwrap();
        let ct = critic_objective(&mut g, real, fake, pen, w).unwrap();
        let gt = generator_objective(&mut g, fake, cen, w).unwrap();
        let t = assemble_losses(1.0, 0.25, 0.04, 0.3, w).unwrap();
        assert!((g.item(ct) - t.critic_total).abs() < 1e-12);
        assert!((g.item(gt) - t.gen_total).abs() < 1e-12);
    }

    fn image(seed: usize, shape: [usize; 4]) -> Vec<f64> {
        let n: usize = shape.iter().product();
        (0..n).map(|i| (((i + seed) * 7919 % 1000) as f64 / 500.0 - 1.0) * 0.9).collect()
    }

    #[test]
    fn consistent_candidate_gives_zero_conditioning() {
        let shape = [2, 3, 8, 8];
        let xv = image(3, shape);
        let xb = ImageBatch::new(shape, xv.clone()).unwrap();
        let y = quantize_colors(&crate::imaging::downscale(&xb, 4, DownscaleMethod::AveragePool).unwrap(), R).unwrap();
        let mut g = Graph::<f64>::new();
        let yt = y.to_graph(&mut g).unwrap();
        let x = g.variable(&shape, xv).unwrap();
        let c = cond_map(&mut g, yt, x, 4, DownscaleMethod::AveragePool, R).unwrap();
        let real = cond_map_real(&mut g, yt).unwrap();
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(g.value(c)), bits(g.value(real)));
    }

    #[test]
    fn one_color_step_gives_unit_conditioning() {
        let shape = [1, 1, 4, 4];
        let xv: Vec<f64> = vec![10.0 * R; 16];
        let mut g = Graph::<f64>::new();
        let x = g.constant(&shape, xv).unwrap();
        let mut yv = vec![10.0 * R; 4];
        yv[2] += R;
        let y = g.constant(&[1, 1, 2, 2], yv).unwrap();
        let c = cond_map(&mut g, y, x, 2, DownscaleMethod::AveragePool, R).unwrap();
        let v = g.value(c);
        assert!((v[2] - 1.0).abs() < 1e-9, "{v:?}");
        assert!(v[0].abs() < 1e-9 && v[1].abs() < 1e-9 && v[3].abs() < 1e-9);
    }

    #[test]
    fn conditioning_gradient_flows_through_quantizer() {
        // d/dx of sum |y - q(avgpool(x))| / r equals -sign(y - q)/(r f^2) everywhere
        let shape = [1, 1, 2, 2];
        let mut g = Graph::<f64>::new();
        let x = g.variable(&shape, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = g.constant(&[1, 1, 1, 1], vec![0.9]).unwrap();
        let c = cond_map(&mut g, y, x, 2, DownscaleMethod::AveragePool, R).unwrap();
        let s = g.sum(c).unwrap();
        let dx = g.grad(s, &[x]).unwrap()[0];
        for v in g.value(dx) {
            assert!((v + 1.0 / (R * 4.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn center_loss_properties() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&[2, 3], vec![0.1, -0.2, 0.3, 1.0, 2.0, -1.0]).unwrap();
        let b = g.constant(&[2, 3], vec![0.0, 0.5, 0.3, -1.0, 2.5, 0.0]).unwrap();
        let same = center_loss(&mut g, a, a).unwrap();
        assert_eq!(g.item(same), 0.0);
        let ab = center_loss(&mut g, a, b).unwrap();
        let ba = center_loss(&mut g, b, a).unwrap();
        assert!((g.item(ab) - g.item(ba)).abs() < 1e-12);
        assert!(g.item(ab) > 0.0);
        let want = [0.01, 0.49, 0.0, 4.0, 0.25, 1.0].iter().sum::<f64>() / 6.0;
        assert!((g.item(ab) - want).abs() < 1e-12);
    }

    #[test]
    fn center_loss_matches_finite_differences_in_candidate() {
        let leaves = vec![(vec![2, 4], image(1, [2, 4, 1, 1]))];
        let target = image(9, [2, 4, 1, 1]);
        let err = check_gradient(
            |g, xs| {
                let t = g.constant(&[2, 4], target.clone())?;
                let sq = g.mul(xs[0], xs[0])?;
                center_loss(g, t, sq)
            },
            &leaves,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn interpolation_bounds() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[2, 2], vec![1.0, -1.0, 0.5, 0.0]).unwrap();
        let f = g.constant(&[2, 2], vec![0.0, 1.0, -0.5, 0.2]).unwrap();
        let h = interpolate(&mut g, x, f, &[0.25, 1.0]).unwrap();
        assert_eq!(g.value(h), &[0.25, 0.5, 0.5, 0.0]);
        assert!(interpolate(&mut g, x, f, &[1.5, 0.0]).is_err());
    }
}
