use super::{blend, conv, conv_layer, dense, dense_layer, initialise, Bound, Layout, NetConfig, Params, StageState};
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Critic parameters. The projection `P` owns every `p.` tensor:
///
/// * `p.from{s}`: per-stage 1x1 from-image conv over `concat(x, cond)`
/// * `p.down{s}`: per-stage 3x3 conv followed by 2x average pooling
/// * `p.res{i}.conv1/2`: residual blocks at the input resolution
/// * `p.proj`: affine map from pooled features to the latent width `p`
///
/// The scorer `F` is the single affine map `f.score`.
pub fn build_critic<T: Scalar>(cfg: &NetConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let stages = cfg.stages()?;
    let w = cfg.width;
    let mut layout = Layout::new();
    for s in 0..stages {
        conv_layer(&mut layout, &format!("p.from{s}"), w, 2 * cfg.channels, 1);
        conv_layer(&mut layout, &format!("p.down{s}"), w, w, 3);
    }
    for i in 0..cfg.blocks {
        conv_layer(&mut layout, &format!("p.res{i}.conv1"), w, w, 3);
        conv_layer(&mut layout, &format!("p.res{i}.conv2"), w, w, 3);
    }
    dense_layer(&mut layout, "p.proj", w, cfg.latent_p);
    dense_layer(&mut layout, "f.score", cfg.latent_p, 1);
    initialise(layout, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))
}

fn from_image<T: Scalar>(g: &mut Graph<T>, p: &Bound, cfg: &NetConfig, s: usize, input: Tensor) -> Result<Tensor> {
    let h = conv(g, p, &format!("p.from{s}"), input)?;
    g.leaky_relu(h, cfg.slope)
}

fn down<T: Scalar>(g: &mut Graph<T>, p: &Bound, cfg: &NetConfig, s: usize, h: Tensor) -> Result<Tensor> {
    let h = conv(g, p, &format!("p.down{s}"), h)?;
    let h = g.leaky_relu(h, cfg.slope)?;
    g.avg_pool(h, 2)
}

/// The projection `P(x, cond)`: `[N,C,R,R] x [N,C,R,R] -> [N,p]`.
pub fn critic_project<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &NetConfig,
    x: Tensor,
    cond: Tensor,
    stage: StageState,
) -> Result<Tensor> {
    let s = stage.stage;
    if s >= cfg.stages()? {
        return Err(Error::shape(format!("stage {s} out of range")));
    }
    let res = cfg.resolution(s);
    let (xs, cs) = (g.shape(x).to_vec(), g.shape(cond).to_vec());
    if xs.len() != 4 || xs[1] != cfg.channels || xs[2] != res || xs[3] != res || cs != xs {
        return Err(Error::shape(format!("critic inputs {xs:?} / {cs:?} at stage resolution {res}")));
    }
    let n = xs[0];
    let input = g.concat(&[x, cond], 1)?;
    let mut h = from_image(g, p, cfg, s, input)?;
    h = down(g, p, cfg, s, h)?;
    if s > 0 && stage.alpha < 1.0 {
        let coarse = g.avg_pool(input, 2)?;
        let old = from_image(g, p, cfg, s - 1, coarse)?;
        h = blend(g, old, h, stage.alpha)?;
    }
    for j in (0..s).rev() {
        h = down(g, p, cfg, j, h)?;
    }
    for i in 0..cfg.blocks {
        let r = conv(g, p, &format!("p.res{i}.conv1"), h)?;
        let r = g.leaky_relu(r, cfg.slope)?;
        let r = conv(g, p, &format!("p.res{i}.conv2"), r)?;
        h = g.add(h, r)?;
    }
    let side = cfg.y_size;
    let pooled = g.sum_to(h, &[n, cfg.width, 1, 1])?;
    let pooled = g.scale(pooled, 1.0 / (side * side) as f64)?;
    let pooled = g.reshape(pooled, &[n, cfg.width])?;
    dense(g, p, "p.proj", pooled)
}

/// The scorer `F`: affine `[N,p] -> [N,1]`.
pub fn critic_score<T: Scalar>(g: &mut Graph<T>, p: &Bound, latent: Tensor) -> Result<Tensor> {
    dense(g, p, "f.score", latent)
}

/// `C(x, cond) = F(P(x, cond))`.
pub fn critic_value<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &NetConfig,
    x: Tensor,
    cond: Tensor,
    stage: StageState,
) -> Result<Tensor> {
    let latent = critic_project(g, p, cfg, x, cond, stage)?;
    critic_score(g, p, latent)
}
