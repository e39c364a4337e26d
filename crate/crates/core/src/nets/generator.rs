use super::{blend, conv, conv_layer, initialise, Bound, Layout, NetConfig, Params, StageState};
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// EDSR-style generator parameters (all names start with `g.`):
///
/// * `g.in`: 3x3 conv over `concat(y, broadcast z)` to `width` channels
/// * `g.res{i}.conv1/2`: residual blocks at the input resolution
/// * `g.up{s}`: per-stage 3x3 conv after a 2x nearest upsample
/// * `g.rgb{s}`: per-stage 3x3 to-image conv
pub fn build_generator<T: Scalar>(cfg: &NetConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let stages = cfg.stages()?;
    let w = cfg.width;
    let mut layout = Layout::new();
    conv_layer(&mut layout, "g.in", w, cfg.channels + cfg.latent_n, 3);
    for i in 0..cfg.blocks {
        conv_layer(&mut layout, &format!("g.res{i}.conv1"), w, w, 3);
        conv_layer(&mut layout, &format!("g.res{i}.conv2"), w, w, 3);
    }
    for s in 0..stages {
        conv_layer(&mut layout, &format!("g.up{s}"), w, w, 3);
        conv_layer(&mut layout, &format!("g.rgb{s}"), cfg.channels, w, 3);
    }
    initialise(layout, seed)
}

/// `G(y, z)` at the given stage: `[N,C,ys,ys] x [N,n] -> [N,C,R,R]` with
/// `R = y_size * 2^(stage+1)`. The output is linear (unclamped).
pub fn generator_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &NetConfig,
    y: Tensor,
    z: Tensor,
    stage: StageState,
) -> Result<Tensor> {
    let ys = g.shape(y).to_vec();
    let zs = g.shape(z).to_vec();
    if ys.len() != 4 || ys[1] != cfg.channels || ys[2] != cfg.y_size || ys[3] != cfg.y_size {
        return Err(Error::shape(format!("generator input {ys:?} does not match y_size {}", cfg.y_size)));
    }
    if zs != [ys[0], cfg.latent_n] {
        return Err(Error::shape(format!("latent {zs:?}, expected [{}, {}]", ys[0], cfg.latent_n)));
    }
    if stage.stage >= cfg.stages()? {
        return Err(Error::shape(format!("stage {} out of range", stage.stage)));
    }
    let (n, side) = (ys[0], cfg.y_size);
    let zmap = g.reshape(z, &[n, cfg.latent_n, 1, 1])?;
    let zmap = g.broadcast_to(zmap, &[n, cfg.latent_n, side, side])?;
    let input = g.concat(&[y, zmap], 1)?;
    let mut h = conv(g, p, "g.in", input)?;
    for i in 0..cfg.blocks {
        let r = conv(g, p, &format!("g.res{i}.conv1"), h)?;
        let r = g.leaky_relu(r, cfg.slope)?;
        let r = conv(g, p, &format!("g.res{i}.conv2"), r)?;
        h = g.add(h, r)?;
    }
    let mut prev = None;
    for s in 0..=stage.stage {
        let u = g.upsample(h, 2)?;
        let u = conv(g, p, &format!("g.up{s}"), u)?;
        prev = Some(h);
        h = g.leaky_relu(u, cfg.slope)?;
    }
    let s = stage.stage;
    let out = conv(g, p, &format!("g.rgb{s}"), h)?;
    if s == 0 || stage.alpha >= 1.0 {
        return Ok(out);
    }
    let prev = prev.expect("loop ran at least once");
    let old = conv(g, p, &format!("g.rgb{}", s - 1), prev)?;
    let old = g.upsample(old, 2)?;
    blend(g, old, out, stage.alpha)
}
