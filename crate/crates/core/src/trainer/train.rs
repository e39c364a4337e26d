use std::collections::BTreeMap;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::config::TrainConfig;
use super::rng::TrainRng;
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::imaging::{
    downscale, downscale_graph, load_dataset_dir, make_toy_dataset, quantize_colors, DownscaleMethod, ImageBatch,
};
use crate::losses::{
    center_loss, conditioned_critic_input, critic_objective, generator_objective, gradient_penalty,
};
use crate::nets::{
    blend, build_critic, build_generator, critic_project, critic_value, generator_forward, progressive_schedule, Bound,
    Params, StageState,
};
use crate::scalar::Scalar;

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub cfg: TrainConfig,
    pub gen: Params<T>,
    pub critic: Params<T>,
    pub gen_opt: AdamState<T>,
    pub critic_opt: AdamState<T>,
    pub step: u64,
    pub rng: TrainRng,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh networks and optimizers for a validated configuration.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = cfg.net();
        let gen = build_generator(&net, cfg.seed)?;
        let critic = build_critic(&net, cfg.seed)?;
        Ok(TrainState {
            gen_opt: AdamState::new(&gen),
            critic_opt: AdamState::new(&critic),
            gen,
            critic,
            step: 0,
            rng: TrainRng::new(cfg.seed ^ 0x5eed_da7a),
            cfg,
        })
    }

    pub fn stage(&self) -> Result<StageState> {
        Ok(progressive_schedule(self.step, &self.cfg.schedule()?))
    }

    /// Optimizer settings taken from the config.
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.cfg.lr, beta1: self.cfg.beta1, beta2: self.cfg.beta2, eps: self.cfg.eps }
    }
}

/// Per-step scalars, as written to the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub step: u64,
    pub wass_real: f64,
    pub wass_fake: f64,
    pub penalty: f64,
    pub center: f64,
    pub stage: usize,
    pub alpha: f64,
}

impl Metrics {
    pub const HEADER: &'static str = "step\twass_real\twass_fake\tpenalty\tcenter\tstage\talpha";

    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{}\t{:.4}",
            self.step, self.wass_real, self.wass_fake, self.penalty, self.center, self.stage, self.alpha
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.wass_real, self.wass_fake, self.penalty, self.center].iter().all(|v| v.is_finite())
    }
}

/// The training images: toy faces or every image in the dataset directory.
pub fn load_training_data<T: Scalar>(cfg: &TrainConfig) -> Result<Vec<ImageBatch<T>>> {
    let data = if cfg.toy {
        let toy = make_toy_dataset::<T>(cfg.seed, cfg.toy_count, cfg.x_size)?;
        if cfg.channels == 1 {
            toy.iter().map(to_gray).collect::<Result<Vec<_>>>()?
        } else {
            toy
        }
    } else {
        let dir = cfg.dataset.as_ref().ok_or_else(|| Error::Config("dataset path required when toy = false".into()))?;
        load_dataset_dir(dir)?
    };
    let want = [1, cfg.channels, cfg.x_size, cfg.x_size];
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(bad) = data.iter().find(|x| x.shape() != want) {
        return Err(Error::shape(format!("training image {:?}, expected {want:?}", bad.shape())));
    }
    Ok(data)
}

fn to_gray<T: Scalar>(x: &ImageBatch<T>) -> Result<ImageBatch<T>> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * plane);
    for i in 0..n {
        let img = &x.data()[i * c * plane..(i + 1) * c * plane];
        for p in 0..plane {
            let s: T = (0..c).map(|ch| img[ch * plane + p]).sum();
            out.push(s / T::lit(c as f64));
        }
    }
    ImageBatch::new([n, 1, h, w], out)
}

/// Draw `cfg.batch` training images with replacement from the state's stream.
pub fn next_batch<T: Scalar>(state: &mut TrainState<T>, data: &[ImageBatch<T>]) -> Result<ImageBatch<T>> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let picks: Vec<ImageBatch<T>> = (0..state.cfg.batch).map(|_| data[state.rng.index(data.len())].clone()).collect();
    ImageBatch::stack(&picks)
}

/// A batch brought to the current stage: the real images at stage
/// resolution (faded with their coarser version during a fade-in) and the
/// quantized low-resolution inputs derived from the full-resolution images.
#[derive(Clone, Debug, PartialEq)]
pub struct StageBatch<T> {
    pub x: ImageBatch<T>,
    pub y: ImageBatch<T>,
    pub stage: StageState,
}

pub fn prepare_batch<T: Scalar>(cfg: &TrainConfig, x_full: &ImageBatch<T>, stage: StageState) -> Result<StageBatch<T>> {
    let [n, c, h, w] = x_full.shape();
    if c != cfg.channels || h != cfg.x_size || w != cfg.x_size {
        return Err(Error::shape(format!("batch {:?} does not match x_size {} / channels {}", x_full.shape(), cfg.x_size, cfg.channels)));
    }
    let res = cfg.net().resolution(stage.stage);
    let mut g = Graph::new();
    let t = x_full.to_graph(&mut g)?;
    let mut xs = downscale_graph(&mut g, t, cfg.x_size / res, DownscaleMethod::AveragePool)?;
    if stage.stage > 0 && stage.alpha < 1.0 {
        let coarse = g.avg_pool(xs, 2)?;
        let coarse = g.upsample(coarse, 2)?;
        xs = blend(&mut g, coarse, xs, stage.alpha)?;
    }
    let x = ImageBatch::from_clamped([n, c, res, res], g.value(xs).to_vec())?;
    let y = quantize_colors(&downscale(x_full, cfg.x_size / cfg.y_size, cfg.downscale)?, cfg.color_resolution)?;
    Ok(StageBatch { x, y, stage })
}

/// Random draws consumed by one sub-step.
#[derive(Clone, Debug, PartialEq)]
pub struct Draws<T> {
    pub z: Vec<T>,
    pub rho: Vec<T>,
}

impl<T: Scalar> Draws<T> {
    pub fn sample(rng: &mut TrainRng, n: usize, latent_n: usize) -> Self {
        let z = rng.normals(n * latent_n);
        let rho = rng.uniforms(n);
        Draws { z, rho }
    }
}

/// Loss value, its reported terms, and gradients for the trained network.
#[derive(Clone, Debug, PartialEq)]
pub struct PassOutput<T> {
    pub loss: f64,
    pub wass_real: f64,
    pub wass_fake: f64,
    pub penalty: f64,
    pub center: f64,
    pub grads: BTreeMap<String, Vec<T>>,
}

fn generated_with_cond<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &TrainConfig,
    gen: &Bound,
    y: Tensor,
    z: Tensor,
    stage: StageState,
) -> Result<(Tensor, Tensor)> {
    let fake = generator_forward(g, gen, &cfg.net(), y, z, stage)?;
    let cond = conditioned_critic_input(g, y, fake, cfg.downscale, cfg.color_resolution)?;
    Ok((fake, cond))
}

fn collect_grads<T: Scalar>(g: &mut Graph<T>, loss: Tensor, bound: &Bound) -> Result<BTreeMap<String, Vec<T>>> {
    let names: Vec<&String> = bound.keys().collect();
    let tensors: Vec<Tensor> = bound.values().copied().collect();
    let grads = g.grad(loss, &tensors)?;
    Ok(names.into_iter().zip(grads).map(|(n, t)| (n.clone(), g.value(t).to_vec())).collect())
}

/// Critic objective and its gradient with respect to every critic
/// parameter; the generator is held constant.
pub fn critic_pass<T: Scalar>(
    cfg: &TrainConfig,
    gen: &Params<T>,
    critic: &Params<T>,
    batch: &StageBatch<T>,
    draws: &Draws<T>,
) -> Result<PassOutput<T>> {
    let net = cfg.net();
    let stage = batch.stage;
    let n = batch.x.len();
    let mut g = Graph::new();
    let gb = gen.bind(&mut g, false)?;
    let cb = critic.bind(&mut g, true)?;
    let x = batch.x.to_graph(&mut g)?;
    let y = batch.y.to_graph(&mut g)?;
    let z = g.constant(&[n, cfg.latent_n], draws.z.clone())?;
    let (fake, cond_fake) = generated_with_cond(&mut g, cfg, &gb, y, z, stage)?;
    let cond_real = g.zeros(&batch.x.shape())?;
    let real_s = critic_value(&mut g, &cb, &net, x, cond_real, stage)?;
    let fake_s = critic_value(&mut g, &cb, &net, fake, cond_fake, stage)?;
    let scored = |g: &mut Graph<T>, xh: Tensor, ch: Tensor| critic_value(g, &cb, &net, xh, ch, stage);
    let pen = gradient_penalty(&mut g, scored, (x, cond_real), (fake, cond_fake), &draws.rho)?;
    let loss = critic_objective(&mut g, real_s, fake_s, pen, cfg.weights())?;
    let grads = collect_grads(&mut g, loss, &cb)?;
    let mean = |g: &mut Graph<T>, t: Tensor| -> Result<f64> {
        let m = g.mean(t)?;
        Ok(g.item(m).as_f64())
    };
    Ok(PassOutput {
        loss: g.item(loss).as_f64(),
        wass_real: mean(&mut g, real_s)?,
        wass_fake: mean(&mut g, fake_s)?,
        penalty: g.item(pen).as_f64(),
        center: f64::NAN,
        grads,
    })
}

/// Generator objective (adversarial term plus the center loss at `z = 0`)
/// and its gradient with respect to every generator parameter; the critic
/// is held constant.
pub fn generator_pass<T: Scalar>(
    cfg: &TrainConfig,
    gen: &Params<T>,
    critic: &Params<T>,
    batch: &StageBatch<T>,
    z: &[T],
) -> Result<PassOutput<T>> {
    let net = cfg.net();
    let stage = batch.stage;
    let n = batch.x.len();
    let mut g = Graph::new();
    let gb = gen.bind(&mut g, true)?;
    let cb = critic.bind(&mut g, false)?;
    let x = batch.x.to_graph(&mut g)?;
    let y = batch.y.to_graph(&mut g)?;
    let zt = g.constant(&[n, cfg.latent_n], z.to_vec())?;
    let (fake, cond_fake) = generated_with_cond(&mut g, cfg, &gb, y, zt, stage)?;
    let fake_s = critic_value(&mut g, &cb, &net, fake, cond_fake, stage)?;
    let z0 = g.zeros(&[n, cfg.latent_n])?;
    let (center_img, cond_center) = generated_with_cond(&mut g, cfg, &gb, y, z0, stage)?;
    let lat_center = critic_project(&mut g, &cb, &net, center_img, cond_center, stage)?;
    let cond_real = g.zeros(&batch.x.shape())?;
    let lat_real = critic_project(&mut g, &cb, &net, x, cond_real, stage)?;
    let center = center_loss(&mut g, lat_real, lat_center)?;
    let loss = generator_objective(&mut g, fake_s, center, cfg.weights())?;
    let grads = collect_grads(&mut g, loss, &gb)?;
    let wf = g.mean(fake_s)?;
    Ok(PassOutput {
        loss: g.item(loss).as_f64(),
        wass_real: f64::NAN,
        wass_fake: g.item(wf).as_f64(),
        penalty: f64::NAN,
        center: g.item(center).as_f64(),
        grads,
    })
}

/// One training step on a full-resolution batch: `critic_steps` critic
/// updates, then one generator update. On error the state is unchanged.
pub fn train_step<T: Scalar>(state: &mut TrainState<T>, x_full: &ImageBatch<T>) -> Result<Metrics> {
    let mut next = state.clone();
    let stage = next.stage()?;
    let batch = prepare_batch(&next.cfg, x_full, stage)?;
    let n = batch.x.len();
    let adam = next.adam();
    let mut last = None;
    for _ in 0..next.cfg.critic_steps {
        let draws = Draws::sample(&mut next.rng, n, next.cfg.latent_n);
        let out = critic_pass(&next.cfg, &next.gen, &next.critic, &batch, &draws)?;
        adam_step(&mut next.critic, &out.grads, &mut next.critic_opt, &adam)?;
        last = Some(out);
    }
    let z = next.rng.normals(n * next.cfg.latent_n);
    let gout = generator_pass(&next.cfg, &next.gen, &next.critic, &batch, &z)?;
    adam_step(&mut next.gen, &gout.grads, &mut next.gen_opt, &adam)?;
    let cout = last.expect("critic_steps >= 1");
    let metrics = Metrics {
        step: next.step,
        wass_real: cout.wass_real,
        wass_fake: cout.wass_fake,
        penalty: cout.penalty,
        center: gout.center,
        stage: stage.stage,
        alpha: stage.alpha,
    };
    if !metrics.is_finite() {
        return Err(Error::NonFinite(format!("training metrics at step {}", next.step)));
    }
    next.step += 1;
    *state = next;
    Ok(metrics)
}

/// Draw a batch and take one step.
pub fn train_on<T: Scalar>(state: &mut TrainState<T>, data: &[ImageBatch<T>]) -> Result<Metrics> {
    let mut probe = state.clone();
    let batch = next_batch(&mut probe, data)?;
    let metrics = train_step(&mut probe, &batch)?;
    *state = probe;
    Ok(metrics)
}

/// `G(y, z)` at the state's current stage, clamped to the image range.
pub fn generate<T: Scalar>(state: &TrainState<T>, y: &ImageBatch<T>, z: &[T]) -> Result<ImageBatch<T>> {
    let net = state.cfg.net();
    let stage = state.stage()?;
    let n = y.len();
    if z.len() != n * net.latent_n {
        return Err(Error::shape(format!("{} latent values for {n} samples of width {}", z.len(), net.latent_n)));
    }
    let mut g = Graph::new();
    let b = state.gen.bind(&mut g, false)?;
    let yt = y.to_graph(&mut g)?;
    let zt = g.constant(&[n, net.latent_n], z.to_vec())?;
    let out = generator_forward(&mut g, &b, &net, yt, zt, stage)?;
    let res = net.resolution(stage.stage);
    ImageBatch::from_clamped([n, net.channels, res, res], g.value(out).to_vec())
}

/// Tile the samples of a batch row-major into one image, `cols` per row.
pub fn tile_grid<T: Scalar>(x: &ImageBatch<T>, cols: usize) -> Result<ImageBatch<T>> {
    let [n, c, h, w] = x.shape();
    if cols == 0 || n == 0 {
        return Err(Error::shape("grid needs at least one sample and one column"));
    }
    let rows = n.div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = vec![-T::one(); c * gh * gw];
    for i in 0..n {
        let (r0, c0) = ((i / cols) * h, (i % cols) * w);
        for ch in 0..c {
            for yy in 0..h {
                let src = ((i * c + ch) * h + yy) * w;
                let dst = (ch * gh + r0 + yy) * gw + c0;
                out[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
            }
        }
    }
    ImageBatch::new([1, c, gh, gw], out)
}

/// Nearest-neighbour enlargement by an integer factor (for display).
pub fn enlarge<T: Scalar>(x: &ImageBatch<T>, factor: usize) -> Result<ImageBatch<T>> {
    if factor <= 1 {
        return Ok(x.clone());
    }
    let mut g = Graph::new();
    let t = x.to_graph(&mut g)?;
    let u = g.upsample(t, factor)?;
    let [n, c, h, w] = x.shape();
    ImageBatch::new([n, c, h * factor, w * factor], g.value(u).to_vec())
}
