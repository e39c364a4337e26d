//! The qualitative experiments: sample grids, mirror interpolation, noisy
//! inputs and output diversity. Every function is deterministic in its
//! arguments.

use lag_core::imaging::{add_uniform_noise, downscale, make_toy_dataset, mirror_h, quantize_colors, read_image, ImageBatch};
use lag_core::trainer::{enlarge, generate, tile_grid, TrainRng, TrainState};
use lag_core::{Error, Result};

use crate::args::InputArgs;
use crate::Real;

type Images = ImageBatch<Real>;
type State = TrainState<Real>;

/// The high-resolution inputs named on the command line, as one batch.
pub fn gather_inputs(state: &State, args: &InputArgs) -> Result<Images> {
    let cfg = &state.cfg;
    let mut parts = Vec::new();
    for path in &args.inputs {
        parts.push(read_image::<Real>(path)?);
    }
    if let Some(n) = args.toy {
        let toy = make_toy_dataset::<Real>(args.toy_seed, n, cfg.x_size)?;
        parts.extend(toy);
    }
    if parts.is_empty() {
        return Err(Error::Config("no inputs: pass --input FILE or --toy N".into()));
    }
    let batch = ImageBatch::stack(&parts)?;
    check_resolution(state, &batch)?;
    Ok(batch)
}

fn check_resolution(state: &State, x: &Images) -> Result<()> {
    let cfg = &state.cfg;
    let [_, c, h, w] = x.shape();
    if c != cfg.channels || h != cfg.x_size || w != cfg.x_size {
        return Err(Error::Shape(format!(
            "input is {c}x{h}x{w} but the checkpoint expects {}x{}x{}",
            cfg.channels, cfg.x_size, cfg.x_size
        )));
    }
    Ok(())
}

/// `y = q(H(x))`, exactly as during training.
pub fn derive_y(state: &State, x: &Images) -> Result<Images> {
    check_resolution(state, x)?;
    let cfg = &state.cfg;
    quantize_colors(&downscale(x, cfg.x_size / cfg.y_size, cfg.downscale)?, cfg.color_resolution)
}

fn to_display(state: &State, x: &Images) -> Result<Images> {
    enlarge(x, state.cfg.x_size / x.height())
}

fn zeros(state: &State, n: usize) -> Vec<Real> {
    vec![0.0; n * state.cfg.latent_n]
}

/// `G(y, 0)` for every sample of `y`.
pub fn center(state: &State, y: &Images) -> Result<Images> {
    generate(state, y, &zeros(state, y.len()))
}

/// Interleave column batches (each `[N, ...]`) into row-major order.
fn rows_of(columns: &[Images]) -> Result<Images> {
    let n = columns[0].len();
    let mut cells = Vec::with_capacity(n * columns.len());
    for i in 0..n {
        for col in columns {
            cells.push(col.sample(i));
        }
    }
    ImageBatch::stack(&cells)
}

/// One row per input: `[x, up(y), G(y,0), G(y,z_1), .., G(y,z_k)]`.
pub fn sample_grid(state: &State, x: &Images, k: usize, seed: u64) -> Result<Images> {
    let y = derive_y(state, x)?;
    let mut columns = vec![x.clone(), to_display(state, &y)?, to_display(state, &center(state, &y)?)?];
    let mut rng = TrainRng::new(seed);
    for _ in 0..k {
        let z = rng.normals::<Real>(x.len() * state.cfg.latent_n);
        columns.push(to_display(state, &generate(state, &y, &z)?)?);
    }
    tile_grid(&rows_of(&columns)?, 3 + k)
}

/// Low-resolution inputs `y_t = q(H((1-t) x + t mirror(x)))` for `steps`
/// evenly spaced `t` in `[0, 1]`, and the outputs `G(y_t, 0)`.
pub fn mirror_series(state: &State, x: &Images, steps: usize) -> Result<(Images, Images)> {
    if steps < 2 {
        return Err(Error::Config("mirror needs at least 2 steps".into()));
    }
    if x.len() != 1 {
        return Err(Error::Config("mirror takes exactly one input".into()));
    }
    let m = mirror_h(x);
    let mut ys = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = i as Real / (steps - 1) as Real;
        let mixed: Vec<Real> = x.data().iter().zip(m.data()).map(|(&a, &b)| (1.0 - t) * a + t * b).collect();
        let xt = ImageBatch::from_clamped(x.shape(), mixed)?;
        ys.push(derive_y(state, &xt)?);
    }
    let ys = ImageBatch::stack(&ys)?;
    let outs = center(state, &ys)?;
    Ok((ys, outs))
}

/// Two rows: the interpolated inputs, then the corresponding outputs.
pub fn mirror_grid(state: &State, x: &Images, steps: usize) -> Result<Images> {
    let (ys, outs) = mirror_series(state, x, steps)?;
    let grid = ImageBatch::stack(&[to_display(state, &ys)?, to_display(state, &outs)?])?;
    tile_grid(&grid, steps)
}

/// Noisy inputs `y + U(-a, a)` per amplitude and their outputs at `z = 0`.
pub fn noise_series(state: &State, x: &Images, amplitudes: &[f64], seed: u64) -> Result<(Images, Images)> {
    if x.len() != 1 {
        return Err(Error::Config("noise takes exactly one input".into()));
    }
    if amplitudes.is_empty() || amplitudes.iter().any(|a| !(*a >= 0.0)) || amplitudes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("amplitudes must be non-empty, non-negative and non-decreasing".into()));
    }
    let y = derive_y(state, x)?;
    let noisy = amplitudes.iter().map(|&a| add_uniform_noise(&y, a, seed)).collect::<Result<Vec<_>>>()?;
    let ys = ImageBatch::stack(&noisy)?;
    let outs = center(state, &ys)?;
    Ok((ys, outs))
}

pub fn noise_grid(state: &State, x: &Images, amplitudes: &[f64], seed: u64) -> Result<Images> {
    let (ys, outs) = noise_series(state, x, amplitudes, seed)?;
    let grid = ImageBatch::stack(&[to_display(state, &ys)?, to_display(state, &outs)?])?;
    tile_grid(&grid, amplitudes.len())
}

/// Mean over pixels of the population variance across `samples`, which
/// all share one shape.
pub fn diversity_of(samples: &[Images]) -> f64 {
    let k = samples.len();
    if k < 2 {
        return 0.0;
    }
    let len = samples[0].data().len();
    let mut total = 0.0;
    for p in 0..len {
        let mean = samples.iter().map(|s| s.data()[p] as f64).sum::<f64>() / k as f64;
        total += samples.iter().map(|s| (s.data()[p] as f64 - mean).powi(2)).sum::<f64>() / k as f64;
    }
    total / len as f64
}

/// Diversity of `G(y_i, z_1..k)` per input, with the z draws taken in
/// order from one stream seeded by `seed`.
pub fn diversity_scores(state: &State, x: &Images, k: usize, seed: u64) -> Result<Vec<f64>> {
    let y = derive_y(state, x)?;
    let mut rng = TrainRng::new(seed);
    let mut scores = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let yi = y.sample(i);
        let mut outs = Vec::with_capacity(k);
        for _ in 0..k {
            let z = rng.normals::<Real>(state.cfg.latent_n);
            outs.push(generate(state, &yi, &z)?);
        }
        scores.push(diversity_of(&outs));
    }
    Ok(scores)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diversity_degenerate_cases() {
        let a = ImageBatch::<Real>::new([1, 1, 1, 2], vec![0.5, -0.5]).unwrap();
        let b = ImageBatch::<Real>::new([1, 1, 1, 2], vec![-0.5, 0.5]).unwrap();
        assert_eq!(diversity_of(std::slice::from_ref(&a)), 0.0);
        assert_eq!(diversity_of(&[a.clone(), a.clone(), a.clone()]), 0.0);
        assert!((diversity_of(&[a, b]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
