//! Images on `[-1, 1]`, down-scaling, color quantization and perturbations.

mod pnm;
mod resample;
mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use pnm::{load_dataset_dir, read_image, write_image};
pub use resample::{bicubic_weights, catmull_rom, downscale, downscale_graph, DownscaleMethod};
pub use toy::make_toy_dataset;

/// Default color resolution: one 8-bit step on the `[-1, 1]` scale.
pub const COLOR_RESOLUTION: f64 = 2.0 / 255.0;

const RANGE_SLACK: f64 = 1e-9;

/// A batch of images laid out `[N, C, H, W]` with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> ImageBatch<T> {
    /// Validates the layout, channel count and value range.
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!("image shape {shape:?} does not hold {} values", data.len())));
        }
        if shape[1] != 1 && shape[1] != 3 {
            return Err(Error::shape(format!("images have 1 or 3 channels, got {}", shape[1])));
        }
        let lim = T::lit(1.0 + RANGE_SLACK);
        if let Some(v) = data.iter().find(|v| !v.is_finite() || v.abs() > lim) {
            return Err(Error::Domain(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(ImageBatch { shape, data })
    }

    /// Clamps `data` into `[-1, 1]` first; for raw network outputs.
    pub fn from_clamped(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let data = data.into_iter().map(|v| v.max(-T::one()).min(T::one())).collect();
        Self::new(shape, data)
    }

    pub fn filled(shape: [usize; 4], v: T) -> Result<Self> {
        Self::new(shape, vec![v; shape.iter().product()])
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    /// The `i`-th image as a batch of one.
    pub fn sample(&self, i: usize) -> ImageBatch<T> {
        let n = self.sample_len();
        ImageBatch { shape: [1, self.shape[1], self.shape[2], self.shape[3]], data: self.data[i * n..(i + 1) * n].to_vec() }
    }

    /// Concatenate batches along `N`; all must share `C, H, W`.
    pub fn stack(parts: &[ImageBatch<T>]) -> Result<ImageBatch<T>> {
        let first = parts.first().ok_or_else(|| Error::shape("cannot stack zero batches"))?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::shape(format!("stack: {:?} vs {:?}", p.shape, first.shape)));
            }
            data.extend_from_slice(&p.data);
            n += p.shape[0];
        }
        Ok(ImageBatch { shape: [n, first.shape[1], first.shape[2], first.shape[3]], data })
    }

    /// Add to `graph` as a detached constant.
    pub fn to_graph(&self, graph: &mut Graph<T>) -> Result<Tensor> {
        graph.constant(&self.shape, self.data.clone())
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_usize(self.data.len().max(1)).unwrap()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<ImageBatch<T>> {
        ImageBatch::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Convert the element type.
    pub fn cast<U: Scalar>(&self) -> ImageBatch<U> {
        ImageBatch { shape: self.shape, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

/// Largest grid index `k` with `k * r <= 1`.
fn grid_limit(r: f64) -> f64 {
    (1.0 / r + 1e-9).floor()
}

/// Nearest multiple of `r` (ties away from zero), restricted to multiples
/// lying in `[-1, 1]`.
pub fn quantize_value<T: Scalar>(v: T, r: f64) -> T {
    let k = grid_limit(r);
    let q = (v / T::lit(r)).round().max(T::lit(-k)).min(T::lit(k));
    q * T::lit(r)
}

/// Snap every pixel to the color grid of spacing `r`.
pub fn quantize_colors<T: Scalar>(x: &ImageBatch<T>, r: f64) -> Result<ImageBatch<T>> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("color resolution must be positive, got {r}")));
    }
    x.map(|v| quantize_value(v, r))
}

/// In-graph quantization with a straight-through gradient:
/// `x + sg(q(x) - x)`, whose forward value is `q(x)` and whose adjoint is
/// the identity.
pub fn quantize_ste<T: Scalar>(g: &mut Graph<T>, x: Tensor, r: f64) -> Result<Tensor> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("color resolution must be positive, got {r}")));
    }
    let k = grid_limit(r);
    let scaled = g.scale(x, 1.0 / r)?;
    let rounded = g.round(scaled)?;
    let clamped = g.clamp(rounded, -k, k)?;
    let q = g.scale(clamped, r)?;
    let delta = g.sub(q, x)?;
    let delta = g.stop_gradient(delta)?;
    g.add(x, delta)
}

/// Horizontal flip (reverses the `W` axis).
pub fn mirror_h<T: Scalar>(x: &ImageBatch<T>) -> ImageBatch<T> {
    let w = x.width();
    let mut data = x.data.clone();
    for row in data.chunks_mut(w.max(1)) {
        row.reverse();
    }
    ImageBatch { shape: x.shape, data }
}

/// Adds i.i.d. uniform noise on `[-amplitude, amplitude]`, then clamps.
pub fn add_uniform_noise<T: Scalar>(x: &ImageBatch<T>, amplitude: f64, seed: u64) -> Result<ImageBatch<T>> {
    if !(amplitude >= 0.0) {
        return Err(Error::Domain(format!("noise amplitude must be non-negative, got {amplitude}")));
    }
    if amplitude == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = x
        .data
        .iter()
        .map(|&v| {
            let n: f64 = rng.random_range(-amplitude..=amplitude);
            (v + T::lit(n)).max(-T::one()).min(T::one())
        })
        .collect();
    ImageBatch::new(x.shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(shape: [usize; 4]) -> ImageBatch<f64> {
        let n: usize = shape.iter().product();
        ImageBatch::new(shape, (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect()).unwrap()
    }

    #[test]
    fn construction_enforces_range_and_channels() {
        assert!(ImageBatch::<f64>::new([1, 1, 1, 2], vec![0.0, 1.5]).is_err());
        assert!(ImageBatch::<f64>::new([1, 2, 1, 1], vec![0.0, 0.0]).is_err());
        assert!(ImageBatch::<f64>::new([1, 1, 1, 2], vec![-1.0, 1.0]).is_ok());
    }

    #[test]
    fn quantize_examples() {
        let r = COLOR_RESOLUTION;
        assert_eq!(quantize_value(0.0, r), 0.0);
        // nearest multiple found by scanning k*r
        let v = 0.004f64;
        let best = (-127..=127).map(|k| k as f64 * r).min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs())).unwrap();
        assert_eq!(quantize_value(v, r), best);
        assert!((best - 0.0078431).abs() < 1e-7);
        // values past the last in-range grid point stay inside [-1, 1]
        assert!((quantize_value(1.0, r) - 127.0 * r).abs() < 1e-15);
        assert!((quantize_value(-1.3, r) + 127.0 * r).abs() < 1e-15);
    }

    #[test]
    fn quantize_rejects_non_positive_step() {
        let x = ramp([1, 1, 2, 2]);
        assert!(quantize_colors(&x, 0.0).is_err());
    }

    #[test]
    fn straight_through_quantization_has_identity_gradient() {
        let mut g = Graph::<f64>::new();
        let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 0.173).sin() * 1.2).collect();
        let x = g.variable(&[12], vals.clone()).unwrap();
        let q = quantize_ste(&mut g, x, COLOR_RESOLUTION).unwrap();
        for (got, v) in g.value(q).iter().zip(&vals) {
            assert_eq!(*got, quantize_value(*v, COLOR_RESOLUTION));
        }
        let s = g.sum(q).unwrap();
        let dx = g.grad(s, &[x]).unwrap()[0];
        assert!(g.value(dx).iter().all(|&d| d == 1.0));
    }

    #[test]
    fn mirror_examples() {
        let x = ramp([2, 3, 4, 5]);
        assert_eq!(mirror_h(&mirror_h(&x)), x);
        let thin = ramp([1, 1, 4, 1]);
        assert_eq!(mirror_h(&thin), thin);
        let m = mirror_h(&x);
        assert_eq!(m.data()[0], x.data()[4]);
    }

    #[test]
    fn noise_examples() {
        let x = ramp([1, 3, 4, 4]);
        assert_eq!(add_uniform_noise(&x, 0.0, 9).unwrap(), x);
        assert_eq!(add_uniform_noise(&x, 0.3, 9).unwrap(), add_uniform_noise(&x, 0.3, 9).unwrap());
        let zero = ImageBatch::<f64>::filled([1, 1, 8, 8], 0.0).unwrap();
        let n = add_uniform_noise(&zero, 0.1, 1).unwrap();
        assert!(n.data().iter().all(|v| v.abs() <= 0.1));
        assert!(n.data().iter().any(|&v| v != 0.0));
        assert!(add_uniform_noise(&zero, -0.1, 1).is_err());
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent_and_on_grid(v in -3.0f64..3.0) {
            let r = COLOR_RESOLUTION;
            let q = quantize_value(v, r);
            prop_assert_eq!(quantize_value(q, r).to_bits(), q.to_bits());
            let k = q / r;
            prop_assert!((k - k.round()).abs() < 1e-9);
            prop_assert!(q.abs() <= 1.0);
        }

        #[test]
        fn noise_output_stays_in_range(amp in 0.0f64..4.0, seed in 0u64..1000) {
            let x = ramp([1, 1, 4, 4]);
            let n = add_uniform_noise(&x, amp, seed).unwrap();
            prop_assert!(n.data().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
