use std::fmt;
use std::str::FromStr;

use super::ImageBatch;
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How a high-resolution image is reduced to its low-resolution input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DownscaleMethod {
    #[default]
    AveragePool,
    /// Separable Catmull-Rom (`a = -0.5`), stretched by the factor, with
    /// reflect padding.
    Bicubic,
}

impl fmt::Display for DownscaleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DownscaleMethod::AveragePool => "average-pool",
            DownscaleMethod::Bicubic => "bicubic",
        })
    }
}

impl FromStr for DownscaleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average-pool" | "avg" | "average" => Ok(DownscaleMethod::AveragePool),
            "bicubic" => Ok(DownscaleMethod::Bicubic),
            other => Err(Error::Config(format!("unknown downscale method {other:?}"))),
        }
    }
}

/// Catmull-Rom cubic convolution kernel (`a = -0.5`).
pub fn catmull_rom(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Reflect an index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Row-major `[n / factor, n]` matrix of one-axis bicubic weights.
///
/// Output sample `i` sits at the centre of input block `i`, i.e. at input
/// coordinate `(i + 0.5) * factor - 0.5`; the kernel is stretched by
/// `factor` and its taps normalised to sum to one.
pub fn bicubic_weights(n: usize, factor: usize) -> Vec<f64> {
    let out = n / factor;
    let f = factor as f64;
    let mut m = vec![0.0; out * n];
    for i in 0..out {
        let center = (i as f64 + 0.5) * f - 0.5;
        let lo = (center - 2.0 * f).floor() as isize;
        let hi = (center + 2.0 * f).ceil() as isize;
        let taps: Vec<(usize, f64)> = (lo..=hi).map(|j| (reflect(j, n), catmull_rom((j as f64 - center) / f))).collect();
        let total: f64 = taps.iter().map(|t| t.1).sum();
        for (j, w) in taps {
            m[i * n + j] += w / total;
        }
    }
    m
}

fn check_factor(h: usize, w: usize, factor: usize) -> Result<()> {
    if factor == 0 || !factor.is_power_of_two() || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!("downscale factor {factor} must be a power of two dividing {h}x{w}")));
    }
    Ok(())
}

/// Apply the `[out, n]` matrix `m` along the last axis of `x`.
fn along_last<T: Scalar>(g: &mut Graph<T>, x: Tensor, m: &[f64], out: usize) -> Result<Tensor> {
    let s = g.shape(x).to_vec();
    let n = *s.last().expect("image tensors are 4-D");
    let rows = s.iter().product::<usize>() / n;
    // m is [out, n]; we need its transpose [n, out]
    let mt: Vec<T> = (0..n * out).map(|k| T::lit(m[(k % out) * n + k / out])).collect();
    let mt = g.constant(&[n, out], mt)?;
    let flat = g.reshape(x, &[rows, n])?;
    let y = g.matmul(flat, mt)?;
    let mut shape = s;
    *shape.last_mut().unwrap() = out;
    g.reshape(y, &shape)
}

/// Down-scale a `[N, C, H, W]` tensor inside `g`. No clamping is applied,
/// so the operator stays linear.
pub fn downscale_graph<T: Scalar>(g: &mut Graph<T>, x: Tensor, factor: usize, method: DownscaleMethod) -> Result<Tensor> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::shape(format!("downscale expects [N,C,H,W], got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    check_factor(h, w, factor)?;
    if factor == 1 {
        return Ok(x);
    }
    match method {
        DownscaleMethod::AveragePool => g.avg_pool(x, factor),
        DownscaleMethod::Bicubic => {
            let (ho, wo) = (h / factor, w / factor);
            let cols = along_last(g, x, &bicubic_weights(w, factor), wo)?;
            let t = g.permute(cols, &[0, 1, 3, 2])?;
            let rows = along_last(g, t, &bicubic_weights(h, factor), ho)?;
            let back = g.permute(rows, &[0, 1, 3, 2])?;
            debug_assert_eq!(g.shape(back), &[n, c, ho, wo]);
            Ok(back)
        }
    }
}

/// Down-scale an image batch by `factor`, clamping the result to `[-1, 1]`.
pub fn downscale<T: Scalar>(x: &ImageBatch<T>, factor: usize, method: DownscaleMethod) -> Result<ImageBatch<T>> {
    let [n, c, h, w] = x.shape();
    check_factor(h, w, factor)?;
    let mut g = Graph::new();
    let t = x.to_graph(&mut g)?;
    let y = downscale_graph(&mut g, t, factor, method)?;
    ImageBatch::from_clamped([n, c, h / factor, w / factor], g.value(y).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, shape: [usize; 4]) -> ImageBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        ImageBatch::new(shape, (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap()
    }

    /// Direct 2-D kernel sum with explicit reflection, written without the
    /// separable weight matrices.
    fn bicubic_oracle(x: &ImageBatch<f64>, f: usize) -> Vec<f64> {
        let [n, c, h, w] = x.shape();
        let ff = f as f64;
        let refl = |i: isize, len: usize| -> usize {
            let mut i = i;
            let last = len as isize - 1;
            while i < 0 || i > last {
                if i < 0 {
                    i = -i;
                }
                if i > last {
                    i = 2 * last - i;
                }
            }
            i as usize
        };
        let mut out = Vec::new();
        for b in 0..n * c {
            let plane = &x.data()[b * h * w..(b + 1) * h * w];
            for oi in 0..h / f {
                for oj in 0..w / f {
                    let (ci, cj) = ((oi as f64 + 0.5) * ff - 0.5, (oj as f64 + 0.5) * ff - 0.5);
                    let (mut acc, mut wsum_i, mut wsum_j) = (0.0, 0.0, 0.0);
                    let r = 2 * f as isize + 1;
                    for di in -r..=r {
                        let ii = ci.floor() as isize + di;
                        let wi = catmull_rom((ii as f64 - ci) / ff);
                        wsum_i += wi;
                        for dj in -r..=r {
                            let jj = cj.floor() as isize + dj;
                            let wj = catmull_rom((jj as f64 - cj) / ff);
                            if di == -r {
                                wsum_j += wj;
                            }
                            acc += wi * wj * plane[refl(ii, h) * w + refl(jj, w)];
                        }
                    }
                    out.push((acc / (wsum_i * wsum_j)).clamp(-1.0, 1.0));
                }
            }
        }
        out
    }

    #[test]
    fn constants_are_preserved() {
        for method in [DownscaleMethod::AveragePool, DownscaleMethod::Bicubic] {
            for f in [2, 4, 8] {
                let x = ImageBatch::<f64>::filled([2, 3, 16, 16], -0.37).unwrap();
                let y = downscale(&x, f, method).unwrap();
                assert_eq!(y.shape(), [2, 3, 16 / f, 16 / f]);
                assert!(y.data().iter().all(|v| (v + 0.37).abs() < 1e-12), "{method} x{f}");
            }
        }
    }

    #[test]
    fn average_of_checkerboard_block() {
        let x = ImageBatch::<f64>::new([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let y = downscale(&x, 2, DownscaleMethod::AveragePool).unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn bicubic_matches_direct_summation() {
        let x = random_image(11, [1, 1, 16, 16]);
        let got = downscale(&x, 2, DownscaleMethod::Bicubic).unwrap();
        let want = bicubic_oracle(&x, 2);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // a larger factor whose support folds over the border more than once
        let x = random_image(12, [1, 3, 8, 8]);
        let got = downscale(&x, 8, DownscaleMethod::Bicubic).unwrap();
        let want = bicubic_oracle(&x, 8);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_dividing_factor() {
        let x = random_image(1, [1, 1, 12, 12]);
        assert!(downscale(&x, 8, DownscaleMethod::AveragePool).is_err());
        assert!(downscale(&x, 3, DownscaleMethod::Bicubic).is_err());
    }

    #[test]
    fn average_pool_commutes_with_mirror() {
        for seed in 0..5 {
            let x = random_image(seed, [2, 3, 8, 8]);
            let a = downscale(&super::super::mirror_h(&x), 2, DownscaleMethod::AveragePool).unwrap();
            let b = super::super::mirror_h(&downscale(&x, 2, DownscaleMethod::AveragePool).unwrap());
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn average_pool_preserves_mean(seed in 0u64..500, f in prop::sample::select(vec![1usize, 2, 4])) {
            let x = random_image(seed, [2, 1, 8, 8]);
            let y = downscale(&x, f, DownscaleMethod::AveragePool).unwrap();
            prop_assert!((x.mean() - y.mean()).abs() < 1e-12);
        }

        #[test]
        fn outputs_stay_in_range(seed in 0u64..500, bicubic in any::<bool>()) {
            let method = if bicubic { DownscaleMethod::Bicubic } else { DownscaleMethod::AveragePool };
            let x = random_image(seed, [1, 3, 8, 8]);
            let y = downscale(&x, 2, method).unwrap();
            prop_assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
