//! Procedural "toy face" images: a desk-scale stand-in for a photo corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageBatch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SUPERSAMPLE: usize = 3;

struct Face {
    background: [f64; 3],
    skin: [f64; 3],
    feature: [f64; 3],
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    eye_dx: f64,
    eye_y: f64,
    eye_r: f64,
    mouth_y: f64,
    mouth_w: f64,
    mouth_bend: f64,
}

impl Face {
    fn draw(rng: &mut ChaCha8Rng) -> Face {
        let shade: f64 = rng.random_range(0.15..0.85);
        let tint: f64 = rng.random_range(-0.1..0.1);
        let tone: f64 = rng.random_range(0.45..0.95);
        Face {
            background: [shade + tint, shade, shade - tint],
            skin: [tone, tone * 0.8, tone * 0.65],
            feature: [rng.random_range(0.0..0.2), 0.05, 0.05],
            cx: rng.random_range(0.42..0.58),
            cy: rng.random_range(0.45..0.55),
            ax: rng.random_range(0.24..0.36),
            ay: rng.random_range(0.30..0.42),
            eye_dx: rng.random_range(0.09..0.15),
            eye_y: rng.random_range(-0.16..-0.06),
            eye_r: rng.random_range(0.035..0.06),
            mouth_y: rng.random_range(0.12..0.22),
            mouth_w: rng.random_range(0.08..0.16),
            mouth_bend: rng.random_range(-0.06..0.08),
        }
    }

    /// Color at normalised coordinates `(u, v)` in `[0, 1]^2`, on `[0, 1]`.
    fn color(&self, u: f64, v: f64) -> [f64; 3] {
        let (du, dv) = (u - self.cx, v - self.cy);
        if (du / self.ax).powi(2) + (dv / self.ay).powi(2) > 1.0 {
            return self.background;
        }
        for side in [-1.0, 1.0] {
            let (eu, ev) = (du - side * self.eye_dx, dv - self.eye_y);
            if eu * eu + ev * ev < self.eye_r * self.eye_r {
                return self.feature;
            }
        }
        // mouth: a thick parabolic arc
        if du.abs() < self.mouth_w {
            let t = du / self.mouth_w;
            let arc = self.mouth_y + self.mouth_bend * (1.0 - t * t);
            if (dv - arc).abs() < 0.025 {
                return self.feature;
            }
        }
        self.skin
    }
}

/// `count` RGB toy faces of `size x size`. Image `i` depends only on
/// `(seed, i)`, so prefixes of larger sets are identical.
pub fn make_toy_dataset<T: Scalar>(seed: u64, count: usize, size: usize) -> Result<Vec<ImageBatch<T>>> {
    if size < 16 || !size.is_power_of_two() {
        return Err(Error::Config(format!("toy image size must be a power of two >= 16, got {size}")));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let face = Face::draw(&mut rng);
            let plane = size * size;
            let mut data = vec![T::zero(); 3 * plane];
            let step = 1.0 / (size * SUPERSAMPLE) as f64;
            for y in 0..size {
                for x in 0..size {
                    let mut acc = [0.0; 3];
                    for sy in 0..SUPERSAMPLE {
                        for sx in 0..SUPERSAMPLE {
                            let u = ((x * SUPERSAMPLE + sx) as f64 + 0.5) * step;
                            let v = ((y * SUPERSAMPLE + sy) as f64 + 0.5) * step;
                            let c = face.color(u, v);
                            for k in 0..3 {
                                acc[k] += c[k];
                            }
                        }
                    }
                    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;
                    for k in 0..3 {
                        let unit = (acc[k] / norm).clamp(0.0, 1.0);
                        data[k * plane + y * size + x] = T::lit(2.0 * unit - 1.0);
                    }
                }
            }
            ImageBatch::new([1, 3, size, size], data)
        })
        .collect()
}
