use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const STATE_LEN: usize = 32 + 8 + 16;

/// The training stream for batch order, `z` and `rho` draws: ChaCha8 with
/// ziggurat normals. Its full position serializes to 56 bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRng {
    inner: ChaCha8Rng,
}

impl TrainRng {
    pub fn new(seed: u64) -> Self {
        TrainRng { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Standard normals.
    pub fn normals<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        (0..n)
            .map(|_| {
                let v: f64 = self.inner.sample(StandardNormal);
                T::lit(v)
            })
            .collect()
    }

    /// Uniform draws on `[0, 1]`.
    pub fn uniforms<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        (0..n).map(|_| T::lit(self.inner.random_range(0.0..=1.0))).collect()
    }

    pub fn index(&mut self, bound: usize) -> usize {
        self.inner.random_range(0..bound)
    }

    /// Seed, stream and word position, little-endian.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(STATE_LEN);
        out.extend_from_slice(&self.inner.get_seed());
        out.extend_from_slice(&self.inner.get_stream().to_le_bytes());
        out.extend_from_slice(&self.inner.get_word_pos().to_le_bytes());
        out
    }

    pub fn from_state_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != STATE_LEN {
            return Err(Error::Config(format!("rng state must be {STATE_LEN} bytes, got {}", bytes.len())));
        }
        let seed: [u8; 32] = bytes[..32].try_into().unwrap();
        let stream = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let pos = u128::from_le_bytes(bytes[40..56].try_into().unwrap());
        let mut inner = ChaCha8Rng::from_seed(seed);
        inner.set_stream(stream);
        inner.set_word_pos(pos);
        Ok(TrainRng { inner })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restored_stream_continues_identically() {
        let mut a = TrainRng::new(42);
        let _ = a.normals::<f64>(7);
        let _ = a.uniforms::<f64>(3);
        let mut b = TrainRng::from_state_bytes(&a.state_bytes()).unwrap();
        assert_eq!(a.normals::<f64>(11), b.normals::<f64>(11));
        assert_eq!(a.index(1000), b.index(1000));
        assert!(TrainRng::from_state_bytes(&[0; 3]).is_err());
    }

    #[test]
    fn uniforms_in_unit_interval() {
        let mut r = TrainRng::new(1);
        assert!(r.uniforms::<f64>(1000).iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
