//! Binary checkpoints, all integers and floats little-endian:
//!
//! ```text
//! "LAGC" | version u32 | config len u32 + UTF-8 text | step u64
//!        | rng len u32 + bytes | tensor count u32
//!        | per tensor: name len u32 + UTF-8, ndim u32, dims u64 * ndim, f64 * numel
//! ```
//!
//! Tensors are the generator (`gen/`) and critic (`critic/`) parameters
//! and both optimizers' moments (`gen_opt/m/`, `gen_opt/v/`, ...), plus the
//! optimizer step counters as one-element tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::config::TrainConfig;
use super::rng::TrainRng;
use super::train::TrainState;
use crate::error::{Error, Result};
use crate::nets::Params;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"LAGC";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len());
    out.extend_from_slice(b);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: impl Iterator<Item = f64>) {
    put_bytes(out, name.as_bytes());
    put_u32(out, shape.len());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_params<T: Scalar>(out: &mut Vec<u8>, prefix: &str, p: &Params<T>) {
    for (name, t) in p.iter() {
        put_tensor(out, &format!("{prefix}/{name}"), &t.shape, t.values.iter().map(|v| v.as_f64()));
    }
}

fn put_adam<T: Scalar>(out: &mut Vec<u8>, prefix: &str, params: &Params<T>, s: &AdamState<T>) {
    for (name, t) in params.iter() {
        put_tensor(out, &format!("{prefix}/m/{name}"), &t.shape, s.m[name].iter().map(|v| v.as_f64()));
        put_tensor(out, &format!("{prefix}/v/{name}"), &t.shape, s.v[name].iter().map(|v| v.as_f64()));
    }
    put_tensor(out, &format!("{prefix}/step"), &[1], std::iter::once(s.step as f64));
}

/// Serialize the complete training state.
pub fn encode_checkpoint<T: Scalar>(state: &TrainState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_bytes(&mut out, state.cfg.to_text().as_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    put_bytes(&mut out, &state.rng.state_bytes());
    let count = 2 * state.gen.len() + 2 * state.critic.len() + state.gen.len() + state.critic.len() + 2;
    put_u32(&mut out, count);
    put_params(&mut out, "gen", &state.gen);
    put_params(&mut out, "critic", &state.critic);
    put_adam(&mut out, "gen_opt", &state.gen, &state.gen_opt);
    put_adam(&mut out, "critic_opt", &state.critic, &state.critic_opt);
    out
}

/// Write a checkpoint through a temporary file so an interrupted write
/// never leaves a truncated checkpoint under the final name.
pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)?;
        self.take(n, what)
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let b = self.bytes(what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(self.path, format!("{what} is not UTF-8")))
    }
}

/// Parse a checkpoint. Shapes are checked against the networks implied by
/// the stored configuration; any mismatch or missing tensor is an error.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], path: &Path) -> Result<TrainState<T>> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let cfg_text = r.text("config")?;
    let cfg = TrainConfig::from_text(&cfg_text).map_err(|e| Error::format(path, format!("stored config: {e}")))?;
    let step = r.u64("step")?;
    let rng = TrainRng::from_state_bytes(r.bytes("rng state")?).map_err(|e| Error::format(path, e.to_string()))?;
    let count = r.u32("tensor count")?;
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let name = r.text("tensor name")?;
        let ndim = r.u32("rank")?;
        if ndim > 8 {
            return Err(Error::format(path, format!("tensor {name} has rank {ndim}")));
        }
        let shape = (0..ndim).map(|_| r.u64("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.filter(|n| n.checked_mul(8).is_some()).ok_or_else(|| Error::format(path, "tensor too large"))?;
        let raw = r.take(numel * 8, "tensor payload")?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if tensors.insert(name.clone(), (shape, values)).is_some() {
            return Err(Error::format(path, format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }

    let mut state = TrainState::<T>::new(cfg).map_err(|e| Error::format(path, format!("stored config: {e}")))?;
    state.step = step;
    state.rng = rng;
    let mut take = |name: String, shape: &[usize]| -> Result<Vec<T>> {
        let (s, v) = tensors.remove(&name).ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        if s != shape {
            return Err(Error::format(path, format!("tensor {name} has shape {s:?}, config implies {shape:?}")));
        }
        Ok(v.into_iter().map(T::lit).collect())
    };
    for (prefix, params, opt) in [
        ("gen", &mut state.gen, &mut state.gen_opt),
        ("critic", &mut state.critic, &mut state.critic_opt),
    ] {
        for (name, t) in params.iter_mut() {
            t.values = take(format!("{prefix}/{name}"), &t.shape)?;
            opt.m.insert(name.clone(), take(format!("{prefix}_opt/m/{name}"), &t.shape)?);
            opt.v.insert(name.clone(), take(format!("{prefix}_opt/v/{name}"), &t.shape)?);
        }
        opt.step = take(format!("{prefix}_opt/step"), &[1])?[0].as_f64() as u64;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::format(path, format!("unexpected tensor {extra}")));
    }
    Ok(state)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<TrainState<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> TrainState<f64> {
        let cfg = TrainConfig {
            x_size: 16,
            width: 4,
            blocks: 1,
            latent_n: 2,
            latent_p: 3,
            total_steps: 10,
            progressive: false,
            ..TrainConfig::default()
        };
        let mut s = TrainState::new(cfg).unwrap();
        s.step = 7;
        s.gen_opt.step = 7;
        s.critic_opt.m.values_mut().next().unwrap()[0] = 0.25;
        let _ = s.rng.normals::<f64>(5);
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let s = state();
        let bytes = encode_checkpoint(&s);
        let back = decode_checkpoint::<f64>(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_checkpoint(&state());
        for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
            let err = decode_checkpoint::<f64>(&bytes[..cut], Path::new("mem")).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn config_and_tensor_mismatch_is_rejected() {
        let s = state();
        let mut other = s.clone();
        other.cfg.width = 5;
        let good = encode_checkpoint(&s);
        // splice the wider config text in front of the narrower tensors
        let wide = encode_checkpoint(&TrainState::<f64>::new(other.cfg.clone()).unwrap());
        let cfg_len = |b: &[u8]| u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let mut mixed = wide[..12 + cfg_len(&wide)].to_vec();
        mixed.extend_from_slice(&good[12 + cfg_len(&good)..]);
        let err = decode_checkpoint::<f64>(&mixed, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("shape"), "{err}");
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_checkpoint::<f64>(&bad_magic, Path::new("mem")).is_err());
    }
}
