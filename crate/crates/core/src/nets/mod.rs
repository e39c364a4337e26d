//! Generator `G(y, z)` and critic `C = F ∘ P`, with progressive growing.

mod critic;
mod generator;
mod schedule;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{numel, Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use critic::{build_critic, critic_project, critic_score, critic_value};
pub use generator::{build_generator, generator_forward};
pub use schedule::{progressive_schedule, ScheduleConfig, StageState};

/// Architecture hyperparameters shared by both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub width: usize,
    pub blocks: usize,
    pub latent_n: usize,
    pub latent_p: usize,
    pub y_size: usize,
    pub x_size: usize,
    pub channels: usize,
    pub slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { width: 32, blocks: 4, latent_n: 16, latent_p: 64, y_size: 4, x_size: 32, channels: 3, slope: 0.2 }
    }
}

impl NetConfig {
    /// Number of growth stages, `log2(x_size / y_size)`.
    pub fn stages(&self) -> Result<usize> {
        if self.y_size == 0 || self.x_size % self.y_size != 0 {
            return Err(Error::Config(format!("x_size {} is not a multiple of y_size {}", self.x_size, self.y_size)));
        }
        let scale = self.x_size / self.y_size;
        if scale < 2 || !scale.is_power_of_two() {
            return Err(Error::Config(format!("x_size / y_size must be a power of two >= 2, got {scale}")));
        }
        Ok(scale.trailing_zeros() as usize)
    }

    /// Output side length at `stage`.
    pub fn resolution(&self, stage: usize) -> usize {
        self.y_size << (stage + 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.stages()?;
        if self.width == 0 || self.latent_n == 0 || self.latent_p == 0 {
            return Err(Error::Config("width, latent_n and latent_p must be positive".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }
}

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

/// Named parameter collection, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params<T> {
    tensors: BTreeMap<String, ParamTensor<T>>,
}

/// Graph handles for a bound parameter set.
pub type Bound = BTreeMap<String, Tensor>;

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<T>) -> Result<()> {
        let name = name.into();
        if numel(&shape) != values.len() {
            return Err(Error::shape(format!("parameter {name}: shape {shape:?} vs {} values", values.len())));
        }
        if self.tensors.insert(name.clone(), ParamTensor { shape, values }).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamTensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamTensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(|p| p.values.len()).sum()
    }

    /// Add every tensor to `g`, as variables when `trainable`, else as
    /// detached constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<Bound> {
        self.tensors
            .iter()
            .map(|(name, p)| {
                let t = if trainable { g.variable(&p.shape, p.values.clone())? } else { g.constant(&p.shape, p.values.clone())? };
                Ok((name.clone(), t))
            })
            .collect()
    }

    /// Parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> Params<T> {
        Params {
            tensors: self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(n, p)| (n.clone(), p.clone())).collect(),
        }
    }
}

/// Layer shapes to be initialised: `(name, shape, fan_in)`; a zero fan-in
/// marks a bias, which starts at zero.
pub(crate) type Layout = Vec<(String, Vec<usize>, usize)>;

pub(crate) fn conv_layer(layout: &mut Layout, name: &str, out_c: usize, in_c: usize, k: usize) {
    layout.push((format!("{name}.w"), vec![out_c, in_c, k, k], in_c * k * k));
    layout.push((format!("{name}.b"), vec![out_c], 0));
}

pub(crate) fn dense_layer(layout: &mut Layout, name: &str, in_d: usize, out_d: usize) {
    layout.push((format!("{name}.w"), vec![in_d, out_d], in_d));
    layout.push((format!("{name}.b"), vec![out_d], 0));
}

/// He fan-in initialisation: weights `~ N(0, 2 / fan_in)`, biases zero.
/// Tensors are drawn in name order from one seeded stream.
pub(crate) fn initialise<T: Scalar>(mut layout: Layout, seed: u64) -> Result<Params<T>> {
    layout.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::new();
    for (name, shape, fan_in) in layout {
        let n = numel(&shape);
        let values = if fan_in == 0 {
            vec![T::zero(); n]
        } else {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    T::lit(v * std)
                })
                .collect()
        };
        params.insert(name, shape, values)?;
    }
    Ok(params)
}

/// Conv layer `name` from bound parameters: `conv(x, w) + b`, 'same' padding.
pub(crate) fn conv<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Tensor) -> Result<Tensor> {
    let w = lookup(p, &format!("{name}.w"))?;
    let b = lookup(p, &format!("{name}.b"))?;
    let k = g.shape(w)[2];
    let y = g.conv2d(x, w, 1, k / 2)?;
    let c = g.shape(b)[0];
    let b = g.reshape(b, &[1, c, 1, 1])?;
    g.add(y, b)
}

pub(crate) fn dense<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Tensor) -> Result<Tensor> {
    let w = lookup(p, &format!("{name}.w"))?;
    let b = lookup(p, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

pub(crate) fn lookup(p: &Bound, name: &str) -> Result<Tensor> {
    p.get(name).copied().ok_or_else(|| Error::Config(format!("missing parameter {name}")))
}

/// `(1 - alpha) * old + alpha * new`.
pub(crate) fn blend<T: Scalar>(g: &mut Graph<T>, old: Tensor, new: Tensor, alpha: f64) -> Result<Tensor> {
    let a = g.scale(old, 1.0 - alpha)?;
    let b = g.scale(new, alpha)?;
    g.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_count_from_scale() {
        let cfg = NetConfig { y_size: 4, x_size: 32, ..NetConfig::default() };
        assert_eq!(cfg.stages().unwrap(), 3);
        assert_eq!((0..3).map(|s| cfg.resolution(s)).collect::<Vec<_>>(), vec![8, 16, 32]);
        assert!(NetConfig { x_size: 24, ..cfg.clone() }.stages().is_err());
        assert!(NetConfig { x_size: 4, ..cfg }.stages().is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = Params::<f64>::new();
        p.insert("a", vec![1], vec![0.0]).unwrap();
        assert!(p.insert("a", vec![1], vec![0.0]).is_err());
        assert!(p.insert("b", vec![2], vec![0.0]).is_err());
    }
}
