use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nets::Params;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Per-parameter first/second moments and the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments mirroring `params`.
    pub fn new(params: &Params<T>) -> Self {
        let zeros: BTreeMap<String, Vec<T>> =
            params.iter().map(|(n, p)| (n.clone(), vec![T::zero(); p.values.len()])).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
/// Nothing is modified if any gradient is non-finite or mis-shaped.
pub fn adam_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
        if p.values.len() != g.len() || state.m.get(name).map(Vec::len) != Some(g.len()) {
            return Err(Error::shape(format!("gradient/moment shape mismatch for {name}")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("checked above");
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p.values[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Params<f64>, AdamState<f64>) {
        let mut p = Params::new();
        p.insert("w", vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let s = AdamState::new(&p);
        (p, s)
    }

    fn grads(v: Vec<f64>) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("w".to_string(), v)])
    }

    const CFG: AdamConfig = AdamConfig { lr: 1e-2, beta1: 0.9, beta2: 0.99, eps: 1e-8 };

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut p, mut s) = setup();
        let before = p.clone();
        adam_step(&mut p, &grads(vec![0.0; 3]), &mut s, &CFG).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let (mut p, mut s) = setup();
        let cfg = AdamConfig { beta1: 0.0, ..CFG };
        adam_step(&mut p, &grads(vec![3.0, -0.5, 2.0]), &mut s, &cfg).unwrap();
        let got = &p.get("w").unwrap().values;
        let want = [1.0 - 1e-2, -2.0 + 1e-2, 0.5 - 1e-2];
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_lr_freezes_and_moments_decay() {
        let (mut p, mut s) = setup();
        let before = p.clone();
        let cfg = AdamConfig { lr: 0.0, ..CFG };
        adam_step(&mut p, &grads(vec![1.0, 1.0, 1.0]), &mut s, &cfg).unwrap();
        assert_eq!(p, before);
        let m1 = s.m["w"][0];
        adam_step(&mut p, &grads(vec![0.0; 3]), &mut s, &cfg).unwrap();
        assert!((s.m["w"][0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let (mut p, mut s) = setup();
            for k in 0..20 {
                let g = vec![(k as f64).sin(), (k as f64 * 0.3).cos(), 0.1 * k as f64];
                adam_step(&mut p, &grads(g), &mut s, &CFG).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let (mut p, mut s) = setup();
        let before = (p.clone(), s.clone());
        assert!(adam_step(&mut p, &grads(vec![1.0, f64::INFINITY, 0.0]), &mut s, &CFG).is_err());
        assert_eq!((p, s), before);
    }
}
