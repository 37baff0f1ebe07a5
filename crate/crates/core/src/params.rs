//! Named parameter storage and the AdamW optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub type Gradients<T = f32> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Debug, PartialEq)]
struct Param<T: Scalar> {
    value: Tensor<T>,
    // (first moment, second moment); present iff trainable
    moments: Option<(Vec<T>, Vec<T>)>,
}

/// Parameters keyed by name, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    params: BTreeMap<String, Param<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) {
        let moments =
            trainable.then(|| (vec![T::zero(); value.len()], vec![T::zero(); value.len()]));
        self.params.insert(name.into(), Param { value, moments });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))?;
        p.value = Tensor::new(p.value.shape().to_vec(), data)?;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|p| p.moments.is_some())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Copy of the parameter values at another precision. Optimizer state
    /// is reset.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, p) in &self.params {
            out.insert(name.clone(), p.value.cast(), p.moments.is_some());
        }
        out
    }

    /// One AdamW update with decoupled weight decay. Trainable parameters
    /// absent from `grads` are updated as if their gradient were zero.
    pub fn adamw_step(&mut self, grads: &Gradients<T>, opt: &AdamW) -> Result<()> {
        opt.validate()?;
        for (name, g) in grads {
            let p = self.params.get(name).ok_or_else(|| {
                Error::Contract(format!("gradient for unknown parameter {name:?}"))
            })?;
            if g.shape() != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "gradient for {name:?} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for (name, p) in self.params.iter_mut() {
            let Some((m, v)) = p.moments.as_mut() else {
                continue;
            };
            let grad = grads.get(name).map(|g| g.data());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let gi = grad.map_or(0.0, |g| g[i].as_f64());
                let mi = opt.beta1 * m[i].as_f64() + (1.0 - opt.beta1) * gi;
                let vi = opt.beta2 * v[i].as_f64() + (1.0 - opt.beta2) * gi * gi;
                m[i] = T::from_f64(mi);
                v[i] = T::from_f64(vi);
                let mut wi = w.as_f64() * (1.0 - opt.lr * opt.weight_decay);
                wi -= opt.lr * (mi / bc1) / ((vi / bc2).sqrt() + opt.eps);
                *w = T::from_f64(wi);
            }
        }
        Ok(())
    }
}

/// He-style uniform initialization: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "AdamW betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "AdamW eps must be positive and weight_decay nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::vector(vec![p]), true);
        s
    }

    fn grads(g: f64) -> Gradients<f64> {
        let mut m = Gradients::new();
        m.insert("p".into(), Tensor::vector(vec![g]));
        m
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut s = scalar_store(0.7);
        let before = s.clone();
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        for _ in 0..3 {
            s.adamw_step(&grads(0.0), &opt).unwrap();
        }
        assert_eq!(s.get("p"), before.get("p"));
        assert_eq!(s.step(), 3);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut s = scalar_store(1.0);
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        s.adamw_step(&grads(1.0), &opt).unwrap();
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1; p' = 1 - 0.001 * 1 / (1 + 1e-8)
        let m_hat = (0.1f64) / (1.0 - 0.9);
        let v_hat = (0.001f64) / (1.0 - 0.999);
        let expected = 1.0 - 0.001 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((s.get("p").unwrap().item() - expected).abs() < 1e-12);
        assert!((expected - 0.99900000001).abs() < 1e-10);
    }

    #[test]
    fn decay_only_step() {
        let mut s = scalar_store(2.0);
        s.adamw_step(&grads(0.0), &AdamW::default()).unwrap();
        let expected = 2.0 * (1.0 - 0.001 * 0.01);
        assert!((s.get("p").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_lr_is_config_error() {
        let mut s = scalar_store(1.0);
        let opt = AdamW {
            lr: 0.0,
            ..AdamW::default()
        };
        assert!(matches!(
            s.adamw_step(&grads(1.0), &opt),
            Err(Error::Config(_))
        ));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let mut s = ParamStore::<f64>::new();
        s.insert("frozen", Tensor::vector(vec![1.0]), false);
        s.insert("p", Tensor::vector(vec![1.0]), true);
        s.adamw_step(&grads(1.0), &AdamW::default()).unwrap();
        assert_eq!(s.get("frozen").unwrap().item(), 1.0);
        assert!(s.get("p").unwrap().item() < 1.0);
    }
}
