//! Named parameter storage and the Adam optimizer.

use std::collections::HashMap;

use super::{Result, Tensor, TensorError};

/// Adam hyperparameters. The defaults follow the progressive-growing
/// recipe: no momentum, slow second-moment decay.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.0015, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

struct Entry {
    name: String,
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Insertion-ordered set of named parameter tensors with per-parameter
/// Adam moment buffers and a shared step counter.
#[derive(Default)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        assert!(!self.index.contains_key(name), "duplicate parameter '{name}'");
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry { name: name.to_string(), value, m, v });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].value)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].value),
            None => Err(TensorError::UnknownParameter(name.to_string())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Parameter names in insertion order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Result<(&Tensor, &Tensor)> {
        self.index
            .get(name)
            .map(|&i| (&self.entries[i].m, &self.entries[i].v))
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    /// Restore optimizer state when loading a checkpoint.
    pub fn set_state(&mut self, name: &str, m: Tensor, v: Tensor, step: u64) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        if m.shape() != self.entries[i].value.shape() || v.shape() != self.entries[i].value.shape()
        {
            return Err(TensorError::ShapeMismatch {
                op: "set_state",
                detail: format!("moment shapes do not match parameter '{name}'"),
            });
        }
        self.entries[i].m = m;
        self.entries[i].v = v;
        self.step = step;
        Ok(())
    }

    /// One bias-corrected Adam update. `grads` pairs parameter names with
    /// gradient tensors; parameters not named are left untouched (moments
    /// included). The step counter advances by exactly 1.
    pub fn adam_step(&mut self, grads: &[(String, Tensor)], cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let i = *self
                .index
                .get(name)
                .ok_or_else(|| TensorError::UnknownParameter(name.clone()))?;
            if g.shape() != self.entries[i].value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "gradient {:?} vs parameter '{}' {:?}",
                        g.shape(),
                        name,
                        self.entries[i].value.shape()
                    ),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, g) in grads {
            let i = self.index[name];
            let e = &mut self.entries[i];
            let gd = g.data();
            let m = e.m.data_mut();
            for (mi, &gi) in m.iter_mut().zip(gd) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = e.v.data_mut();
            for (vi, &gi) in v.iter_mut().zip(gd) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let (m, v) = (e.m.data(), e.v.data());
            let p = e.value.data_mut();
            for j in 0..p.len() {
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f32) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::full(&[3], value));
        s
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        // Bias correction makes the very first update ~ -lr * sign(g).
        let mut s = store_with(1.0);
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let g = Tensor::full(&[3], 0.5);
        s.adam_step(&[("w".into(), g)], &cfg).unwrap();
        for &v in s.get("w").unwrap().data() {
            assert!((v - (1.0 - 0.01)).abs() < 1e-5, "got {v}");
        }
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn zero_grad_leaves_parameters_but_decays_moments() {
        let mut s = store_with(1.0);
        let cfg = AdamConfig::default();
        s.adam_step(&[("w".into(), Tensor::full(&[3], 2.0))], &cfg).unwrap();
        let v_before = s.moments("w").unwrap().1.data()[0];
        let p_before = s.get("w").unwrap().data()[0];
        s.adam_step(&[("w".into(), Tensor::zeros(&[3]))], &cfg).unwrap();
        let p_after = s.get("w").unwrap().data()[0];
        let v_after = s.moments("w").unwrap().1.data()[0];
        assert_eq!(p_before, p_after);
        assert!((v_after - cfg.beta2 * v_before).abs() < 1e-12);
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = store_with(0.25);
            let cfg = AdamConfig::default();
            for i in 0..10 {
                let g = Tensor::full(&[3], (i as f32 - 4.5) * 0.1);
                s.adam_step(&[("w".into(), g)], &cfg).unwrap();
            }
            s.get("w").unwrap().data().to_vec()
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = store_with(1.0);
        let err = s.adam_step(&[("w".into(), Tensor::zeros(&[4]))], &AdamConfig::default());
        assert!(matches!(err, Err(TensorError::ShapeMismatch { .. })));
        // failed validation must not advance the step counter
        assert_eq!(s.step_count(), 0);
    }
}
