use serde::{Deserialize, Serialize};

use super::{ParamStore, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are laid out like the store's parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: store.zero_grads(),
            second_moment: store.zero_grads(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// One update. Fails without touching anything when a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(TensorError::Invalid(format!(
                "adam: {} gradient buffers for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.len() != store.get(id).numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    lhs: store.get(id).shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (pi, id) in store.ids().enumerate().collect::<Vec<_>>() {
            let m = &mut self.first_moment[pi];
            let v = &mut self.second_moment[pi];
            let g = &grads[pi];
            let data = store.get_mut(id).data_mut();
            for i in 0..data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Init, Session};

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.add("x", &[1], Init::Constant(x));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = scalar_store(1.5);
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[vec![0.0]]).unwrap();
        assert_eq!(store.get(store.find("x").unwrap()).data(), &[1.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[vec![1.0]]).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr / (1 + eps)
        let x = store.get(store.find("x").unwrap()).item();
        assert!((x + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(&store, AdamConfig::default());
        let err = adam.step(&mut store, &[vec![f64::NAN]]).unwrap_err();
        assert_eq!(err, TensorError::NonFiniteGradient("x".into()));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn hundred_steps_on_quadratic_strictly_decrease() {
        let mut store = scalar_store(1.0);
        let id = store.find("x").unwrap();
        let mut adam = Adam::new(&store, AdamConfig::default());
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let g = Graph::new();
            let s = Session::new(&g, &store);
            let loss = s.param(id).square().sum_all();
            let f = loss.item();
            assert!(f < prev);
            prev = f;
            let grads = g.backward(loss).unwrap();
            let mut buf = store.zero_grads();
            s.accumulate_grads(&grads, &mut buf);
            drop(s);
            adam.step(&mut store, &buf).unwrap();
        }
        assert!(store.get(id).item() < 1.0);
    }
}
