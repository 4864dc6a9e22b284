//! Adam with global gradient-norm clipping.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
        }
    }
}

/// First/second moment vectors for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

pub struct Adam {
    pub config: AdamConfig,
    pub step_count: u64,
    pub moments: Vec<Moments>,
}

impl Adam {
    /// Moment slots follow the given parameter order; `step` must be called
    /// with the same list.
    pub fn new(config: AdamConfig, params: &[(String, Tensor)]) -> Adam {
        let moments = params
            .iter()
            .map(|(_, t)| Moments {
                m: vec![0.0; t.len()],
                v: vec![0.0; t.len()],
            })
            .collect();
        Adam {
            config,
            step_count: 0,
            moments,
        }
    }

    /// Applies one update from the gradients currently stored on `params`.
    /// Gradients are first scaled so their global norm is at most
    /// `clip_norm`; parameters without a gradient contribute zeros. Returns
    /// the pre-clip global norm.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> Result<f64> {
        if params.len() != self.moments.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors but got {}",
                self.moments.len(),
                params.len()
            )));
        }
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|(_, t)| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        let norm: f64 = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let scale = if norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.config.beta1.powi(t);
        let correction2 = 1.0 - self.config.beta2.powi(t);
        for ((name, tensor), (grad, moments)) in
            params.iter().zip(grads.iter().zip(&mut self.moments))
        {
            if tensor.len() != moments.m.len() {
                return Err(Error::Config(format!(
                    "moment shape for '{name}' no longer matches its tensor"
                )));
            }
            let mut values = tensor.to_vec();
            for i in 0..values.len() {
                let g = grad[i] * scale;
                moments.m[i] = self.config.beta1 * moments.m[i] + (1.0 - self.config.beta1) * g;
                moments.v[i] = self.config.beta2 * moments.v[i] + (1.0 - self.config.beta2) * g * g;
                let m_hat = moments.m[i] / correction1;
                let v_hat = moments.v[i] / correction2;
                values[i] -=
                    self.config.learning_rate * m_hat / (v_hat.sqrt() + self.config.epsilon);
            }
            tensor.set_values(values)?;
        }
        Ok(norm)
    }
}

/// Global L2 norm over the gradients currently stored on `params`.
pub fn global_grad_norm(params: &[(String, Tensor)]) -> f64 {
    params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.into_iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}
