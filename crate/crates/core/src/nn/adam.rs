use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// Moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![T::ZERO; n], vec![T::ZERO; n])).unzip();
        Self { config, t: 0, m, v }
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched; a non-finite value aborts with the tensor name.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], names: &[&str]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() || params[i].len() != g.len() {
                return Err(Error::shape(format!("tensor {i}: size mismatch")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    layer: names.get(i).map_or_else(|| i.to_string(), |s| s.to_string()),
                });
            }
        }

        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.t as i32));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);

        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], grads[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + ob1 * g[j];
                v[j] = b2 * v[j] + ob2 * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
