//! Adam with a single, standard bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments for parameters of the given sizes.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(Tensor::numel).collect();
        Self::new(lr, &sizes)
    }

    /// One update. Returns the new parameter leaves in the same order.
    ///
    /// `m_t = b1 m + (1 - b1) g`, `v_t = b2 v + (1 - b2) g^2`, then
    /// `theta -= lr * m_hat / (sqrt(v_hat) + eps)` with
    /// `m_hat = m_t / (1 - b1^t)`, `v_hat = v_t / (1 - b2^t)`.
    pub fn step(&mut self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        let grads: Vec<Vec<f64>> = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let g = p
                    .grad()
                    .ok_or_else(|| Error::Contract(format!("parameter {i} has no gradient")))?;
                if g.len() != self.m[i].len() {
                    return Err(Error::Contract(format!(
                        "parameter {i} has {} entries, optimizer state {}",
                        g.len(),
                        self.m[i].len()
                    )));
                }
                Ok(g)
            })
            .collect::<Result<_>>()?;
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut out = Vec::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data: Vec<f64> = p
                .data()
                .iter()
                .zip(&grads[i])
                .enumerate()
                .map(|(j, (&theta, &g))| {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                    let m_hat = m[j] / c1;
                    let v_hat = v[j] / c2;
                    theta - self.lr * m_hat / (v_hat.sqrt() + self.epsilon)
                })
                .collect();
            out.push(Tensor::parameter(p.shape(), data)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(value: f64, g: f64) -> Tensor {
        let p = Tensor::parameter(&[1], vec![value]).unwrap();
        p.scale(g).sum().backward().unwrap();
        p
    }

    #[test]
    fn first_step_by_hand() {
        let mut s = AdamState::new(0.001, &[1]);
        let out = s.step(&[with_grad(0.0, 1.0)]).unwrap();
        assert!((s.m[0][0] - 0.1).abs() < 1e-15);
        assert!((s.v[0][0] - 0.001).abs() < 1e-15);
        let expected = -0.001 * 1.0 / (1.0 + 1e-8);
        assert!((out[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(0.01, &[1]);
        s.m[0][0] = 0.5;
        s.v[0][0] = 0.2;
        let out = s.step(&[with_grad(2.0, 0.0)]).unwrap();
        assert_eq!(s.m[0][0], 0.45);
        assert!(s.v[0][0] < 0.2);
        // leftover momentum still moves the parameter; a fresh state does not
        let mut fresh = AdamState::new(0.01, &[1]);
        assert_eq!(
            fresh.step(&[with_grad(2.0, 0.0)]).unwrap()[0].data()[0],
            2.0
        );
        assert!(out[0].data()[0] < 2.0);
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let mut s = AdamState::new(0.01, &[1]);
        let p = Tensor::parameter(&[1], vec![1.0]).unwrap();
        assert!(matches!(s.step(&[p]), Err(Error::Contract(_))));
        assert_eq!(s.t, 0);
    }
}
