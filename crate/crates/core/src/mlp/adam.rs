use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Adam moments for a list of flat parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, tensor_lens: &[usize]) -> Self {
        Self {
            config,
            first_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        }
    }

    pub fn for_model(model: &MlpModel, config: AdamConfig) -> Self {
        let lens: Vec<usize> = model.parameters().iter().map(|t| t.len()).collect();
        Self::new(config, &lens)
    }

    /// Bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[k].len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {k}: param {} / grad {} / moment {}",
                    p.len(),
                    g.len(),
                    self.first_moment[k].len()
                )));
            }
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

pub fn adam_step(opt: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    opt.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02, 1e-3] {
            let mut opt = AdamState::new(AdamConfig::default(), &[1]);
            let mut p = [1.0];
            opt.step(&mut [&mut p[..]], &[&[g][..]]).unwrap();
            let delta = p[0] - 1.0;
            let expected = 5e-4 * g.abs() / (g.abs() + 1e-7);
            assert!((delta.abs() - expected).abs() < 1e-15, "g={g}");
            assert_eq!(delta.signum(), -g.signum());
            assert_eq!(opt.step_count, 1);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut opt = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = [1.0, -2.0, 0.5];
        opt.step(&mut [&mut p[..]], &[&[0.0; 3][..]]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn pure_function_of_inputs() {
        let base = AdamState::new(AdamConfig::default(), &[2]);
        let run = || {
            let mut opt = base.clone();
            let mut p = [0.3, 0.4];
            opt.step(&mut [&mut p[..]], &[&[0.1, -0.2][..]]).unwrap();
            opt.step(&mut [&mut p[..]], &[&[0.05, 0.7][..]]).unwrap();
            (opt, p)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = [0.0; 3];
        assert!(opt.step(&mut [&mut p[..]], &[&[0.0; 3][..]]).is_err());
        assert_eq!(opt.step_count, 0);
    }
}
