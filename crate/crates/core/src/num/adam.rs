use crate::error::{shape_err, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction. Weight decay, when nonzero, is added to the
/// gradient as an L2 term.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// `sizes` lists the length of every parameter block, in the order the
    /// blocks will be passed to [`AdamState::step`].
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(shape_err(format!(
                "{} parameter and {} gradient blocks for {} tracked",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(shape_err(format!("block of {} vs gradient {} vs state {}", p.len(), g.len(), m.len())));
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                let gi = g[i] + c.weight_decay * p[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut [&mut p], &[&[0.0; 3]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m̂ = g, v̂ = g², so the step is lr * g / (|g| + eps).
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(cfg, &[1]);
        let mut p = vec![0.0];
        st.step(&mut [&mut p], &[&[1.0]]).unwrap();
        let expected = cfg.learning_rate * 1.0 / (1.0 + cfg.epsilon);
        assert!((p[0] + expected).abs() < 1e-18);
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(cfg, &[1]);
        let mut w = vec![0.0];
        for _ in 0..100 {
            let g = [2.0 * (w[0] - 3.0)];
            st.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 0.5, "{}", w[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0; 3];
        assert!(st.step(&mut [&mut p], &[&[0.0; 3]]).is_err());
    }
}
