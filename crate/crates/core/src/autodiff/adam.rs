use alloc::vec;
use alloc::vec::Vec;

use super::AutodiffError;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a fixed list of parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every buffer; `params[i]` and `grads[i]` must match the
    /// sizes given at construction.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
    ) -> Result<(), AutodiffError> {
        let expected = self.first_moment.len();
        if params.len() != expected || grads.len() != expected {
            return Err(AutodiffError::ParamCount {
                expected,
                got: params.len().min(grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let n = self.first_moment[i].len();
            if p.len() != n || g.len() != n {
                return Err(AutodiffError::DataLength {
                    expected: n,
                    got: if p.len() != n { p.len() } else { g.len() },
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
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
        let mut s = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = [1.0, -2.0, 3.0];
        s.step(&mut [&mut p[..]], &[&[0.0; 3][..]]).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(cfg, &[2]);
        let g = [0.5, -3.0];
        let mut p = [0.0, 0.0];
        s.step(&mut [&mut p[..]], &[&g[..]]).unwrap();
        for j in 0..2 {
            // m_hat = g, v_hat = g^2 after bias correction
            let expect = -cfg.lr * g[j] / (g[j].abs() + cfg.epsilon);
            assert!((p[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(cfg, &[1]);
        let mut p = [0.0];
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = p[0];
            s.step(&mut [&mut p[..]], &[&[0.2][..]]).unwrap();
            last = before - p[0];
        }
        assert!(((last - cfg.lr) / cfg.lr).abs() < 0.01);
        assert_eq!(s.step_count(), 1000);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = [0.0; 3];
        assert!(s.step(&mut [&mut p[..]], &[&[0.0; 3][..]]).is_err());
        assert!(s.step(&mut [], &[]).is_err());
        assert_eq!(s.step_count(), 0);
    }
}
