use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Step-halving schedule: the rate halves every `halve_every` epochs (epochs count from 0).
pub fn lr_at_epoch(base: f32, epoch: usize, halve_every: usize) -> f32 {
    if halve_every == 0 {
        return base;
    }
    base * 0.5f32.powi((epoch / halve_every) as i32)
}

#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

/// Bias-corrected Adam over an ordered parameter list.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: AdamState::default(),
        }
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    /// Applies one update using the gradients stored on `params`. A parameter
    /// without a gradient is treated as having a zero gradient. If any gradient
    /// is non-finite nothing is modified.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if self.state.m.is_empty() {
            self.state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.state.v = self.state.m.clone();
        }
        if self.state.m.len() != params.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} parameters, step received {}",
                self.state.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if self.state.m[i].len() != p.numel() {
                return Err(Error::dim(format!(
                    "parameter {i} has {} elements, optimizer state has {}",
                    p.numel(),
                    self.state.m[i].len()
                )));
            }
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for parameter {i}; step aborted"
                    )));
                }
            }
        }

        self.state.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.state.t as i32;
        let bc1 = 1.0 - f64::from(beta1).powi(t);
        let bc2 = 1.0 - f64::from(beta2).powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad().map(<[f32]>::to_vec) else {
                // Zero gradient still decays the moments.
                self.state.m[i].iter_mut().for_each(|m| *m *= beta1);
                self.state.v[i].iter_mut().for_each(|v| *v *= beta2);
                apply(p.data_mut(), &self.state.m[i], &self.state.v[i], lr, eps, bc1, bc2);
                continue;
            };
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            for ((m, v), g) in m.iter_mut().zip(v.iter_mut()).zip(&g) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
            }
            apply(p.data_mut(), m, v, lr, eps, bc1, bc2);
        }
        Ok(())
    }
}

fn apply(w: &mut [f32], m: &[f32], v: &[f32], lr: f32, eps: f32, bc1: f64, bc2: f64) {
    for ((w, m), v) in w.iter_mut().zip(m).zip(v) {
        let m_hat = f64::from(*m) / bc1;
        let v_hat = f64::from(*v) / bc2;
        *w -= (f64::from(lr) * m_hat / (v_hat.sqrt() + f64::from(eps))) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f32], grad: &[f32]) -> Tensor {
        let mut t = Tensor::new(&[values.len()], values.to_vec()).unwrap().with_grad();
        t.set_grad(grad.to_vec()).unwrap();
        t
    }

    #[test]
    fn first_step_moves_by_almost_lr() {
        let cfg = AdamConfig::default();
        for g in [1e-3f32, 0.5, -3.0, 100.0] {
            let mut adam = Adam::new(cfg);
            let mut p = vec![param(&[1.0, -2.0], &[g, g])];
            adam.step(&mut p).unwrap();
            for (after, before) in p[0].data().iter().zip([1.0f32, -2.0]) {
                let delta = f64::from((after - before).abs());
                let lr = f64::from(cfg.lr);
                // Storing the parameter in f32 may round the step by up to one ulp.
                let ulp = f64::from(before.abs() * f32::EPSILON);
                assert!(delta > 0.99 * lr - ulp && delta <= lr + ulp, "g={g}: |Δ|={delta}");
            }
        }
    }

    #[test]
    fn zero_gradient_never_moves() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![param(&[0.3, 0.7], &[0.0, 0.0])];
        for _ in 0..5 {
            adam.step(&mut p).unwrap();
        }
        assert_eq!(p[0].data(), &[0.3, 0.7]);
        assert_eq!(adam.state.t, 5);
    }

    // Independent scalar Adam in double precision.
    fn scalar_adam(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        let mut traj = Vec::new();
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
            traj.push(w);
        }
        traj
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_reference() {
        let expected = scalar_adam(1.0, 0.1, 10);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        let mut w = vec![Tensor::new(&[1], vec![1.0]).unwrap().with_grad()];
        let mut prev = 1.0f32;
        for e in expected {
            let g = 2.0 * w[0].data()[0];
            w[0].set_grad(vec![g]).unwrap();
            adam.step(&mut w).unwrap();
            let now = w[0].data()[0];
            assert!(now < prev);
            assert!((f64::from(now) - e).abs() < 1e-6, "{now} vs {e}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![param(&[1.0], &[f32::NAN])];
        assert!(matches!(adam.step(&mut p), Err(Error::Numeric(_))));
        assert_eq!(p[0].data(), &[1.0]);
        assert_eq!(adam.state.t, 0);
    }

    #[test]
    fn schedule_halves_every_hundred_epochs() {
        assert_eq!(lr_at_epoch(1e-4, 0, 100), 1e-4);
        assert_eq!(lr_at_epoch(1e-4, 99, 100), 1e-4);
        assert_eq!(lr_at_epoch(1e-4, 100, 100), 5e-5);
        assert_eq!(lr_at_epoch(1e-4, 200, 100), 2.5e-5);
    }
}
