use crate::error::Result;
use crate::module::Module;

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// First and second moment estimates for one tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    /// One bias-corrected update at step `t` (1-based).
    pub fn update(&mut self, param: &mut [f64], grad: &[f64], cfg: &AdamConfig, t: u64) {
        if self.m.len() != param.len() {
            self.m = vec![0.0; param.len()];
            self.v = vec![0.0; param.len()];
        }
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            param[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

/// Adam over all trainable tensors of a module, matched by visit order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            states: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies accumulated gradients and clears them. Tensors without a
    /// gradient (frozen weights, buffers) are left untouched.
    pub fn step(&mut self, module: &mut dyn Module) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let cfg = self.cfg;
        let states = &mut self.states;
        let mut idx = 0;
        module.visit_mut("", &mut |_, tensor, _| {
            if states.len() <= idx {
                states.push(AdamState::default());
            }
            if tensor.requires_grad() {
                if let Some(g) = tensor.grad().map(|g| g.to_vec()) {
                    states[idx].update(tensor.data_mut(), &g, &cfg, t);
                }
            }
            tensor.zero_grad();
            idx += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::default();
        let mut p = vec![1.0, -2.0, 3.5];
        for t in 1..=50 {
            st.update(&mut p, &[0.0, 0.0, 0.0], &cfg, t);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // t = 1: mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps).
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        for g in [0.3, -7.0, 1e-3] {
            let mut st = AdamState::default();
            let mut p = vec![0.0];
            st.update(&mut p, &[g], &cfg, 1);
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!((p[0].abs() - cfg.lr).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_loss_decreases() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        let mut st = AdamState::default();
        let mut x = vec![3.0];
        let loss = |x: f64| (x - 1.0) * (x - 1.0);
        let mut trace = Vec::new();
        for t in 1..=200 {
            let g = 2.0 * (x[0] - 1.0);
            st.update(&mut x, &[g], &cfg, t);
            trace.push(loss(x[0]));
        }
        assert!(trace[199] < 1e-2 * loss(3.0));
        // after warm-up the loss trend is downward over every 20-step window
        for w in trace[20..].chunks(20).collect::<Vec<_>>().windows(2) {
            let a: f64 = w[0].iter().sum();
            let b: f64 = w[1].iter().sum();
            assert!(b <= a + 1e-9, "{a} -> {b}");
        }
    }
}
