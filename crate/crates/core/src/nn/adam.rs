use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam with bias correction; owns the moment estimates for one network.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.m
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.v
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.same_shape(net) || !self.m.same_shape(net) {
            return Err(Error::Config("gradient shape does not match network".into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let c1 = 1.0 / (1.0 - beta1.powi(self.step as i32));
        let c2 = 1.0 / (1.0 - beta2.powi(self.step as i32));
        let params = net.weights.iter_mut().chain(net.biases.iter_mut());
        let moments = self
            .m
            .weights
            .iter_mut()
            .chain(self.m.biases.iter_mut())
            .zip(self.v.weights.iter_mut().chain(self.v.biases.iter_mut()));
        let gs = grads.weights.iter().chain(&grads.biases);
        for ((p, (m, v)), g) in params.zip(moments).zip(gs) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] * c1) / ((v[i] * c2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64) -> Mlp {
        Mlp::from_parts(&[1, 1], vec![vec![w]], vec![vec![0.0]]).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut net = Mlp::glorot(&[3, 4, 2], 5).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(&net, AdamConfig::default()).unwrap();
        opt.step(&mut net, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(net, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut net = Mlp::glorot(&[2, 2], 1).unwrap();
        let before = net.params_flat();
        let mut g = Gradients::zeros_like(&net);
        g.weights[0] = vec![3.0, -0.5, 0.01, -40.0];
        g.biases[0] = vec![1.0, -1.0];
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.01)).unwrap();
        opt.step(&mut net, &g).unwrap();
        for ((a, b), gi) in net.params_flat().iter().zip(&before).zip(g.flat()) {
            assert!(((b - a) - 0.01 * gi.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn converges_on_a_parabola() {
        let mut net = scalar(0.0);
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.1)).unwrap();
        for _ in 0..200 {
            let w = net.weights()[0][0];
            let mut g = Gradients::zeros_like(&net);
            g.weights[0][0] = 2.0 * (w - 3.0);
            opt.step(&mut net, &g).unwrap();
        }
        assert!((net.weights()[0][0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let net = scalar(1.0);
        assert!(Adam::new(&net, AdamConfig::with_lr(0.0)).is_err());
        let mut opt = Adam::new(&net, AdamConfig::default()).unwrap();
        let other = Mlp::zeros(&[2, 1]).unwrap();
        let mut n2 = net.clone();
        assert!(opt.step(&mut n2, &Gradients::zeros_like(&other)).is_err());
    }
}
