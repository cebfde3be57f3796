use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, NetError};

pub trait Optimizer: Send {
    /// Applies one update to the trainable tensors of `net`. Fails when the
    /// gradient is not finite or the updated parameters are not.
    fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NetError>;

    fn steps_taken(&self) -> u64;
}

fn check_inputs(net: &Mlp, grads: &Gradients) -> Result<(), NetError> {
    if !grads.matches(net) {
        return Err(NetError::ShapeMismatch("gradient shapes differ from parameters".into()));
    }
    if !grads.all_finite() {
        return Err(NetError::NonFiniteGradient);
    }
    Ok(())
}

fn check_outputs(net: &Mlp) -> Result<(), NetError> {
    if net.all_finite() {
        Ok(())
    } else {
        Err(NetError::DivergenceDetected { max_abs_param: net.max_abs_param() })
    }
}

/// Plain gradient descent `p -= lr * g`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    steps: u64,
}

impl Sgd {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, steps: 0 }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NetError> {
        check_inputs(net, grads)?;
        for (layer, (gw, gb)) in net.layers_mut().iter_mut().zip(&grads.layers) {
            if layer.train_weights {
                layer.weights.scaled_add(-self.learning_rate, gw);
            }
            if layer.train_bias {
                layer.bias.scaled_add(-self.learning_rate, gb);
            }
        }
        self.steps += 1;
        check_outputs(net)
    }

    fn steps_taken(&self) -> u64 {
        self.steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step_count: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &Mlp) -> Self {
        Self { config, step_count: 0, first: Gradients::zeros_like(net), second: Gradients::zeros_like(net) }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NetError> {
        check_inputs(net, grads)?;
        if !self.first.matches(net) {
            return Err(NetError::ShapeMismatch("optimizer state belongs to another network".into()));
        }
        self.step_count += 1;
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, epsilon: eps } = self.config;
        let c1 = 1.0 - b1.powi(self.step_count as i32);
        let c2 = 1.0 - b2.powi(self.step_count as i32);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        let layers = net.layers_mut().iter_mut().zip(&grads.layers).zip(self.first.layers.iter_mut().zip(&mut self.second.layers));
        for ((layer, (gw, gb)), ((mw, mb), (vw, vb))) in layers {
            if layer.train_weights {
                ndarray::Zip::from(&mut layer.weights).and(mw).and(vw).and(gw).for_each(|p, m, v, &g| update(p, m, v, g));
            }
            if layer.train_bias {
                ndarray::Zip::from(&mut layer.bias).and(mb).and(vb).and(gb).for_each(|p, m, v, &g| update(p, m, v, g));
            }
        }
        check_outputs(net)
    }

    fn steps_taken(&self) -> u64 {
        self.step_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::Dense;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[3, 4, 2], &mut rng);
        let before = net.clone();
        let mut adam = Adam::new(AdamConfig::default(), &net);
        let zero = Gradients::zeros_like(&net);
        adam.step(&mut net, &zero).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = Mlp::from_layers(vec![Dense::zeros(1, 1)]).unwrap();
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.01, ..AdamConfig::default() }, &net);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].0[[0, 0]] = 3.7;
        adam.step(&mut net, &g).unwrap();
        // m_hat = g, v_hat = g^2: step = lr * g / (|g| + eps)
        let expected = -0.01 * 3.7 / (3.7 + 1e-8);
        assert!((net.layers()[0].weights[[0, 0]] - expected).abs() < 1e-15);
        assert_eq!(net.layers()[0].bias[0], 0.0);
    }

    #[test]
    fn frozen_tensors_do_not_move() {
        let mut net = Mlp::from_layers(vec![
            Dense::new(array![[1.0, 2.0]], array![0.0]).unwrap().frozen(),
            Dense::new(Array2::ones((1, 1)), array![0.0]).unwrap(),
        ])
        .unwrap();
        let g = net.backward_single(&[1.0, 1.0], &[1.0]).unwrap();
        let mut sgd = Sgd::new(0.1);
        sgd.step(&mut net, &g).unwrap();
        assert_eq!(net.layers()[0].weights, array![[1.0, 2.0]]);
        assert!((net.layers()[1].weights[[0, 0]] - (1.0 - 0.1 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = Mlp::from_layers(vec![Dense::zeros(1, 1)]).unwrap();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].1[0] = f64::NAN;
        assert_eq!(Sgd::new(1.0).step(&mut net, &g), Err(NetError::NonFiniteGradient));
        g.layers[0].1[0] = f64::MAX;
        let r = Sgd::new(10.0).step(&mut net, &g);
        assert!(matches!(r, Err(NetError::DivergenceDetected { .. })));
    }

    #[test]
    fn deterministic_runs() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut net = Mlp::new(&[2, 8, 2], &mut rng);
            let mut adam = Adam::new(AdamConfig::default(), &net);
            for i in 0..1000 {
                let x = [(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()];
                let y = net.forward(&x).unwrap();
                let g = net.backward_single(&x, &[y[0] - 1.0, y[1] + 0.5]).unwrap();
                adam.step(&mut net, &g).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }
}
