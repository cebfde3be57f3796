use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ForwardCache, Gradients, Mlp, NetError};

/// How the MLP's outputs map to action values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QHead {
    /// One output per action.
    PerAction,
    /// Input is `state ++ one_hot(action)`, single output, evaluated once
    /// per action.
    ActionConditioned,
}

/// State-action value function `Q(s, .)` over a discrete action set.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    mlp: Mlp,
    head: QHead,
    num_actions: usize,
}

/// Batched forward pass retained for backpropagation.
#[derive(Debug, Clone)]
pub struct QForward {
    pub q: Array2<f64>,
    cache: ForwardCache,
}

impl QNetwork {
    /// Per-action head with rectifier hidden layers of the given widths.
    pub fn mlp(observation_dim: usize, num_actions: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut sizes = vec![observation_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(num_actions);
        Self { mlp: Mlp::new(&sizes, rng), head: QHead::PerAction, num_actions }
    }

    pub fn from_mlp(mlp: Mlp, head: QHead, num_actions: usize) -> Result<Self, NetError> {
        let ok = match head {
            QHead::PerAction => mlp.output_dim() == num_actions,
            QHead::ActionConditioned => mlp.output_dim() == 1 && mlp.input_dim() > num_actions,
        };
        if !ok || num_actions < 1 {
            return Err(NetError::ShapeMismatch(format!(
                "{head:?} head with {num_actions} actions over a {} -> {} network",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(Self { mlp, head, num_actions })
    }

    pub fn head(&self) -> QHead {
        self.head
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn observation_dim(&self) -> usize {
        match self.head {
            QHead::PerAction => self.mlp.input_dim(),
            QHead::ActionConditioned => self.mlp.input_dim() - self.num_actions,
        }
    }

    pub fn network(&self) -> &Mlp {
        &self.mlp
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// Frozen copy for bootstrap targets.
    pub fn snapshot(&self) -> Self {
        self.clone()
    }

    pub fn q_values(&self, observation: &[f64]) -> Result<Vec<f64>, NetError> {
        if observation.len() != self.observation_dim() {
            return Err(NetError::ShapeMismatch(format!(
                "observation {} vs {}",
                observation.len(),
                self.observation_dim()
            )));
        }
        let x = ArrayView2::from_shape((1, observation.len()), observation).unwrap();
        Ok(self.q_batch(x).row(0).to_vec())
    }

    fn expand(&self, states: ArrayView2<f64>) -> Array2<f64> {
        let (k, d, a) = (states.nrows(), states.ncols(), self.num_actions);
        let mut x = Array2::zeros((k * a, d + a));
        for i in 0..k {
            for act in 0..a {
                let row = i * a + act;
                x.slice_mut(s![row, ..d]).assign(&states.row(i));
                x[[row, d + act]] = 1.0;
            }
        }
        x
    }

    /// `k x num_actions` action values for `k` states.
    pub fn q_batch(&self, states: ArrayView2<f64>) -> Array2<f64> {
        self.forward(states).q
    }

    pub fn forward(&self, states: ArrayView2<f64>) -> QForward {
        assert_eq!(states.ncols(), self.observation_dim(), "observation width");
        match self.head {
            QHead::PerAction => {
                let cache = self.mlp.forward_batch(states);
                QForward { q: cache.output().clone(), cache }
            }
            QHead::ActionConditioned => {
                let cache = self.mlp.forward_batch(self.expand(states).view());
                let q = cache.output().clone().into_shape_with_order((states.nrows(), self.num_actions)).unwrap();
                QForward { q, cache }
            }
        }
    }

    /// Gradient of `sum(dq * Q)` for the states of `fwd`.
    pub fn backward(&self, fwd: &QForward, dq: ArrayView2<f64>) -> Gradients {
        assert_eq!(dq.dim(), fwd.q.dim(), "dq shape");
        match self.head {
            QHead::PerAction => self.mlp.backward(&fwd.cache, dq),
            QHead::ActionConditioned => {
                let flat = dq.to_owned().into_shape_with_order((dq.len(), 1)).unwrap();
                self.mlp.backward(&fwd.cache, flat.view())
            }
        }
    }
}
