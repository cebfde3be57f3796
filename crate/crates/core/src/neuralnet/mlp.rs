use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::NetError;

/// Affine layer `z = W x + b`, `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub train_weights: bool,
    pub train_bias: bool,
}

impl Dense {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self, NetError> {
        if weights.nrows() != bias.len() {
            return Err(NetError::ShapeMismatch(format!(
                "weights {:?} vs bias {}",
                weights.dim(),
                bias.len()
            )));
        }
        Ok(Self { weights, bias, train_weights: true, train_bias: true })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self::new(Array2::zeros((outputs, inputs)), Array1::zeros(outputs)).unwrap()
    }

    /// Weights drawn from a normal with std `1/sqrt(fan_in)`, redrawn outside
    /// two standard deviations; zero bias.
    pub fn truncated_normal(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let std = 1.0 / (inputs as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * std {
                break x;
            }
        });
        Self::new(weights, Array1::zeros(outputs)).unwrap()
    }

    pub fn frozen(mut self) -> Self {
        self.train_weights = false;
        self.train_bias = false;
        self
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Rectifier hidden layers, identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer gradients in the shape of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer; the last one is the network output.
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::ShapeMismatch("no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(NetError::ShapeMismatch(format!(
                    "layer {i} emits {} but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `sizes = [input, hidden..., output]`.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::truncated_normal(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::ShapeMismatch(format!("input {} vs {}", input.len(), self.input_dim())));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward_batch(x).output().row(0).to_vec())
    }

    /// Rows of `batch` are independent inputs.
    pub fn forward_batch(&self, batch: ArrayView2<f64>) -> ForwardCache {
        assert_eq!(batch.ncols(), self.input_dim(), "input width");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.bias;
            inputs.push(current);
            current = if i + 1 < self.layers.len() { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }
        ForwardCache { inputs, pre }
    }

    /// Gradient of `sum(output_grad * output)` with respect to every
    /// parameter. The rectifier derivative at 0 is taken as 0.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Gradients {
        assert_eq!(output_grad.dim(), cache.output().dim(), "output gradient shape");
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = output_grad.to_owned();
        for i in (0..self.layers.len()).rev() {
            let dw = dz.t().dot(&cache.inputs[i]);
            let db = dz.sum_axis(Axis(0));
            if i > 0 {
                let mut da = dz.dot(&self.layers[i].weights);
                Zip::from(&mut da).and(&cache.pre[i - 1]).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz = da;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    pub fn backward_single(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients, NetError> {
        if input.len() != self.input_dim() || output_grad.len() != self.output_dim() {
            return Err(NetError::ShapeMismatch("input or output gradient width".into()));
        }
        let cache = self.forward_batch(ArrayView2::from_shape((1, input.len()), input).unwrap());
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).unwrap();
        Ok(self.backward(&cache, g))
    }

    /// Target-network copy.
    pub fn snapshot(&self) -> Self {
        self.clone()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params());
        let mut it = values.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
    }

    pub fn max_abs_param(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, &p| if p.is_nan() { f64::NAN } else { m.max(p.abs()) })
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|p| p.is_finite()))
    }
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        let layers = mlp
            .layers()
            .iter()
            .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
            .collect();
        Self { layers }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.iter().chain(b.iter()).all(|g| g.is_finite()))
    }

    pub fn matches(&self, mlp: &Mlp) -> bool {
        self.layers.len() == mlp.layers().len()
            && self
                .layers
                .iter()
                .zip(mlp.layers())
                .all(|((w, b), l)| w.dim() == l.weights.dim() && b.len() == l.bias.len())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.scaled_add(scale, ow);
            b.scaled_add(scale, ob);
        }
    }
}
