//! Dense layers and small multi-layer perceptrons with hand-written backward
//! passes. Hidden layers always use `tanh`; the output activation is chosen
//! per network.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::rng::Rng;
use super::Tensors;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    fn apply(self, a: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Tanh => a.mapv_inplace(f64::tanh),
            Activation::Sigmoid => a.mapv_inplace(sigmoid),
            Activation::Softmax => {
                for mut row in a.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    row.mapv_inplace(|x| (x - max).exp());
                    let s = row.sum();
                    row.mapv_inplace(|x| x / s);
                }
            }
        }
    }

    /// Gradient w.r.t. the pre-activation given the post-activation `y` and
    /// the upstream gradient `dy`.
    fn backward(self, y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Linear => dy.clone(),
            Activation::Tanh => dy * &y.mapv(|t| 1.0 - t * t),
            Activation::Sigmoid => dy * &y.mapv(|s| s * (1.0 - s)),
            Activation::Softmax => {
                let mut out = dy * y;
                for (mut o, yr) in out.rows_mut().into_iter().zip(y.rows()) {
                    let dot = o.sum();
                    o.zip_mut_with(&yr, |v, &p| *v -= p * dot);
                }
                out
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Affine map `y = x Wᵀ + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: glorot_uniform(outputs, inputs, inputs, outputs, rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn affine(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut w = Array2::zeros((rows, cols));
    w.iter_mut()
        .for_each(|v| *v = rng.uniform_range(-limit, limit));
    w
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, output: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::config("MLP layer widths must be positive"));
        }
        Ok(Self { layer_dims, output })
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<DenseLayer>,
    generation: u64,
}

/// Activations retained by [`Mlp::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    generation: u64,
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("non-empty cache")
    }
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Self {
        let layers = spec
            .layer_dims
            .windows(2)
            .map(|w| DenseLayer::glorot(w[0], w[1], rng))
            .collect();
        Self {
            spec,
            layers,
            generation: 0,
        }
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() != spec.layer_dims.len() - 1 {
            return Err(Error::dim(format!(
                "expected {} layers, got {}",
                spec.layer_dims.len() - 1,
                layers.len()
            )));
        }
        for (i, (l, w)) in layers.iter().zip(spec.layer_dims.windows(2)).enumerate() {
            if l.inputs() != w[0] || l.outputs() != w[1] || l.bias.len() != w[1] {
                return Err(Error::dim(format!(
                    "layer {i}: expected {}->{}, got {}->{}",
                    w[0],
                    w[1],
                    l.inputs(),
                    l.outputs()
                )));
            }
        }
        Ok(Self {
            spec,
            layers,
            generation: 0,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access invalidates every outstanding cache.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.layer_dims.last().unwrap()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.spec.output
        } else {
            Activation::Tanh
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = layer.affine(cur.view());
            self.activation(i).apply(&mut a);
            inputs.push(cur);
            cur = a;
            outputs.push(cur.clone());
        }
        Ok((
            cur,
            MlpCache {
                generation: self.generation,
                inputs,
                outputs,
            },
        ))
    }

    /// Forward pass without retaining activations.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut cur = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.affine(cur.view());
            self.activation(i).apply(&mut cur);
        }
        Ok(cur)
    }

    /// Returns `dL/dx` and per-layer gradients for upstream gradient `dy`.
    pub fn backward(
        &self,
        cache: &MlpCache,
        dy: &Array2<f64>,
    ) -> Result<(Array2<f64>, Vec<DenseLayer>)> {
        if cache.generation != self.generation || cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract(
                "MLP cache does not belong to the current parameters".into(),
            ));
        }
        if dy.dim() != cache.output().dim() {
            return Err(Error::dim(format!(
                "upstream gradient {:?} does not match output {:?}",
                dy.dim(),
                cache.output().dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let dz = self.activation(i).backward(&cache.outputs[i], &delta);
            let weight = dz.t().dot(&cache.inputs[i]);
            let bias = dz.sum_axis(Axis(0));
            delta = dz.dot(&self.layers[i].weight);
            grads.push(DenseLayer { weight, bias });
        }
        grads.reverse();
        Ok((delta, grads))
    }

    pub fn weight_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    pub fn zero_grads(&self) -> Vec<DenseLayer> {
        self.layers
            .iter()
            .map(|l| DenseLayer::zeros(l.inputs(), l.outputs()))
            .collect()
    }
}

impl Tensors for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.layers.tensors_mut()
    }
}

impl Tensors for Vec<DenseLayer> {
    fn tensors(&self) -> Vec<&[f64]> {
        self.iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// Adds `(λ/2)·‖W‖²`'s ascent gradient `-scale·W` into each layer gradient.
pub(crate) fn add_weight_decay(grads: &mut [DenseLayer], layers: &[DenseLayer], scale: f64) {
    for (g, l) in grads.iter_mut().zip(layers) {
        g.weight.scaled_add(-scale, &l.weight);
    }
}
