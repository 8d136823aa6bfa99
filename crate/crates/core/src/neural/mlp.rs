use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine layer with an `outputs × inputs` weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// Multilayer perceptron: rectifier on hidden layers, identity on the output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRecord", try_from = "MlpRecord")]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Inputs and pre-activations of every layer from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

fn relu_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(|x| x.max(0.0));
}

impl Mlp {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = Self::init_limit(fan_in, fan_out);
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..=limit));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn init_limit(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Layer::outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weight then bias of each layer, as flat row-major slices.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// Forward pass over one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Contract(e.to_string()))?;
        let (out, cache) = self.forward_batch(x)?;
        Ok((out.into_raw_vec_and_offset().0, cache))
    }

    /// Forward pass over a batch (one input per row), keeping what backprop needs.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(input.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = x.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(x);
            let mut a = z.clone();
            if i < last {
                relu_inplace(&mut a);
            }
            pre_activations.push(z);
            x = a;
        }
        Ok((
            x,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without a cache.
    pub fn predict_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let last = self.layers.len() - 1;
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            x = x.dot(&layer.weight.t()) + &layer.bias;
            if i < last {
                relu_inplace(&mut x);
            }
        }
        Ok(x)
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::Contract(format!(
                "input width {width} does not match network input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Reverse-mode gradients for `cache` given the gradient of the loss w.r.t. the outputs.
    ///
    /// Returns gradients shaped like `self` (summed over the batch) and the input gradient.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: ArrayView2<f64>) -> Result<(Mlp, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract("forward cache belongs to a different network".into()));
        }
        let expected = (cache.batch_size(), self.output_dim());
        if output_gradient.dim() != expected {
            return Err(Error::Contract(format!(
                "output gradient shape {:?} does not match {expected:?}",
                output_gradient.dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_gradient.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i < last {
                ndarray::Zip::from(&mut upstream)
                    .and(&cache.pre_activations[i])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            let weight = upstream.t().dot(&cache.inputs[i]);
            let bias = upstream.sum_axis(Axis(0));
            let next = upstream.dot(&layer.weight);
            grads.push(Layer { weight, bias });
            upstream = next;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, upstream))
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpRecord {
    layer_specs: Vec<usize>,
    layers: Vec<LayerRecord>,
}

impl From<Mlp> for MlpRecord {
    fn from(mlp: Mlp) -> Self {
        MlpRecord {
            layer_specs: mlp.sizes(),
            layers: mlp
                .layers
                .into_iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    weight: l.weight.as_standard_layout().iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = String;

    fn try_from(record: MlpRecord) -> std::result::Result<Self, String> {
        if record.layers.is_empty() || record.layer_specs.len() != record.layers.len() + 1 {
            return Err("layer_specs must list one more width than there are layers".into());
        }
        let mut layers = Vec::with_capacity(record.layers.len());
        for (i, l) in record.layers.into_iter().enumerate() {
            if l.inputs != record.layer_specs[i] || l.outputs != record.layer_specs[i + 1] {
                return Err(format!("layer {i} shape disagrees with layer_specs"));
            }
            if l.bias.len() != l.outputs {
                return Err(format!("layer {i} bias has {} entries, expected {}", l.bias.len(), l.outputs));
            }
            let weight = Array2::from_shape_vec((l.outputs, l.inputs), l.weight)
                .map_err(|e| format!("layer {i} weight: {e}"))?;
            layers.push(Layer {
                weight,
                bias: Array1::from(l.bias),
            });
        }
        Ok(Mlp { layers })
    }
}
