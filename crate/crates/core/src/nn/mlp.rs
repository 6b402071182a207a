use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Tanh,
    Sigmoid,
}

impl HiddenActivation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Self::Relu),
            "tanh" => Some(Self::Tanh),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Self::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Self::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Derivative expressed in terms of the activation output.
    fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Self::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - out * out,
        }
    }
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Self::Identity),
            "tanh" => Some(Self::Tanh),
            "sigmoid" => Some(Self::Sigmoid),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Self::Identity => {}
            Self::Tanh => z.mapv_inplace(f64::tanh),
            Self::Sigmoid => z.mapv_inplace(sigmoid),
        }
    }

    fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Tanh => 1.0 - out * out,
            Self::Sigmoid => out * (1.0 - out),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One dense layer. `weight` has shape `(in_dim, out_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Dense feed-forward network with a fixed per-feature input
/// standardization `(x - shift) / scale` ahead of the first layer.
///
/// The standardization is not trained; callers set it from statistics of
/// the inputs they intend to feed (see [`MlpModel::set_input_normalization`]).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
    hidden: HiddenActivation,
    output: OutputActivation,
    input_shift: Array1<f64>,
    input_scale: Array1<f64>,
}

/// Per-layer gradients, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Activations recorded during a batched forward pass.
pub struct ForwardTrace {
    /// Input to each layer (post-standardization for layer 0).
    inputs: Vec<Array2<f64>>,
    /// Final pre-activation.
    logits: Array2<f64>,
    /// Final output after the output activation.
    pub output: Array2<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }
}

impl MlpModel {
    /// Random initialization: each weight and bias uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(
        dims: &[usize],
        hidden: HiddenActivation,
        output: OutputActivation,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        rng.random_range(-bound..=bound)
                    }),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Ok(Self::assemble(dims[0], layers, hidden, output))
    }

    /// All weights and biases zero.
    pub fn zeros(
        dims: &[usize],
        hidden: HiddenActivation,
        output: OutputActivation,
    ) -> Result<Self> {
        Self::validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self::assemble(dims[0], layers, hidden, output))
    }

    /// Assemble a model from explicit layers, checking shape compatibility
    /// and finiteness.
    pub fn from_layers(
        layers: Vec<Dense>,
        hidden: HiddenActivation,
        output: OutputActivation,
    ) -> Result<Self> {
        let first = layers.first().ok_or(Error::EmptyInput("layers"))?;
        let in_dim = first.weight.nrows();
        let mut prev = in_dim;
        for l in &layers {
            check_len("layer input width", prev, l.weight.nrows())?;
            check_len("layer bias width", l.weight.ncols(), l.bias.len())?;
            if l.weight.ncols() == 0 {
                return Err(Error::InvalidConfig("layer width must be positive".into()));
            }
            prev = l.weight.ncols();
        }
        let model = Self::assemble(in_dim, layers, hidden, output);
        if !model.is_finite() {
            return Err(Error::Numeric("non-finite weight".into()));
        }
        Ok(model)
    }

    fn assemble(
        in_dim: usize,
        layers: Vec<Dense>,
        hidden: HiddenActivation,
        output: OutputActivation,
    ) -> Self {
        Self {
            layers,
            hidden,
            output,
            input_shift: Array1::zeros(in_dim),
            input_scale: Array1::ones(in_dim),
        }
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "a model needs at least input and output dimensions".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(
                "layer dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.ncols()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.ncols()))
            .collect()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn input_shift(&self) -> ArrayView1<'_, f64> {
        self.input_shift.view()
    }

    pub fn input_scale(&self) -> ArrayView1<'_, f64> {
        self.input_scale.view()
    }

    /// Set the fixed input standardization. Every scale must be finite and
    /// non-zero.
    pub fn set_input_normalization(&mut self, shift: &[f64], scale: &[f64]) -> Result<()> {
        check_len("input shift", self.input_dim(), shift.len())?;
        check_len("input scale", self.input_dim(), scale.len())?;
        if scale.iter().any(|s| *s == 0.0 || !s.is_finite()) || shift.iter().any(|s| !s.is_finite())
        {
            return Err(Error::Numeric(
                "input normalization must be finite with non-zero scale".into(),
            ));
        }
        self.input_shift = Array1::from(shift.to_vec());
        self.input_scale = Array1::from(scale.to_vec());
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("model input", self.input_dim(), input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Batched forward pass; rows are samples.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.trace(x)?.output)
    }

    /// Batched pre-activations of the output layer.
    pub fn logits_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.trace(x)?.logits)
    }

    /// Forward pass that records what the backward pass needs.
    pub fn trace(&self, x: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        check_len("model input", self.input_dim(), x.ncols())?;
        let mut h = (&x - &self.input_shift) / &self.input_scale;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            inputs.push(h);
            if i < last {
                self.hidden.apply(&mut z);
                h = z;
            } else {
                let logits = z.clone();
                self.output.apply(&mut z);
                return Ok(ForwardTrace {
                    inputs,
                    logits,
                    output: z,
                });
            }
        }
        unreachable!("a model has at least one layer")
    }

    /// Backpropagate a gradient taken w.r.t. the model output.
    pub fn backward_from_output(&self, trace: &ForwardTrace, d_output: &Array2<f64>) -> Gradients {
        let out_act = self.output;
        let mut d = d_output.clone();
        d.zip_mut_with(&trace.output, |g, &o| *g *= out_act.grad_from_output(o));
        self.backward_from_logits(trace, d)
    }

    /// Backpropagate a gradient taken w.r.t. the output pre-activation.
    pub fn backward_from_logits(&self, trace: &ForwardTrace, d_logits: Array2<f64>) -> Gradients {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_logits;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            let d_weight = input.t().dot(&d);
            let d_bias = d.sum_axis(Axis(0));
            if i > 0 {
                let mut d_in = d.dot(&layer.weight.t());
                let act = self.hidden;
                d_in.zip_mut_with(input, |g, &o| *g *= act.grad_from_output(o));
                d = d_in;
            }
            grads.push(Dense {
                weight: d_weight,
                bias: d_bias,
            });
        }
        grads.reverse();
        Gradients { layers: grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    #[test]
    fn zero_weights_tanh_gives_zero() {
        let m =
            MlpModel::zeros(&[3, 8, 2], HiddenActivation::Relu, OutputActivation::Tanh).unwrap();
        assert_eq!(m.forward(&[0.4, -2.0, 9.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let m = MlpModel::from_layers(
            vec![Dense {
                weight: Array2::eye(2),
                bias: Array1::zeros(2),
            }],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        assert_eq!(m.forward(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn hand_evaluated_relu_network() {
        // relu([1, -1]) = [1, 0]; 2*1 + 3*0 + 0.5 = 2.5
        let m = MlpModel::from_layers(
            vec![
                Dense {
                    weight: array![[1.0, -1.0]],
                    bias: array![0.0, 0.0],
                },
                Dense {
                    weight: array![[2.0], [3.0]],
                    bias: array![0.5],
                },
            ],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        assert_eq!(m.forward(&[1.0]).unwrap(), vec![2.5]);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let m = MlpModel::zeros(&[3, 2], HiddenActivation::Relu, OutputActivation::Tanh).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn incompatible_layers_rejected() {
        let r = MlpModel::from_layers(
            vec![
                Dense {
                    weight: Array2::zeros((2, 3)),
                    bias: Array1::zeros(3),
                },
                Dense {
                    weight: Array2::zeros((4, 1)),
                    bias: Array1::zeros(1),
                },
            ],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        );
        assert!(r.is_err());
    }

    #[test]
    fn sigmoid_of_logits() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) - 0.952_574_126_822_433_4).abs() < 1e-15);
        assert!((sigmoid(-3.0) - 0.047_425_873_177_566_78).abs() < 1e-15);
    }

    #[test]
    fn normalization_is_applied_first() {
        let mut m = MlpModel::from_layers(
            vec![Dense {
                weight: Array2::eye(2),
                bias: Array1::zeros(2),
            }],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        m.set_input_normalization(&[1.0, -2.0], &[2.0, 4.0])
            .unwrap();
        assert_eq!(m.forward(&[3.0, 2.0]).unwrap(), vec![1.0, 1.0]);
        assert!(m.set_input_normalization(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = MlpModel::new(
            &[16, 4],
            HiddenActivation::Relu,
            OutputActivation::Tanh,
            &mut rng_from_seed(0),
        )
        .unwrap();
        assert!(m.layers()[0].weight.iter().all(|w| w.abs() <= 0.25));
    }
}
