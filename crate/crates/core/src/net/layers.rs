use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::kernels::DEFAULT_LEAKY_SLOPE;
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, Tensor};
use crate::weights::ModelWeights;

/// Weight initialization rule for one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±gain/sqrt(fan_in)`, zero bias.
    Uniform { gain: f64 },
    /// All zeros (weights and bias).
    Zero,
}

/// A named convolution layer; parameters are `<name>.weight` and `<name>.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub conv: ConvSpec,
    pub init: Init,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, conv: ConvSpec, init: Init) -> Self {
        LayerSpec {
            name: name.into(),
            conv,
            init,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

/// Default gain for layers followed by a leaky ReLU.
pub const LEAKY_GAIN: f64 = 1.7;
/// Gain of the convolutions inside residual blocks, which start close to identity.
pub const RESIDUAL_GAIN: f64 = 0.17;

/// Builds freshly initialized weights for `layers`, drawing in list order.
pub fn init_weights<T: Scalar, R: Rng + ?Sized>(layers: &[LayerSpec], rng: &mut R) -> Result<ModelWeights<T>> {
    let mut w = ModelWeights::new();
    for layer in layers {
        let shape = layer.conv.weight_shape();
        let weight = match layer.init {
            Init::Zero => Tensor::zeros(&shape),
            Init::Uniform { gain } => {
                let fan_in = (layer.conv.in_channels * layer.conv.taps()) as f64;
                let bound = gain / fan_in.sqrt();
                Tensor::uniform(&shape, -bound, bound, rng)
            }
        };
        w.insert(layer.weight_name(), weight)?;
        if layer.conv.has_bias {
            w.insert(layer.bias_name(), Tensor::zeros(&[layer.conv.out_channels]))?;
        }
    }
    Ok(w)
}

/// Graph plus weights: everything a forward pass needs to run layers.
pub struct Ctx<'a, T: Scalar> {
    pub graph: &'a Graph<T>,
    pub weights: &'a ModelWeights<T>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(graph: &'a Graph<T>, weights: &'a ModelWeights<T>) -> Self {
        Ctx { graph, weights }
    }

    pub fn param(&self, name: &str) -> Result<Var<T>> {
        Ok(self.graph.leaf(name, self.weights.get_rc(name)?, true))
    }

    pub fn conv(&self, name: &str, x: &Var<T>, spec: &ConvSpec) -> Result<Var<T>> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = if spec.has_bias {
            Some(self.param(&format!("{name}.bias"))?)
        } else {
            None
        };
        self.graph.conv2d(x, &w, b.as_ref(), spec)
    }

    pub fn lrelu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.graph.leaky_relu(x, T::of(DEFAULT_LEAKY_SLOPE))
    }

    /// `x + conv2(relu(conv1(x)))`.
    pub fn residual_block(&self, name: &str, x: &Var<T>, channels: usize) -> Result<Var<T>> {
        let spec = ConvSpec::same(channels, channels, 3);
        let h = self.conv(&format!("{name}.conv1"), x, &spec)?;
        let h = self.graph.relu(&h)?;
        let h = self.conv(&format!("{name}.conv2"), &h, &spec)?;
        self.graph.add(x, &h)
    }

    /// Input convolution to `channels`, leaky ReLU, then `blocks` residual blocks.
    pub fn residual_stack(
        &self,
        name: &str,
        x: &Var<T>,
        in_channels: usize,
        channels: usize,
        blocks: usize,
    ) -> Result<Var<T>> {
        let h = self.conv(&format!("{name}.input"), x, &ConvSpec::same(in_channels, channels, 3))?;
        let mut h = self.lrelu(&h)?;
        for k in 0..blocks {
            h = self.residual_block(&format!("{name}.block{k}"), &h, channels)?;
        }
        Ok(h)
    }
}

/// Layer list matching [`Ctx::residual_stack`].
pub fn residual_stack_layers(name: &str, in_channels: usize, channels: usize, blocks: usize) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::new(
        format!("{name}.input"),
        ConvSpec::same(in_channels, channels, 3),
        Init::Uniform { gain: LEAKY_GAIN },
    )];
    for k in 0..blocks {
        for conv in ["conv1", "conv2"] {
            layers.push(LayerSpec::new(
                format!("{name}.block{k}.{conv}"),
                ConvSpec::same(channels, channels, 3),
                Init::Uniform { gain: RESIDUAL_GAIN },
            ));
        }
    }
    layers
}
