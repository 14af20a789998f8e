//! Convolutional / locally connected downscaling network.

pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod local;
pub mod network;

pub use conv::{conv2d_backward, conv2d_forward, LayerGradients};
pub use init::{average_kernel, delta_kernel};
pub use local::{local_backward, local_forward};
pub use network::{
    build_network, ensemble_mean_tensor, network_backward, network_forward, Architecture,
    ForwardTrace, Variant,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    LocallyConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(self, values: &mut [f64]) {
        if self == Activation::Relu {
            values.iter_mut().for_each(|v| {
                if !(*v > 0.0) {
                    *v = 0.0
                }
            });
        }
    }

    /// Upstream gradient masked by the activation derivative, evaluated from
    /// the activated output.
    pub fn gate(self, output: &Tensor, upstream: &Tensor) -> Tensor {
        let mut g = upstream.clone();
        if self == Activation::Relu {
            for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
                if !(o > 0.0) {
                    *gv = 0.0;
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    DeltaIdentity,
    DepthAverage,
    SmallRandom,
}

/// Where a layer's identity shortcut is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortcutSource {
    Input,
    Layer(usize),
}

/// Structural description of a layer (everything except its parameters).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub shortcut: Option<ShortcutSource>,
}

impl LayerSpec {
    pub fn weight_count(&self, rows: usize, cols: usize) -> usize {
        let per_kernel = self.out_channels * self.in_channels * self.kernel * self.kernel;
        match self.kind {
            LayerKind::Conv => per_kernel,
            LayerKind::LocallyConnected => per_kernel * rows * cols,
        }
    }

    pub fn bias_count(&self, rows: usize, cols: usize) -> usize {
        match self.kind {
            LayerKind::Conv => self.out_channels,
            LayerKind::LocallyConnected => self.out_channels * rows * cols,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter-free channel mapping used by shortcuts: tiling when the
/// destination is a multiple of the source, depth mean into one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Projection {
    Tile,
    Mean,
}

impl Projection {
    pub(crate) fn between(src: usize, dst: usize) -> Option<Projection> {
        if src == 0 || dst == 0 {
            None
        } else if dst.is_multiple_of(src) {
            Some(Projection::Tile)
        } else if dst == 1 {
            Some(Projection::Mean)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// `(channels, rows, cols)` of the stacked input.
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl NetworkParams {
    /// Assembles and validates a network.
    pub fn new(input_shape: (usize, usize, usize), layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let params = NetworkParams {
            input_shape,
            layers,
            seed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, rows, cols) = self.input_shape;
        if n == 0 || rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        let mut channels = n;
        for (i, layer) in self.layers.iter().enumerate() {
            let s = &layer.spec;
            if s.kernel % 2 == 0 {
                return Err(Error::Shape(format!(
                    "layer {i}: kernel {} is not odd",
                    s.kernel
                )));
            }
            if s.in_channels != channels {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} input channels, previous layer produces {channels}",
                    s.in_channels
                )));
            }
            if layer.weights.len() != s.weight_count(rows, cols) {
                return Err(Error::Shape(format!(
                    "layer {i}: {} weights, expected {}",
                    layer.weights.len(),
                    s.weight_count(rows, cols)
                )));
            }
            if layer.bias.len() != s.bias_count(rows, cols) {
                return Err(Error::Shape(format!(
                    "layer {i}: {} biases, expected {}",
                    layer.bias.len(),
                    s.bias_count(rows, cols)
                )));
            }
            if let Some(src) = s.shortcut {
                let src_channels = match src {
                    ShortcutSource::Input => n,
                    ShortcutSource::Layer(j) if j < i => self.layers[j].spec.out_channels,
                    ShortcutSource::Layer(j) => {
                        return Err(Error::Shape(format!(
                            "layer {i}: shortcut source {j} is not an earlier layer"
                        )))
                    }
                };
                if Projection::between(src_channels, s.out_channels).is_none() {
                    return Err(Error::Shape(format!(
                        "layer {i}: cannot map {src_channels} shortcut channels onto {}",
                        s.out_channels
                    )));
                }
            }
            channels = s.out_channels;
        }
        if channels != 1 {
            return Err(Error::Shape(format!(
                "final layer must output 1 channel, got {channels}"
            )));
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

/// Gradients with the same layout as a [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ParamGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| ParamGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
