use rand::Rng;

use crate::error::{Error, Result};
use crate::net::conv::{conv2d_backward_pre, conv2d_preactivation, LayerGradients};
use crate::net::init::{average_kernel, delta_kernel, small_random, SMALL_RANDOM_STD};
use crate::net::local::{local_backward_pre, local_preactivation};
use crate::net::{
    Activation, Gradients, Layer, LayerKind, LayerSpec, NetworkParams, ParamGrad, Projection,
    ShortcutSource,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Delta-initialized hidden convolutions and a depth-average head.
    DeltaInit,
    /// Same topology, small random weights, identity shortcuts every two layers.
    Resnet,
    /// Same topology as `DeltaInit` with small random weights.
    RandomInit,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" | "delta_init" => Ok(Variant::DeltaInit),
            "resnet" => Ok(Variant::Resnet),
            "random" | "random_init" => Ok(Variant::RandomInit),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant {other:?} (expected delta, resnet or random)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::DeltaInit => "delta",
            Variant::Resnet => "resnet",
            Variant::RandomInit => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    /// Total convolutions, including the averaging head.
    pub conv_layers: usize,
    /// Output channels of every hidden convolution.
    pub filters: usize,
    /// Locally connected layers after the convolutions.
    pub local_layers: usize,
    pub kernel: usize,
    pub variant: Variant,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            conv_layers: 4,
            filters: 8,
            local_layers: 1,
            kernel: 3,
            variant: Variant::DeltaInit,
        }
    }
}

/// Builds the layer stack for `arch` on an `(n, rows, cols)` input.
pub fn build_network<R: Rng + ?Sized>(
    arch: &Architecture,
    input_shape: (usize, usize, usize),
    noise_scale: f64,
    seed: u64,
    rng: &mut R,
) -> Result<NetworkParams> {
    let (n, rows, cols) = input_shape;
    let k = arch.kernel;
    if arch.conv_layers == 0 {
        return Err(Error::InvalidArgument(
            "need at least one convolution".into(),
        ));
    }
    if k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd, got {k}"
        )));
    }
    if n == 0 || arch.filters == 0 || !arch.filters.is_multiple_of(n) {
        return Err(Error::InitIncompatibility(format!(
            "filters ({}) must be a positive multiple of the member count ({n})",
            arch.filters
        )));
    }
    let random = arch.variant != Variant::DeltaInit;
    let mut layers = Vec::with_capacity(arch.conv_layers + arch.local_layers);

    let mut channels = n;
    for _ in 0..arch.conv_layers - 1 {
        let spec = LayerSpec {
            kind: LayerKind::Conv,
            in_channels: channels,
            out_channels: arch.filters,
            kernel: k,
            activation: Activation::Relu,
            shortcut: None,
        };
        let weights = if random {
            small_random(spec.weight_count(rows, cols), SMALL_RANDOM_STD, rng)
        } else {
            delta_kernel(channels, arch.filters, k, noise_scale, rng)?
        };
        layers.push(Layer {
            bias: vec![0.0; spec.bias_count(rows, cols)],
            spec,
            weights,
        });
        channels = arch.filters;
    }

    let head = LayerSpec {
        kind: LayerKind::Conv,
        in_channels: channels,
        out_channels: 1,
        kernel: k,
        activation: Activation::Identity,
        shortcut: None,
    };
    let weights = if random {
        small_random(head.weight_count(rows, cols), SMALL_RANDOM_STD, rng)
    } else {
        average_kernel(channels, k, noise_scale, rng)?
    };
    layers.push(Layer {
        bias: vec![0.0; head.bias_count(rows, cols)],
        spec: head,
        weights,
    });

    for j in 0..arch.local_layers {
        let spec = LayerSpec {
            kind: LayerKind::LocallyConnected,
            in_channels: 1,
            out_channels: 1,
            kernel: k,
            activation: if j + 1 == arch.local_layers {
                Activation::Identity
            } else {
                Activation::Relu
            },
            shortcut: None,
        };
        let weights = if random {
            small_random(spec.weight_count(rows, cols), SMALL_RANDOM_STD, rng)
        } else {
            let mut w = Vec::with_capacity(spec.weight_count(rows, cols));
            for _ in 0..rows * cols {
                w.extend(delta_kernel(1, 1, k, noise_scale, rng)?);
            }
            w
        };
        layers.push(Layer {
            bias: vec![0.0; spec.bias_count(rows, cols)],
            spec,
            weights,
        });
    }

    if arch.variant == Variant::Resnet {
        // Join after every second layer, and always at the output layer.
        let last = layers.len() - 1;
        let mut source = ShortcutSource::Input;
        for (i, layer) in layers.iter_mut().enumerate() {
            if i % 2 == 1 || i == last {
                layer.spec.shortcut = Some(source);
                source = ShortcutSource::Layer(i);
            }
        }
    }

    NetworkParams::new(input_shape, layers, seed)
}

/// Per-pixel mean over the channels of a stacked input.
pub fn ensemble_mean_tensor(input: &Tensor) -> Tensor {
    input.channel_mean()
}

/// Every layer's pre-activation and output from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn prediction(&self) -> &Tensor {
        self.outputs.last().expect("validated networks have layers")
    }
}

fn layer_preactivation(layer: &Layer, input: &Tensor) -> Result<Tensor> {
    let s = &layer.spec;
    match s.kind {
        LayerKind::Conv => {
            conv2d_preactivation(input, &layer.weights, &layer.bias, s.out_channels, s.kernel)
        }
        LayerKind::LocallyConnected => {
            local_preactivation(input, &layer.weights, &layer.bias, s.out_channels, s.kernel)
        }
    }
}

fn layer_backward(layer: &Layer, input: &Tensor, grad_pre: &Tensor) -> Result<LayerGradients> {
    match layer.spec.kind {
        LayerKind::Conv => conv2d_backward_pre(input, &layer.weights, layer.spec.kernel, grad_pre),
        LayerKind::LocallyConnected => {
            local_backward_pre(input, &layer.weights, layer.spec.kernel, grad_pre)
        }
    }
}

fn add_projected(dst: &mut Tensor, src: &Tensor) {
    let (dc, sc) = (dst.channels(), src.channels());
    match Projection::between(sc, dc).expect("validated shortcut") {
        Projection::Tile => {
            for o in 0..dc {
                for (d, s) in dst.channel_mut(o).iter_mut().zip(src.channel(o % sc)) {
                    *d += s;
                }
            }
        }
        Projection::Mean => {
            let inv = 1.0 / sc as f64;
            for c in 0..sc {
                for (d, s) in dst.channel_mut(0).iter_mut().zip(src.channel(c)) {
                    *d += s * inv;
                }
            }
        }
    }
}

/// Adjoint of [`add_projected`]: accumulates `P^T grad` into `dst`.
fn add_projected_adjoint(dst: &mut Tensor, grad: &Tensor) {
    let (sc, gc) = (dst.channels(), grad.channels());
    match Projection::between(sc, gc).expect("validated shortcut") {
        Projection::Tile => {
            for o in 0..gc {
                for (d, g) in dst.channel_mut(o % sc).iter_mut().zip(grad.channel(o)) {
                    *d += g;
                }
            }
        }
        Projection::Mean => {
            let inv = 1.0 / sc as f64;
            for c in 0..sc {
                for (d, g) in dst.channel_mut(c).iter_mut().zip(grad.channel(0)) {
                    *d += g * inv;
                }
            }
        }
    }
}

fn check_input(params: &NetworkParams, input: &Tensor) -> Result<()> {
    if input.shape() != params.input_shape {
        return Err(Error::Shape(format!(
            "input {:?} does not match network input {:?}",
            input.shape(),
            params.input_shape
        )));
    }
    Ok(())
}

pub fn forward_trace(params: &NetworkParams, input: &Tensor) -> Result<ForwardTrace> {
    check_input(params, input)?;
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut outputs: Vec<Tensor> = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate() {
        let x = if i == 0 { input } else { &outputs[i - 1] };
        let mut z = layer_preactivation(layer, x)?;
        match layer.spec.shortcut {
            Some(ShortcutSource::Input) => add_projected(&mut z, input),
            Some(ShortcutSource::Layer(j)) => add_projected(&mut z, &outputs[j]),
            None => {}
        }
        let mut h = z.clone();
        layer.spec.activation.apply(h.data_mut());
        pre.push(z);
        outputs.push(h);
    }
    Ok(ForwardTrace { pre, outputs })
}

/// Prediction (`1 × rows × cols`, normalized units) for one stacked input.
pub fn network_forward(params: &NetworkParams, input: &Tensor) -> Result<Tensor> {
    let mut trace = forward_trace(params, input)?;
    Ok(trace.outputs.pop().expect("validated networks have layers"))
}

/// Reverse-mode gradients of a scalar loss given `d loss / d prediction`.
pub fn network_backward(
    params: &NetworkParams,
    input: &Tensor,
    output_grad: &Tensor,
) -> Result<Gradients> {
    let trace = forward_trace(params, input)?;
    network_backward_with_trace(params, input, &trace, output_grad).map(|(g, _)| g)
}

/// As [`network_backward`], reusing a trace; also returns the input gradient.
pub fn network_backward_with_trace(
    params: &NetworkParams,
    input: &Tensor,
    trace: &ForwardTrace,
    output_grad: &Tensor,
) -> Result<(Gradients, Tensor)> {
    let last = params.layers.len() - 1;
    if output_grad.shape() != trace.outputs[last].shape() {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match prediction {:?}",
            output_grad.shape(),
            trace.outputs[last].shape()
        )));
    }
    let mut grad_out: Vec<Tensor> = trace
        .outputs
        .iter()
        .map(|t| Tensor::zeros(t.channels(), t.rows(), t.cols()))
        .collect();
    grad_out[last] = output_grad.clone();
    let (n, rows, cols) = params.input_shape;
    let mut grad_input = Tensor::zeros(n, rows, cols);
    let mut layers: Vec<ParamGrad> = Vec::with_capacity(params.layers.len());

    for i in (0..=last).rev() {
        let layer = &params.layers[i];
        let g_pre = layer.spec.activation.gate(&trace.outputs[i], &grad_out[i]);
        let x = if i == 0 { input } else { &trace.outputs[i - 1] };
        let lg = layer_backward(layer, x, &g_pre)?;
        if i == 0 {
            grad_input.add_assign(&lg.input);
        } else {
            grad_out[i - 1].add_assign(&lg.input);
        }
        match layer.spec.shortcut {
            Some(ShortcutSource::Input) => add_projected_adjoint(&mut grad_input, &g_pre),
            Some(ShortcutSource::Layer(j)) => add_projected_adjoint(&mut grad_out[j], &g_pre),
            None => {}
        }
        layers.push(ParamGrad {
            weights: lg.weights,
            bias: lg.bias,
        });
    }
    layers.reverse();
    Ok((Gradients { layers }, grad_input))
}
