//! Same-padded, stride-1 2-D cross-correlation with shared weights.

use crate::error::{Error, Result};
use crate::net::Activation;
use crate::tensor::Tensor;

/// Gradients of one layer with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub input: Tensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn check_kernel(kernel: usize) -> Result<()> {
    if kernel.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "kernel size must be odd, got {kernel}"
        )));
    }
    Ok(())
}

/// Output index range `[lo, hi)` for which `i + offset` stays inside `[0, len)`.
#[inline]
pub(crate) fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

fn check_shapes(
    input: &Tensor,
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    kernel: usize,
) -> Result<()> {
    check_kernel(kernel)?;
    let expected = out_channels * input.channels() * kernel * kernel;
    if weights.len() != expected {
        return Err(Error::Shape(format!(
            "conv {}->{out_channels} k={kernel} needs {expected} weights, got {}",
            input.channels(),
            weights.len()
        )));
    }
    if bias.len() != out_channels {
        return Err(Error::Shape(format!(
            "conv needs {out_channels} biases, got {}",
            bias.len()
        )));
    }
    Ok(())
}

/// Pre-activation `W * x + b`.
pub fn conv2d_preactivation(
    input: &Tensor,
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    kernel: usize,
) -> Result<Tensor> {
    check_shapes(input, weights, bias, out_channels, kernel)?;
    let (in_ch, rows, cols) = input.shape();
    let r = (kernel / 2) as isize;
    let kk = kernel * kernel;
    let mut out = Tensor::zeros(out_channels, rows, cols);
    for o in 0..out_channels {
        let plane = out.channel_mut(o);
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..in_ch {
            let src = input.channel(c);
            let taps = &weights[(o * in_ch + c) * kk..(o * in_ch + c + 1) * kk];
            for ky in 0..kernel {
                let dy = ky as isize - r;
                let (y0, y1) = valid_range(rows, dy);
                for kx in 0..kernel {
                    let dx = kx as isize - r;
                    let (x0, x1) = valid_range(cols, dx);
                    if x0 == x1 {
                        continue;
                    }
                    let w = taps[ky * kernel + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut plane[y * cols + x0..y * cols + x1];
                        let s0 = (sy * cols) as isize + x0 as isize + dx;
                        let s = &src[s0 as usize..s0 as usize + (x1 - x0)];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += w * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_forward(
    input: &Tensor,
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    kernel: usize,
    activation: Activation,
) -> Result<Tensor> {
    let mut out = conv2d_preactivation(input, weights, bias, out_channels, kernel)?;
    activation.apply(out.data_mut());
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`].
///
/// `output` is the forward result; ReLU gradients are gated on `output > 0`,
/// which is the pre-activation sign (zero gets zero gradient).
pub fn conv2d_backward(
    input: &Tensor,
    weights: &[f64],
    kernel: usize,
    activation: Activation,
    output: &Tensor,
    upstream: &Tensor,
) -> Result<LayerGradients> {
    if output.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.shape(),
            output.shape()
        )));
    }
    let grad_pre = activation.gate(output, upstream);
    conv2d_backward_pre(input, weights, kernel, &grad_pre)
}

/// Backward pass given the gradient with respect to the pre-activation.
pub fn conv2d_backward_pre(
    input: &Tensor,
    weights: &[f64],
    kernel: usize,
    grad_pre: &Tensor,
) -> Result<LayerGradients> {
    let out_channels = grad_pre.channels();
    let (in_ch, rows, cols) = input.shape();
    if !input.same_spatial(grad_pre) {
        return Err(Error::Shape(format!(
            "gradient {:?} and input {:?} disagree spatially",
            grad_pre.shape(),
            input.shape()
        )));
    }
    check_shapes(
        input,
        weights,
        &vec![0.0; out_channels],
        out_channels,
        kernel,
    )?;
    let r = (kernel / 2) as isize;
    let kk = kernel * kernel;
    let mut grad_in = Tensor::zeros(in_ch, rows, cols);
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = vec![0.0; out_channels];
    for o in 0..out_channels {
        let g = grad_pre.channel(o);
        grad_b[o] = g.iter().sum();
        for c in 0..in_ch {
            let src = input.channel(c);
            let base = (o * in_ch + c) * kk;
            for ky in 0..kernel {
                let dy = ky as isize - r;
                let (y0, y1) = valid_range(rows, dy);
                for kx in 0..kernel {
                    let dx = kx as isize - r;
                    let (x0, x1) = valid_range(cols, dx);
                    if x0 == x1 {
                        continue;
                    }
                    let w = weights[base + ky * kernel + kx];
                    let mut acc = 0.0;
                    let gin = grad_in.channel_mut(c);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &g[y * cols + x0..y * cols + x1];
                        let s0 = ((sy * cols) as isize + x0 as isize + dx) as usize;
                        let srow = &src[s0..s0 + (x1 - x0)];
                        for (gv, sv) in grow.iter().zip(srow) {
                            acc += gv * sv;
                        }
                        for (gi, gv) in gin[s0..s0 + (x1 - x0)].iter_mut().zip(grow) {
                            *gi += w * gv;
                        }
                    }
                    grad_w[base + ky * kernel + kx] = acc;
                }
            }
        }
    }
    Ok(LayerGradients {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}
