//! Locally connected layers: convolution geometry, one kernel per output pixel.
//!
//! Weights are laid out `[pixel][out][in][ky][kx]`, biases `[pixel][out]`,
//! with pixels in row-major order.

use crate::error::{Error, Result};
use crate::net::conv::{check_kernel, LayerGradients};
use crate::net::Activation;
use crate::tensor::Tensor;

pub fn local_weight_count(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    rows: usize,
    cols: usize,
) -> usize {
    rows * cols * out_ch * in_ch * kernel * kernel
}

fn check_shapes(
    input: &Tensor,
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    kernel: usize,
) -> Result<()> {
    check_kernel(kernel)?;
    let (in_ch, rows, cols) = input.shape();
    let expected = local_weight_count(in_ch, out_channels, kernel, rows, cols);
    if weights.len() != expected {
        return Err(Error::Shape(format!(
            "locally connected {in_ch}->{out_channels} k={kernel} on {rows}x{cols} needs {expected} weights, got {}",
            weights.len()
        )));
    }
    if bias.len() != rows * cols * out_channels {
        return Err(Error::Shape(format!(
            "locally connected layer needs {} biases, got {}",
            rows * cols * out_channels,
            bias.len()
        )));
    }
    Ok(())
}

pub fn local_preactivation(
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
    for y in 0..rows {
        for x in 0..cols {
            let pix = y * cols + x;
            for o in 0..out_channels {
                let mut acc = bias[pix * out_channels + o];
                for c in 0..in_ch {
                    let base = ((pix * out_channels + o) * in_ch + c) * kk;
                    for ky in 0..kernel {
                        let sy = y as isize + ky as isize - r;
                        if sy < 0 || sy >= rows as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let sx = x as isize + kx as isize - r;
                            if sx < 0 || sx >= cols as isize {
                                continue;
                            }
                            acc += weights[base + ky * kernel + kx]
                                * input.get(c, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, x, acc);
            }
        }
    }
    Ok(out)
}

pub fn local_forward(
    input: &Tensor,
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    kernel: usize,
    activation: Activation,
) -> Result<Tensor> {
    let mut out = local_preactivation(input, weights, bias, out_channels, kernel)?;
    activation.apply(out.data_mut());
    Ok(out)
}

pub fn local_backward(
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
    local_backward_pre(input, weights, kernel, &grad_pre)
}

pub fn local_backward_pre(
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
    let bias_len = rows * cols * out_channels;
    check_shapes(input, weights, &vec![0.0; bias_len], out_channels, kernel)?;
    let r = (kernel / 2) as isize;
    let kk = kernel * kernel;
    let mut grad_in = Tensor::zeros(in_ch, rows, cols);
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = vec![0.0; bias_len];
    for y in 0..rows {
        for x in 0..cols {
            let pix = y * cols + x;
            for o in 0..out_channels {
                let g = grad_pre.get(o, y, x);
                grad_b[pix * out_channels + o] = g;
                if g == 0.0 {
                    continue;
                }
                for c in 0..in_ch {
                    let base = ((pix * out_channels + o) * in_ch + c) * kk;
                    for ky in 0..kernel {
                        let sy = y as isize + ky as isize - r;
                        if sy < 0 || sy >= rows as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let sx = x as isize + kx as isize - r;
                            if sx < 0 || sx >= cols as isize {
                                continue;
                            }
                            let (sy, sx) = (sy as usize, sx as usize);
                            let t = base + ky * kernel + kx;
                            grad_w[t] = g * input.get(c, sy, sx);
                            let gi = grad_in.get(c, sy, sx) + weights[t] * g;
                            grad_in.set(c, sy, sx, gi);
                        }
                    }
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_everywhere_is_identity() {
        let (rows, cols) = (4, 3);
        let input = Tensor::from_vec(1, rows, cols, (0..12).map(|i| i as f64).collect()).unwrap();
        let mut w = vec![0.0; rows * cols * 9];
        for p in 0..rows * cols {
            w[p * 9 + 4] = 1.0;
        }
        let out = local_forward(&input, &w, &[0.0; 12], 1, 3, Activation::Relu).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn one_pixel_grid_is_scalar_affine() {
        let input = Tensor::from_vec(1, 1, 1, vec![2.0]).unwrap();
        let mut w = vec![0.0; 9];
        w[4] = -3.0;
        let out = local_forward(&input, &w, &[0.5], 1, 3, Activation::Identity).unwrap();
        assert_eq!(out.data(), &[-5.5]);
        let up = Tensor::from_vec(1, 1, 1, vec![4.0]).unwrap();
        let g = local_backward(&input, &w, 3, Activation::Identity, &out, &up).unwrap();
        assert_eq!(g.input.data(), &[-12.0]);
        assert_eq!(g.weights[4], 8.0);
        assert_eq!(g.bias, vec![4.0]);
    }

    #[test]
    fn zero_upstream() {
        let input = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w: Vec<f64> = (0..36).map(|i| i as f64 * 0.1).collect();
        let out = local_forward(&input, &w, &[0.0; 4], 1, 3, Activation::Relu).unwrap();
        let g = local_backward(
            &input,
            &w,
            3,
            Activation::Relu,
            &out,
            &Tensor::zeros(1, 2, 2),
        )
        .unwrap();
        assert!(g
            .weights
            .iter()
            .chain(&g.bias)
            .chain(g.input.data())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn weight_count_mismatch() {
        let input = Tensor::zeros(1, 3, 3);
        assert!(matches!(
            local_forward(&input, &[0.0; 9], &[0.0; 9], 1, 3, Activation::Identity),
            Err(Error::Shape(_))
        ));
    }
}
