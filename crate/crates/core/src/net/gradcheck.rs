//! Central finite-difference verification of [`network_backward`].
//!
//! The objective is the mean squared error against a random target. Cases
//! whose ReLU pre-activations lie within `KINK_MARGIN` of zero are redrawn,
//! since the loss is not differentiable there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::network::forward_trace;
use crate::net::{
    build_network, network_backward, network_forward, Activation, Architecture, NetworkParams,
    Variant,
};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-6;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
/// Denominator floor for the relative error; below it the error is absolute.
pub const RELATIVE_FLOOR: f64 = 1e-3;
const KINK_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub params: NetworkParams,
    pub input: Tensor,
    pub target: Tensor,
    pub arch: Architecture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub cases: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
    pub worst_case: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADIENT_TOLERANCE
    }
}

fn mse(pred: &Tensor, target: &Tensor) -> f64 {
    let n = pred.data().len() as f64;
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

fn mse_grad(pred: &Tensor, target: &Tensor) -> Tensor {
    let n = pred.data().len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Tensor::from_vec(pred.channels(), pred.rows(), pred.cols(), data).expect("same shape")
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Smallest |pre-activation| feeding a ReLU anywhere in the network.
fn kink_distance(params: &NetworkParams, input: &Tensor) -> Result<f64> {
    let trace = forward_trace(params, input)?;
    Ok(params
        .layers
        .iter()
        .zip(&trace.pre)
        .filter(|(l, _)| l.spec.activation == Activation::Relu)
        .flat_map(|(_, z)| z.data().iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min))
}

fn param_mut(p: &mut NetworkParams, layer: usize, which: usize, index: usize) -> &mut f64 {
    let layer = &mut p.layers[layer];
    if which == 0 {
        &mut layer.weights[index]
    } else {
        &mut layer.bias[index]
    }
}

/// Max relative error over every weight and bias of the case.
pub fn check_case(case: &GradCase) -> Result<(f64, usize)> {
    let pred = network_forward(&case.params, &case.input)?;
    let analytic = network_backward(&case.params, &case.input, &mse_grad(&pred, &case.target))?;
    let mut probe = case.params.clone();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (li, lg) in analytic.layers.iter().enumerate() {
        for which in 0..2 {
            let grads = if which == 0 { &lg.weights } else { &lg.bias };
            for (pi, &a) in grads.iter().enumerate() {
                let orig = *param_mut(&mut probe, li, which, pi);
                *param_mut(&mut probe, li, which, pi) = orig + FD_STEP;
                let up = mse(&network_forward(&probe, &case.input)?, &case.target);
                *param_mut(&mut probe, li, which, pi) = orig - FD_STEP;
                let down = mse(&network_forward(&probe, &case.input)?, &case.target);
                *param_mut(&mut probe, li, which, pi) = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(a, numeric));
                count += 1;
            }
        }
    }
    Ok((worst, count))
}

/// Draws a random small network (grid ≤ 6×6, ≤ 4 convolutions, ≤ 2 local layers).
pub fn random_case<R: Rng + ?Sized>(variant: Variant, rng: &mut R) -> Result<GradCase> {
    for _ in 0..1000 {
        let n = rng.random_range(1..=2);
        let arch = Architecture {
            conv_layers: rng.random_range(1..=4),
            filters: n * rng.random_range(1..=2),
            local_layers: rng.random_range(0..=2),
            kernel: 3,
            variant,
        };
        let rows = rng.random_range(2..=6);
        let cols = rng.random_range(2..=6);
        let mut params = build_network(&arch, (n, rows, cols), 1e-3, 0, rng)?;
        // Generic weights exercise every path, not just the identity one.
        for layer in &mut params.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w += rng.random_range(-0.2..0.2);
            }
        }
        let input = Tensor::from_vec(
            n,
            rows,
            cols,
            (0..n * rows * cols).map(|_| rng.random::<f64>()).collect(),
        )?;
        let target = Tensor::from_vec(
            1,
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random::<f64>()).collect(),
        )?;
        if kink_distance(&params, &input)? > KINK_MARGIN {
            return Ok(GradCase {
                params,
                input,
                target,
                arch,
            });
        }
    }
    Err(Error::InvalidArgument(
        "could not draw a kink-free gradient-check case".into(),
    ))
}

/// Checks `cases` random networks, cycling through the three variants.
pub fn run_gradcheck(seed: u64, cases: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variants = [Variant::DeltaInit, Variant::Resnet, Variant::RandomInit];
    let mut report = GradCheckReport {
        cases,
        parameters_checked: 0,
        max_relative_error: 0.0,
        worst_case: String::new(),
    };
    for i in 0..cases {
        let case = random_case(variants[i % variants.len()], &mut rng)?;
        let (err, count) = check_case(&case)?;
        report.parameters_checked += count;
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            let (n, rows, cols) = case.params.input_shape;
            report.worst_case = format!(
                "case {i}: {} C={} F={} m={} input {n}x{rows}x{cols}",
                case.arch.variant, case.arch.conv_layers, case.arch.filters, case.arch.local_layers
            );
        }
    }
    Ok(report)
}
