use crate::error::{Error, Result};
use crate::net::{Gradients, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticLoss {
    pub value: f64,
    /// `2 / counted`: multiply `(pred - label)` by this for `d loss / d pred`.
    pub grad_scale: f64,
    pub counted: usize,
}

/// Mean squared error over every cell whose label is not NaN.
///
/// `pred` and `label` are flattened `batch × rows × cols` blocks.
pub fn quadratic_loss(pred: &[f64], label: &[f64]) -> Result<QuadraticLoss> {
    if pred.len() != label.len() {
        return Err(Error::Shape(format!(
            "prediction has {} cells, label has {}",
            pred.len(),
            label.len()
        )));
    }
    let (sum, counted) = pred
        .iter()
        .zip(label)
        .filter(|(_, y)| !y.is_nan())
        .fold((0.0, 0usize), |(s, n), (p, y)| {
            (s + (p - y) * (p - y), n + 1)
        });
    if counted == 0 {
        return Err(Error::Empty("loss over zero labelled cells".into()));
    }
    Ok(QuadraticLoss {
        value: sum / counted as f64,
        grad_scale: 2.0 / counted as f64,
        counted,
    })
}

/// `lambda * Σ W²` over all layer weights (biases excluded) and its gradient.
pub fn l2_penalty(params: &NetworkParams, lambda: f64) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(params);
    let mut penalty = 0.0;
    for (layer, g) in params.layers.iter().zip(&mut grads.layers) {
        for (w, gw) in layer.weights.iter().zip(&mut g.weights) {
            penalty += w * w;
            *gw = 2.0 * lambda * w;
        }
    }
    (lambda * penalty, grads)
}
