use crate::error::{Error, Result};
use crate::net::{Gradients, NetworkParams};

/// Plain gradient descent, `w ← w − lr·g`, applied in place.
///
/// Non-finite gradients are rejected before anything is written; a
/// non-finite resulting weight aborts with the offending layer named.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, learning_rate: f64) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(Error::Shape(format!(
            "{} gradient layers for {} network layers",
            grads.layers.len(),
            params.layers.len()
        )));
    }
    for (i, (layer, g)) in params.layers.iter().zip(&grads.layers).enumerate() {
        if g.weights.len() != layer.weights.len() || g.bias.len() != layer.bias.len() {
            return Err(Error::Shape(format!(
                "layer {i}: gradient shape does not match parameters"
            )));
        }
        if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                layer: i,
                detail: "non-finite gradient".into(),
            });
        }
    }
    for (i, (layer, g)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= learning_rate * gw;
        }
        for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
            *b -= learning_rate * gb;
        }
        if layer
            .weights
            .iter()
            .chain(&layer.bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Divergence {
                layer: i,
                detail: "non-finite weight after update".into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Layer, LayerKind, LayerSpec};

    fn single(w: f64) -> NetworkParams {
        NetworkParams::new(
            (1, 1, 1),
            vec![Layer {
                spec: LayerSpec {
                    kind: LayerKind::Conv,
                    in_channels: 1,
                    out_channels: 1,
                    kernel: 1,
                    activation: Activation::Identity,
                    shortcut: None,
                },
                weights: vec![w],
                bias: vec![0.0],
            }],
            0,
        )
        .unwrap()
    }

    fn grad(p: &NetworkParams, g: f64) -> Gradients {
        let mut gr = Gradients::zeros_like(p);
        gr.layers[0].weights[0] = g;
        gr
    }

    #[test]
    fn step_examples() {
        let mut p = single(1.0);
        let g = grad(&p, 2.0);
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p.layers[0].weights[0], 1.0);
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert!((p.layers[0].weights[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn infinite_gradient_diverges() {
        let mut p = single(1.0);
        let g = grad(&p, f64::INFINITY);
        let err = sgd_step(&mut p, &g, 0.1).unwrap_err();
        assert!(matches!(err, Error::Divergence { layer: 0, .. }));
        assert_eq!(p.layers[0].weights[0], 1.0);
    }

    #[test]
    fn overflowing_weight_diverges() {
        let mut p = single(f64::MAX);
        let g = grad(&p, -f64::MAX);
        let err = sgd_step(&mut p, &g, 1.0).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }
}
