use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{apply_normalization, stack_ensemble, EnsembleSample, NormStats};
use crate::net::init::DEFAULT_NOISE_SCALE;
use crate::net::network::{forward_trace, network_backward_with_trace};
use crate::net::{build_network, network_forward, Architecture, Gradients, NetworkParams};
use crate::tensor::Tensor;
use crate::train::loss::{l2_penalty, quadratic_loss};
use crate::train::optim::sgd_step;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 coefficient on layer weights.
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub arch: Architecture,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            lambda: 1e-5,
            batch_size: 16,
            max_epochs: 500,
            patience: 20,
            arch: Architecture::default(),
            noise_scale: DEFAULT_NOISE_SCALE,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if !(self.noise_scale >= 0.0) {
            return bad(format!(
                "noise_scale must be >= 0, got {}",
                self.noise_scale
            ));
        }
        if self.arch.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd, got {}", self.arch.kernel));
        }
        if self.arch.conv_layers == 0 {
            return bad("conv_layers must be >= 1".into());
        }
        Ok(())
    }
}

/// A normalized, network-ready training example.
#[derive(Debug, Clone)]
pub struct Example {
    /// Stacked normalized members; missing cells are zero.
    pub input: Tensor,
    /// Normalized label; missing cells stay NaN.
    pub label: Vec<f64>,
    /// Label in physical units.
    pub label_mm: Vec<f64>,
}

pub fn prepare_examples(samples: &[EnsembleSample], stats: &NormStats) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            let norm = apply_normalization(s, stats)?;
            let mut input = stack_ensemble(&norm)?;
            input
                .data_mut()
                .iter_mut()
                .filter(|v| v.is_nan())
                .for_each(|v| *v = 0.0);
            Ok(Example {
                input,
                label: norm.label.values,
                label_mm: s.label.values.clone(),
            })
        })
        .collect()
}

/// Quadratic loss (normalized units) of the network over all examples.
pub fn dataset_loss(params: &NetworkParams, examples: &[Example]) -> Result<f64> {
    let preds: Vec<Tensor> = examples
        .par_iter()
        .map(|e| network_forward(params, &e.input))
        .collect::<Result<_>>()?;
    let pred: Vec<f64> = preds
        .iter()
        .flat_map(|p| p.data().iter().copied())
        .collect();
    let label: Vec<f64> = examples
        .iter()
        .flat_map(|e| e.label.iter().copied())
        .collect();
    Ok(quadratic_loss(&pred, &label)?.value)
}

/// Prediction for one example, denormalized to physical units.
pub fn predict_mm(
    params: &NetworkParams,
    example: &Example,
    stats: &NormStats,
) -> Result<Vec<f64>> {
    let pred = network_forward(params, &example.input)?;
    Ok(pred
        .data()
        .iter()
        .map(|&v| stats.denormalize_label(v))
        .collect())
}

/// RMSE in physical units over all examples.
pub fn physical_rmse(
    params: &NetworkParams,
    examples: &[Example],
    stats: &NormStats,
) -> Result<f64> {
    let preds: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|e| predict_mm(params, e, stats))
        .collect::<Result<_>>()?;
    let (sum, n) = preds
        .iter()
        .zip(examples)
        .flat_map(|(p, e)| p.iter().zip(&e.label_mm))
        .filter(|(_, y)| !y.is_nan())
        .fold((0.0, 0usize), |(s, n), (p, y)| {
            (s + (p - y) * (p - y), n + 1)
        });
    if n == 0 {
        return Err(Error::Empty("RMSE over zero labelled cells".into()));
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse_mm: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation RMSE.
    pub params: NetworkParams,
    /// Epoch 0 is the untrained network.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
}

/// Summed data-term gradient of one mini-batch, accumulated in index order.
fn batch_gradients(params: &NetworkParams, batch: &[&Example]) -> Result<Gradients> {
    let traces = batch
        .par_iter()
        .map(|e| forward_trace(params, &e.input))
        .collect::<Result<Vec<_>>>()?;
    let counted: usize = batch
        .iter()
        .map(|e| e.label.iter().filter(|v| !v.is_nan()).count())
        .sum();
    if counted == 0 {
        return Ok(Gradients::zeros_like(params));
    }
    let scale = 2.0 / counted as f64;
    let per_example = batch
        .par_iter()
        .zip(&traces)
        .map(|(e, trace)| {
            let pred = trace.prediction();
            let data = pred
                .data()
                .iter()
                .zip(&e.label)
                .map(|(p, y)| if y.is_nan() { 0.0 } else { scale * (p - y) })
                .collect();
            let grad = Tensor::from_vec(1, pred.rows(), pred.cols(), data)?;
            network_backward_with_trace(params, &e.input, trace, &grad).map(|(g, _)| g)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::zeros_like(params);
    for g in &per_example {
        total.add_assign(g);
    }
    Ok(total)
}

/// Mini-batch SGD on quadratic loss + L2, with early stopping on the
/// validation RMSE (physical units). Deterministic for a given config.
pub fn train_model(
    train: &[EnsembleSample],
    val: &[EnsembleSample],
    stats: &NormStats,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training needs non-empty train and validation splits (got {} / {})",
            train.len(),
            val.len()
        )));
    }
    let train_ex = prepare_examples(train, stats)?;
    let val_ex = prepare_examples(val, stats)?;
    let shape = train_ex[0].input.shape();

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);
    let params = build_network(
        &config.arch,
        shape,
        config.noise_scale,
        config.seed,
        &mut init_rng,
    )?;
    train_from(params, &train_ex, &val_ex, stats, config, &mut order_rng)
}

/// Runs the optimization loop from given initial parameters.
pub fn train_from(
    mut params: NetworkParams,
    train_ex: &[Example],
    val_ex: &[Example],
    stats: &NormStats,
    config: &TrainConfig,
    order_rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: dataset_loss(&params, train_ex)?,
        val_rmse_mm: physical_rmse(&params, val_ex, stats)?,
        wall_seconds: started.elapsed().as_secs_f64(),
    }];
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val = history[0].val_rmse_mm;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_ex.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(order_rng);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_ex[i]).collect();
            let mut grads =
                batch_gradients(&params, &batch).map_err(|e| e.with_step(epoch, step))?;
            if config.lambda > 0.0 {
                grads.add_assign(&l2_penalty(&params, config.lambda).1);
            }
            sgd_step(&mut params, &grads, config.learning_rate)
                .map_err(|e| e.with_step(epoch, step))?;
        }
        let train_loss = dataset_loss(&params, train_ex)?;
        let val_rmse = physical_rmse(&params, val_ex, stats)?;
        if !train_loss.is_finite() || !val_rmse.is_finite() {
            return Err(Error::Divergence {
                layer: params.layers.len() - 1,
                detail: format!("non-finite loss after epoch {epoch}"),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_rmse_mm: val_rmse,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if val_rmse < best_val {
            best_val = val_rmse;
            best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
        best_val_rmse: best_val,
    })
}
