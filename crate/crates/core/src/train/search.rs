use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{EnsembleSample, NormStats};
use crate::train::trainer::{train_model, TrainConfig};

/// Hyperparameter ranges explored by [`random_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpace {
    pub lr_range: (f64, f64),
    pub lambda_range: (f64, f64),
    pub conv_depth_choices: Vec<usize>,
    pub local_depth_choices: Vec<usize>,
    pub budget: usize,
}

impl Default for HyperSpace {
    fn default() -> Self {
        HyperSpace {
            lr_range: (1e-4, 1e-1),
            lambda_range: (1e-5, 1e1),
            conv_depth_choices: vec![2, 4, 8, 16],
            local_depth_choices: vec![0, 1, 2],
            budget: 10,
        }
    }
}

impl HyperSpace {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if !range_ok(self.lr_range) || !range_ok(self.lambda_range) {
            return Err(Error::Config(format!(
                "search ranges need 0 < low <= high (lr {:?}, lambda {:?})",
                self.lr_range, self.lambda_range
            )));
        }
        if self.budget == 0 {
            return Err(Error::Config("search budget must be >= 1".into()));
        }
        if self.conv_depth_choices.is_empty() || self.local_depth_choices.is_empty() {
            return Err(Error::Config("depth choice sets must be non-empty".into()));
        }
        Ok(())
    }
}

/// `exp(U(ln lo, ln hi))`.
pub fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Finished { val_rmse_mm: f64, epochs: usize },
    Diverged(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub config: TrainConfig,
    pub status: TrialStatus,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: TrainConfig,
    pub best_index: usize,
    pub leaderboard: Vec<Trial>,
}

/// Draws `budget` configurations around `base` and scores each with `run`,
/// which returns `(validation RMSE, epochs run)`.
///
/// Divergent trials are kept on the leaderboard; any other error aborts.
pub fn random_search_with<F>(
    space: &HyperSpace,
    base: &TrainConfig,
    seed: u64,
    mut run: F,
) -> Result<SearchOutcome>
where
    F: FnMut(&TrainConfig) -> Result<(f64, usize)>,
{
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaderboard = Vec::with_capacity(space.budget);
    let mut best: Option<(usize, f64)> = None;
    for index in 0..space.budget {
        let mut config = base.clone();
        config.learning_rate = log_uniform(&mut rng, space.lr_range.0, space.lr_range.1);
        config.lambda = log_uniform(&mut rng, space.lambda_range.0, space.lambda_range.1);
        config.arch.conv_layers =
            space.conv_depth_choices[rng.random_range(0..space.conv_depth_choices.len())];
        config.arch.local_layers =
            space.local_depth_choices[rng.random_range(0..space.local_depth_choices.len())];
        let status = match run(&config) {
            Ok((val_rmse_mm, epochs)) => {
                if best.is_none_or(|(_, b)| val_rmse_mm < b) {
                    best = Some((index, val_rmse_mm));
                }
                TrialStatus::Finished {
                    val_rmse_mm,
                    epochs,
                }
            }
            Err(e @ Error::Divergence { .. }) => {
                log::warn!("trial {index} diverged: {e}");
                TrialStatus::Diverged(e.to_string())
            }
            Err(e) => return Err(e),
        };
        leaderboard.push(Trial {
            index,
            config,
            status,
        });
    }
    let (best_index, _) = best.ok_or_else(|| Error::Divergence {
        layer: 0,
        detail: format!("all {} search trials diverged", space.budget),
    })?;
    Ok(SearchOutcome {
        best: leaderboard[best_index].config.clone(),
        best_index,
        leaderboard,
    })
}

/// Random search that trains every draw with [`train_model`].
pub fn random_search(
    space: &HyperSpace,
    base: &TrainConfig,
    train: &[EnsembleSample],
    val: &[EnsembleSample],
    stats: &NormStats,
    seed: u64,
) -> Result<SearchOutcome> {
    random_search_with(space, base, seed, |cfg| {
        let out = train_model(train, val, stats, cfg)?;
        Ok((out.best_val_rmse, out.history.len() - 1))
    })
}
