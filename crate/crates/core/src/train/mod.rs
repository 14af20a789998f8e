//! Loss, regularization, optimization, temporal splits and hyperparameter search.

pub mod loss;
pub mod optim;
pub mod search;
pub mod split;
pub mod trainer;

pub use loss::{l2_penalty, quadratic_loss, QuadraticLoss};
pub use optim::sgd_step;
pub use search::{
    log_uniform, random_search, random_search_with, HyperSpace, SearchOutcome, Trial, TrialStatus,
};
pub use split::{temporal_split, Dataset, SplitSpec, Splits};
pub use trainer::{
    dataset_loss, physical_rmse, predict_mm, prepare_examples, train_from, train_model,
    EpochRecord, Example, TrainConfig, TrainOutcome,
};
