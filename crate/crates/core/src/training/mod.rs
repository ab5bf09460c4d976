//! Multi-task loss, exact gradients, Adam, the per-fold loop and the
//! repeated cross-validation driver.

mod adam;
mod cv;
mod loss;
mod train;

pub use adam::{adam_step, AdamState, OptimizerConfig};
pub use cv::{
    fold_seed, load_predictions, run_cross_validation, save_predictions, CvOutcome, ExperimentConfig, FoldResult,
    ImageStore, Mode, PredictionRow,
};
pub use loss::{bce, bce_logit_grad, loss_and_logit_grad, loss_gradients, total_loss, LesionPolicy, LossConfig, LossParts};
pub use train::{train_fold, EpochRecord, TrainItem, TrainSettings, TrainingHistory};
