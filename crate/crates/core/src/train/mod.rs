//! Training, evaluation and ablation.

pub mod ablate;
pub mod adam;
pub mod data;
pub mod diagnostics;
pub mod eval;
pub mod loss;
pub mod trainer;

pub use ablate::{ablate, AblationRow, AblationTable, Suite};
pub use adam::{Adam, AdamConfig, StepOutcome};
pub use eval::{evaluate, EvalTable, SceneMetric};
pub use loss::{l1_loss, mae, rmse_cm};
pub use trainer::{train, train_on, Checkpoint, EpochRecord, TrainConfig, TrainLog, TrainOutcome};
