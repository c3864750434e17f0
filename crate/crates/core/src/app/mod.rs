//! Application layer behind the command-line tool: run configuration,
//! training and evaluation, stitched inference, chipping, gradient checks,
//! the ablation matrix, and checkpoint persistence.

mod ablate;
mod checkpoint;
mod chip;
mod config;
mod gradcheck;
mod infer;
mod train;

pub use ablate::{ablation_table, run_ablation, AblationRow, ABLATION_ROWS};
pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Checkpoint, Manifest, TensorEntry, MANIFEST};
pub use chip::{chip_dataset, ChipManifest, TileRecord, CHIP_MANIFEST};
pub use config::{DataConfig, RunConfig, SelectionMetric, SyntheticConfig, DATA_ROOT_ENV};
pub use gradcheck::{gradcheck, parameter_group, relative_error, GradcheckOptions, GradcheckReport, GroupResult};
pub use infer::{probabilities, sliding_window_logits, Inference};
pub use train::{
    evaluate, load_data, predict_mask, run_training, train_step, train_step_on, LogEntry, TrainOutcome, Validation,
};
