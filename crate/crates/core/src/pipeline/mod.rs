//! Per-core preprocessing, the patient split and fold training.

mod preprocess;
mod split;
mod train;

pub use preprocess::{
    preprocess_core, preprocess_cores, preprocess_environment, preprocess_panel, CoreOutput,
    PanelOutput, PreprocessConfig, StageCounts,
};
pub use split::{dev_sizes, make_split, patient_subtypes, Fold, SplitPlan, TestPatient, N_FOLDS};
pub use train::{
    class_labels, evaluate_loss, predicted_class, train_fold, undersample_balance, EpochRecord,
    FoldOutcome, TrainConfig,
};
