//! Learning-curve datasets, synthetic generators, and model persistence.

mod dataset;
mod model_file;
mod synth;
mod tables;

pub use dataset::{read_csv, read_csv_from, to_training_data, write_csv, write_csv_to, CurveRecord, Dataset};
pub use model_file::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use synth::{synth_benchmark, synth_curves, FinalValue};
pub use tables::{
    align_predictions, read_predictions, read_targets, read_truth, write_predictions, write_truth, Aligned,
    PredictionRow, TargetRow, TruthRow,
};
