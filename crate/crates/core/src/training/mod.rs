//! Configuration, training loop, evaluation, checkpoints and run
//! directories.

mod checkpoint;
mod config;
mod model;
mod run;
mod trainer;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint};
pub use config::{Method, TrainConfig, CONFIG_KEYS};
pub use model::Model;
pub use run::{
    create_run_dir, execute_run, load_dataset, read_data_dir, report_row, write_synthetic_dir, RunManifest, RunOutcome,
    RunStatus, TeacherSummary, CHECKPOINT_FILE, CONFIG_FILE, DATA_FILE, MANIFEST_FILE, REPORT_FILE, SCHEMA_FILE,
    TEACHER_FILE,
};
pub use trainer::{
    configured_delta_pae, evaluate, prepare_dataset, pretrain, train, train_with, Dataset, EpochRecord, Evaluation, TrainReport,
};
