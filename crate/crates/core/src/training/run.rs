//! Dataset directories and append-only run directories.
//!
//! A dataset directory holds `data.csv` (a `label,<field>...` header) and
//! `schema.txt`. A run directory is named `<12 hex of config hash>-s<seed>`
//! and receives:
//!
//! | file              | contents                                        |
//! |-------------------|-------------------------------------------------|
//! | `manifest.json`   | command, hash, seed, inputs, timestamps, status |
//! | `config.txt`      | canonical configuration                         |
//! | `train_report.json` | per-epoch losses, validation metrics, ledger  |
//! | `model.ckpt`      | checkpoint of the kept epoch                    |
//! | `metrics.jsonl`, `metrics.txt` | test-split report                  |

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::model::Model;
use super::trainer::{configured_delta_pae, evaluate, prepare_dataset, train, Dataset, Evaluation, TrainReport};
use crate::data::{read_generic, write_generic, RawRecord, Schema, SyntheticData};
use crate::error::{Error, Result};
use crate::metrics::{auc, emit_report, ReportRow};

pub const DATA_FILE: &str = "data.csv";
pub const SCHEMA_FILE: &str = "schema.txt";
pub const TEACHER_FILE: &str = "teacher.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "train_report.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Ground truth written next to a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub informative: Vec<usize>,
    /// AUC of the planted teacher's own probabilities on the records.
    pub teacher_auc: f64,
    pub n_records: usize,
}

/// Writes `data.csv`, `schema.txt` and `teacher.json` into `dir`.
pub fn write_synthetic_dir(data: &SyntheticData, dir: &Path) -> Result<TeacherSummary> {
    fs::create_dir_all(dir)?;
    let file = fs::File::create(dir.join(DATA_FILE))?;
    write_generic(std::io::BufWriter::new(file), &data.schema, &data.records)?;
    fs::write(dir.join(SCHEMA_FILE), data.schema.to_text())?;
    let logits = data
        .records
        .iter()
        .map(|r| data.teacher.logit(r))
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<u8> = data.records.iter().map(|r| r.label).collect();
    let summary = TeacherSummary {
        informative: data.informative.clone(),
        teacher_auc: auc(&logits, &labels)?,
        n_records: data.records.len(),
    };
    fs::write(dir.join(TEACHER_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

pub fn read_data_dir(dir: &Path) -> Result<(Schema, Vec<RawRecord>)> {
    let schema = Schema::load(&dir.join(SCHEMA_FILE))?;
    let file = fs::File::open(dir.join(DATA_FILE))?;
    let records = read_generic(std::io::BufReader::new(file), &schema)?;
    Ok((schema, records))
}

/// Reads a dataset directory and prepares splits per the config.
pub fn load_dataset(dir: &Path, config: &TrainConfig) -> Result<Dataset> {
    let (schema, records) = read_data_dir(dir)?;
    prepare_dataset(&schema, records, config.min_freq, config.split_seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub output_dir: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub version: String,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}

/// Creates `root/<run name>`. An existing directory is an error unless
/// `force` is set, in which case it is wiped first.
pub fn create_run_dir(root: &Path, config: &TrainConfig, force: bool) -> Result<PathBuf> {
    let dir = root.join(config.run_dir_name());
    if dir.exists() {
        if !force {
            return Err(Error::Config(format!(
                "run directory {} already exists; use a new seed or --force",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// One finished training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub model: Model,
    pub report: TrainReport,
    pub test: Evaluation,
    pub row: ReportRow,
}

/// Report row for a test-split evaluation.
pub fn report_row(config: &TrainConfig, n_fields: usize, eval: &Evaluation) -> Result<ReportRow> {
    Ok(ReportRow {
        method: config.method.to_string(),
        auc: eval.metrics.auc,
        logloss: eval.metrics.logloss,
        delta_pae: configured_delta_pae(config, n_fields)?,
        n: eval.metrics.n,
        activated_params_avg: eval.metrics.activated_params_avg,
        lookups_avg: eval.metrics.lookups_avg,
        runs: 1,
    })
}

/// Trains, evaluates on the test split and writes every artifact into a
/// fresh run directory under `root`. The manifest is written first and
/// finalized with the outcome, including on failure.
pub fn execute_run(
    command: &str,
    data: &Dataset,
    config: &TrainConfig,
    inputs: &[String],
    root: &Path,
    force: bool,
) -> Result<RunOutcome> {
    config.validate()?;
    let dir = create_run_dir(root, config, force)?;
    let mut manifest = RunManifest {
        command: command.to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        inputs: inputs.to_vec(),
        output_dir: dir.display().to_string(),
        started_unix: unix_now(),
        finished_unix: None,
        status: RunStatus::Running,
        error: None,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    manifest.save(&dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_text())?;

    let result = run_into(data, config, &dir);
    manifest.finished_unix = Some(unix_now());
    match &result {
        Ok(_) => manifest.status = RunStatus::Completed,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    manifest.save(&dir)?;
    let (model, report, test, row) = result?;
    Ok(RunOutcome {
        dir,
        model,
        report,
        test,
        row,
    })
}

fn run_into(data: &Dataset, config: &TrainConfig, dir: &Path) -> Result<(Model, TrainReport, Evaluation, ReportRow)> {
    let (model, report) = train(data, config)?;
    save_checkpoint(&model, config, &dir.join(CHECKPOINT_FILE))?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    let test = evaluate(&model, &data.test, config.batch_size)?;
    let row = report_row(config, data.vocab_sizes().len(), &test)?;
    emit_report(std::slice::from_ref(&row), dir)?;
    Ok((model, report, test, row))
}
