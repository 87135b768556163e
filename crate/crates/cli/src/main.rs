//! `aefs`: generate data, train, evaluate and compare feature-selection
//! methods, and print embedding parameter accounting.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data error,
//! 3 numeric abort, 4 I/O or other failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aefs_core::data::{generate_synthetic, SyntheticSpec, Vocabulary};
use aefs_core::embedding::{delta_el, delta_pae, full_param_count};
use aefs_core::metrics::{emit_report, format_table, welch_t_test, ReportRow, WelchTest};
use aefs_core::selection::write_selection_dump;
use aefs_core::training::{
    evaluate, execute_run, load_checkpoint, load_dataset, read_data_dir, prepare_dataset, write_synthetic_dir,
    Method, TrainConfig, CHECKPOINT_FILE,
};
use aefs_core::Error;
use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::Rational64;
use rayon::prelude::*;
use serde::Serialize;

const OUTPUT_ROOT_ENV: &str = "AEFS_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Parser)]
#[command(name = "aefs", version, about = "Adaptive early feature selection for CTR models", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-signal synthetic dataset.
    Synth(SynthArgs),
    /// Split a dataset and build its vocabulary from the training split.
    Prepare(PrepareArgs),
    /// Train one configuration and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Train several methods over several seeds and test their differences.
    Compare(CompareArgs),
    /// Print embedding parameter accounting for a vocabulary.
    Params(ParamsArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory [default: $AEFS_OUTPUT_ROOT/data]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    fields: usize,
    #[arg(long, default_value_t = 8)]
    informative: usize,
    /// Categories per field.
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    #[arg(long, default_value_t = 200_000)]
    records: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PrepareArgs {
    /// Dataset directory with data.csv and schema.txt.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    min_freq: u64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Vocabulary output [default: <data>/vocab.json]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Every configuration key as a flag; flags override the config file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    d1: Option<String>,
    #[arg(long)]
    d2: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    #[arg(long)]
    pretrain_epochs: Option<String>,
    #[arg(long)]
    backbone_main: Option<String>,
    #[arg(long)]
    backbone_aux: Option<String>,
    /// Comma-separated hidden layer sizes.
    #[arg(long)]
    hidden_dims: Option<String>,
    #[arg(long)]
    n_cross_layers: Option<String>,
    #[arg(long)]
    min_freq: Option<String>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    no_eal: bool,
    #[arg(long)]
    no_pal: bool,
    #[arg(long)]
    no_topk_reweight: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        let flags = [
            ("method", &self.method),
            ("mode", &self.mode),
            ("batch_size", &self.batch_size),
            ("r", &self.r),
            ("d1", &self.d1),
            ("d2", &self.d2),
            ("max_epochs", &self.max_epochs),
            ("lr", &self.lr),
            ("seed", &self.seed),
            ("split_seed", &self.split_seed),
            ("pretrain_epochs", &self.pretrain_epochs),
            ("backbone_main", &self.backbone_main),
            ("backbone_aux", &self.backbone_aux),
            ("hidden_dims", &self.hidden_dims),
            ("n_cross_layers", &self.n_cross_layers),
            ("min_freq", &self.min_freq),
            ("data", &self.data),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for (key, off) in [
            ("enable_eal", self.no_eal),
            ("enable_pal", self.no_pal),
            ("enable_topk_reweight", self.no_topk_reweight),
        ] {
            if off {
                cfg.set(key, "false")?;
            }
        }
        cfg.validate()?;
        if cfg.data.is_empty() {
            return Err(Error::Config("no dataset: set `data` in the config or pass --data".into()));
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output root [default: $AEFS_OUTPUT_ROOT or ./runs]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory or checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory [default: the one recorded in the checkpoint]
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
    /// Write per-instance selections as JSON lines.
    #[arg(long)]
    dump_selections: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "none,adafs,aefs")]
    methods: Vec<Method>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Output directory [default: $AEFS_OUTPUT_ROOT/compare]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ParamsArgs {
    /// vocab.json from `prepare`, or a file of per-field sizes.
    #[arg(long, conflicts_with = "vocab_sizes")]
    vocab: Option<PathBuf>,
    /// Comma-separated per-field vocabulary sizes.
    #[arg(long, value_delimiter = ',')]
    vocab_sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 32)]
    d1: u64,
    #[arg(long, default_value_t = 4)]
    d2: u64,
    #[arg(long, default_value_t = 0.5)]
    r: f64,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_OTHER: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Parse { .. } | Error::Csv(_) | Error::UndefinedMetric(_) | Error::OutOfRange { .. } => EXIT_DATA,
        Error::NumericAbort(_) | Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_OTHER,
    }
}

trait OrExit<T> {
    /// Classifies by error kind.
    fn classify(self) -> CliResult<T>;
    /// Forces an exit code, keeping config and numeric errors distinct.
    fn or_exit(self, code: u8, what: &str) -> CliResult<T>;
}

impl<T> OrExit<T> for Result<T, Error> {
    fn classify(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: exit_code(&e),
            err: e.into(),
        })
    }

    fn or_exit(self, code: u8, what: &str) -> CliResult<T> {
        self.map_err(|e| {
            let code = match exit_code(&e) {
                c @ (EXIT_CONFIG | EXIT_NUMERIC) => c,
                _ => code,
            };
            Failure {
                code,
                err: anyhow::Error::from(e).context(what.to_string()),
            }
        })
    }
}

fn io_fail(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_OTHER,
        err: e.into(),
    }
}

fn output_root(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// `37.5%`, `43.75%`, `0.0%`.
fn percent(v: f64) -> String {
    let s = format!("{:.2}", v * 100.0);
    let s = s.trim_end_matches('0');
    let s = if s.ends_with('.') { format!("{s}0") } else { s.to_string() };
    format!("{s}%")
}

fn ratio_f64(q: Rational64) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let dir = args.out.unwrap_or_else(|| output_root(None).join("data"));
    let spec = SyntheticSpec::uniform(args.fields, args.informative, args.vocab, args.records, args.seed);
    let data = generate_synthetic(&spec).or_exit(EXIT_CONFIG, "invalid synthetic spec")?;
    let summary = write_synthetic_dir(&data, &dir).classify()?;
    println!("wrote {} records, {} fields to {}", summary.n_records, args.fields, dir.display());
    println!("informative fields: {:?}", summary.informative);
    println!("teacher AUC: {:.4}", summary.teacher_auc);
    Ok(())
}

fn cmd_prepare(args: PrepareArgs) -> CliResult<()> {
    let (schema, records) = read_data_dir(&args.data).or_exit(EXIT_DATA, "reading dataset")?;
    let data = prepare_dataset(&schema, records, args.min_freq, args.split_seed).or_exit(EXIT_DATA, "preparing dataset")?;
    let out = args.out.unwrap_or_else(|| args.data.join("vocab.json"));
    data.vocab.save(&out).classify()?;
    println!(
        "train {} / val {} / test {} instances",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    println!("vocabulary sizes: {:?}", data.vocab.sizes());
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let cfg = args.config.resolve().classify()?;
    let data_dir = PathBuf::from(&cfg.data);
    let data = load_dataset(&data_dir, &cfg).or_exit(EXIT_DATA, "loading dataset")?;
    let root = output_root(args.out);
    let out = execute_run("train", &data, &cfg, &[cfg.data.clone()], &root, args.force).classify()?;
    let ledger = out.test.ledger.summary();
    println!("run directory: {}", out.dir.display());
    println!(
        "method {} | best epoch {} | val AUC {:.4}",
        cfg.method, out.report.best_epoch, out.report.best_val_auc
    );
    println!("test AUC {:.4} | Logloss {:.4}", out.row.auc, out.row.logloss);
    if let Some(pae) = out.row.delta_pae {
        println!("ΔPaE {}", percent(pae));
    }
    if let Some(l) = ledger {
        println!(
            "lookups/instance: main {} aux {} | activated params/instance {:.1}",
            l.main_lookups_per_instance, l.aux_lookups_per_instance, l.avg_activated
        );
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let path = if args.checkpoint.is_dir() {
        args.checkpoint.join(CHECKPOINT_FILE)
    } else {
        args.checkpoint.clone()
    };
    let (model, cfg) = load_checkpoint(&path).or_exit(EXIT_OTHER, "loading checkpoint")?;
    let data_dir = args.data.unwrap_or_else(|| PathBuf::from(&cfg.data));
    let data = load_dataset(&data_dir, &cfg).or_exit(EXIT_DATA, "loading dataset")?;
    if data.vocab_sizes() != model.main_embeddings().vocab_sizes() {
        return Err(Failure {
            code: EXIT_DATA,
            err: anyhow!("dataset vocabulary does not match the checkpoint"),
        });
    }
    let split = match args.split {
        Split::Train => &data.train,
        Split::Val => &data.val,
        Split::Test => &data.test,
    };
    let eval = evaluate(&model, split, args.batch_size.max(1)).classify()?;
    if let Some(dump) = &args.dump_selections {
        let mut w = BufWriter::new(fs::File::create(dump).map_err(io_fail)?);
        let mut next = 0u64;
        for chunk in split.chunks(args.batch_size.max(1)) {
            let batch: Vec<&[u32]> = chunk.iter().map(|i| i.x.as_slice()).collect();
            let inf = model.infer(&batch).classify()?;
            if let Some(sels) = &inf.selections {
                write_selection_dump(&mut w, next, sels).classify()?;
            }
            next += chunk.len() as u64;
        }
        w.flush().map_err(io_fail)?;
    }
    println!("{}", serde_json::to_string_pretty(&eval.metrics).map_err(io_fail)?);
    Ok(())
}

#[derive(Serialize)]
struct PairTest {
    a: String,
    b: String,
    #[serde(flatten)]
    test: Option<WelchTest>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    if args.methods.len() < 2 || args.seeds.len() < 2 {
        return Err(Failure {
            code: EXIT_CONFIG,
            err: anyhow!("compare needs at least two methods and two seeds"),
        });
    }
    let base = args.config.resolve().classify()?;
    let data = load_dataset(Path::new(&base.data), &base).or_exit(EXIT_DATA, "loading dataset")?;
    let out = args.out.unwrap_or_else(|| output_root(None).join("compare"));
    if out.join(aefs_core::metrics::REPORT_JSONL).exists() && !args.force {
        return Err(Failure {
            code: EXIT_CONFIG,
            err: anyhow!("{} already holds a report; use --force", out.display()),
        });
    }
    let runs_root = out.join("runs");

    let mut unique: Vec<Method> = Vec::new();
    for m in &args.methods {
        if !unique.contains(m) {
            unique.push(*m);
        }
    }
    let cells: Vec<(Method, u64)> = unique
        .iter()
        .flat_map(|&m| args.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results: Vec<Result<ReportRow, Error>> = cells
        .par_iter()
        .map(|&(method, seed)| {
            let mut cfg = base.clone();
            cfg.method = method;
            cfg.seed = seed;
            execute_run("compare", &data, &cfg, &[cfg.data.clone()], &runs_root, args.force).map(|o| o.row)
        })
        .collect();
    let mut by_method: BTreeMap<String, Vec<ReportRow>> = BTreeMap::new();
    for r in results {
        let row = r.classify()?;
        by_method.entry(row.method.clone()).or_default().push(row);
    }

    let rows: Vec<ReportRow> = args
        .methods
        .iter()
        .map(|m| {
            let runs = &by_method[&m.to_string()];
            ReportRow {
                method: m.to_string(),
                auc: mean(runs.iter().map(|r| r.auc)),
                logloss: mean(runs.iter().map(|r| r.logloss)),
                delta_pae: runs[0].delta_pae,
                n: runs[0].n,
                activated_params_avg: mean(runs.iter().map(|r| r.activated_params_avg)),
                lookups_avg: mean(runs.iter().map(|r| r.lookups_avg)),
                runs: runs.len() as u64,
            }
        })
        .collect();
    emit_report(&rows, &out).classify()?;

    let mut tests = Vec::new();
    let mut table = String::from("AUC Welch p-values\n");
    for (i, a) in args.methods.iter().enumerate() {
        for b in &args.methods[i + 1..] {
            let sample = |m: &Method| -> Vec<f64> { by_method[&m.to_string()].iter().map(|r| r.auc).collect() };
            let test = welch_t_test(&sample(a), &sample(b)).ok();
            let p = test.map_or_else(|| "-".to_string(), |t| format!("{:.4}", t.p_value));
            table.push_str(&format!("{a:>12} vs {b:<12} p = {p}\n"));
            tests.push(PairTest {
                a: a.to_string(),
                b: b.to_string(),
                test,
            });
        }
    }
    fs::write(out.join("pvalues.json"), serde_json::to_string_pretty(&tests).map_err(io_fail)? + "\n")
        .map_err(io_fail)?;
    fs::write(out.join("pvalues.txt"), &table).map_err(io_fail)?;
    print!("{}\n{table}", format_table(&rows));
    println!("report written to {}", out.display());
    Ok(())
}

fn read_sizes(path: &Path) -> CliResult<Vec<usize>> {
    if let Ok(v) = Vocabulary::load(path) {
        return Ok(v.sizes());
    }
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_DATA,
        err: anyhow::Error::from(e).context(format!("reading {}", path.display())),
    })?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse().map_err(|_| Failure {
                code: EXIT_DATA,
                err: anyhow!("bad vocabulary size `{t}` in {}", path.display()),
            })
        })
        .collect()
}

fn cmd_params(args: ParamsArgs) -> CliResult<()> {
    let sizes = match (&args.vocab, args.vocab_sizes) {
        (Some(p), _) => read_sizes(p)?,
        (None, Some(s)) => s,
        (None, None) => {
            return Err(Failure {
                code: EXIT_CONFIG,
                err: anyhow!("pass --vocab or --vocab-sizes"),
            })
        }
    };
    if sizes.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            err: anyhow!("empty vocabulary"),
        });
    }
    let n = sizes.len();
    let k = aefs_core::selection::k_from_ratio(n, args.r).classify()?;
    let kept = Rational64::new(k as i64, n as i64);
    let pae = delta_pae(args.d1, args.d2, kept).classify()?;
    let el = delta_el(kept).classify()?;
    let main_full = full_param_count(&sizes, args.d1 as usize);
    let aux_full = full_param_count(&sizes, args.d2 as usize);
    let expected_main = ratio_f64(kept) * main_full as f64;
    let m = |v: f64| format!("{:.2}M", v / 1e6);
    println!("fields {n}, kept {k} (r = {})", args.r);
    println!("main embedding params (d1={}): {main_full} ({})", args.d1, m(main_full as f64));
    println!("aux embedding params (d2={}): {aux_full} ({})", args.d2, m(aux_full as f64));
    println!(
        "expected activated per instance: {:.0} ({})",
        expected_main + aux_full as f64,
        m(expected_main + aux_full as f64)
    );
    println!("ΔPaE {}", percent(ratio_f64(pae)));
    println!("ΔEL {}", percent(ratio_f64(el)));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Params(a) => cmd_params(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
