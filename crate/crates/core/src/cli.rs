//! Command-line front end.
//!
//! Every command reads an optional TOML run config with `[generator]`,
//! `[split]`, `[train]` and `[paths]` sections; flags override the file,
//! and anything left unset takes the library defaults. The output
//! directory falls back to `$FDDM_OUT_DIR` when neither a flag nor the
//! config names one.
//!
//! Exit codes: 0 success, 1 I/O or unreadable input, 2 config or usage
//! error, 3 training divergence, 4 gradient-check failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_dataset, save_dataset, split_by_patient, DatasetManifest,
    GeneratorConfig, Modality,
};
use crate::error::{FddmError, Result};
use crate::eval::evaluate;
use crate::gradsuite::{gradcheck_suite, LossKind, GRADCHECK_TOLERANCE};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::training::{
    run_ablation, run_ablation_with_teacher, train_student, train_teacher, TrainConfig,
    TrainOutcome,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

pub const OUT_DIR_ENV: &str = "FDDM_OUT_DIR";

pub const TEACHER_CHECKPOINT: &str = "teacher.ckpt.json";
pub const STUDENT_CHECKPOINT: &str = "student.ckpt.json";

/// Exit code for an error escaping a command.
pub fn exit_code(err: &FddmError) -> i32 {
    match err {
        FddmError::Io { .. }
        | FddmError::Parse { .. }
        | FddmError::Schema { .. }
        | FddmError::EmptyManifest => EXIT_IO,
        FddmError::Training { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FddmError::config("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FddmError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fddm",
    version,
    about = "Unpaired fundus-to-OCT distillation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-modality dataset.
    Synth(SynthArgs),
    /// Train the fundus teacher.
    TrainTeacher(TrainArgs),
    /// Train the OCT student against a frozen teacher.
    TrainStudent(TrainArgs),
    /// Train and evaluate the four-cell ablation grid.
    Ablate(TrainArgs),
    /// Evaluate a checkpoint at eye level.
    Eval(EvalArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output dataset file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Teacher checkpoint (required for train-student).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sets both the init and the data seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "OCT")]
    pub modality: Modality,
    /// Evaluate every record instead of the test split.
    #[arg(long)]
    pub all: bool,
    /// File stem of the JSON and CSV reports.
    #[arg(long, default_value = "report")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, hide = true)]
    pub corrupt: Option<LossKind>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::TrainTeacher(a) => cmd_train_teacher(a),
        Command::TrainStudent(a) => cmd_train_student(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.paths.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            FddmError::config(
                "out",
                format!("no --out flag, [paths].out_dir or ${OUT_DIR_ENV}"),
            )
        })?;
    std::fs::create_dir_all(&dir).map_err(|e| FddmError::io(&dir, e))?;
    Ok(dir)
}

fn data_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.paths.data.clone())
        .ok_or_else(|| FddmError::config("data", "no --data flag or [paths].data"))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| FddmError::io(path, e))
}

fn load_split(path: &Path, cfg: &RunConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    let data = load_dataset(path)?;
    split_by_patient(&data, cfg.split.test_fraction, cfg.split.seed)
}

fn train_config(a: &TrainArgs, cfg: &RunConfig) -> TrainConfig {
    let mut t = cfg.train.clone();
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.seed {
        t.init_seed = v;
        t.data_seed = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if let Some(v) = a.beta {
        t.beta = v;
    }
    if let Some(v) = a.tau {
        t.tau = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    t
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let mut cfg = RunConfig::load_opt(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.generator.seed = seed;
    }
    let path = match a.out.or_else(|| cfg.paths.data.clone()) {
        Some(p) => p,
        None => out_dir(None, &cfg)?.join("dataset.jsonl"),
    };
    let manifest = generate_synthetic(&cfg.generator)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FddmError::io(dir, e))?;
    }
    save_dataset(&manifest, &path)?;
    println!("wrote {} records to {}", manifest.len(), path.display());
    println!("{}", manifest.summary());
    Ok(EXIT_OK)
}

fn report_outcome(name: &str, out: &TrainOutcome, dir: &Path, ckpt_file: &str) -> Result<()> {
    let ckpt = dir.join(ckpt_file);
    save_checkpoint(&out.checkpoint, &ckpt)?;
    let log = dir.join(format!("{name}.log.jsonl"));
    out.log.save(&log)?;
    for w in &out.log.warnings {
        eprintln!("warning: {w}");
    }
    let last = out.log.epochs.last().expect("at least one epoch");
    print!(
        "{name}: {} steps, final epoch mean L_CLS {:.4}, L_total {:.4}",
        out.log.totals.steps, last.mean_l_cls, last.mean_l_total
    );
    if let Some(e) = out.log.final_eval() {
        let pct =
            |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
        print!(
            "; test MAP {} (majority {}, minority {}), F1 {}, AUC {}",
            pct(e.map),
            pct(e.majority_map),
            pct(e.minority_map),
            pct(Some(e.f1)),
            pct(e.auc)
        );
    }
    println!();
    println!("checkpoint {}, log {}", ckpt.display(), log.display());
    Ok(())
}

fn cmd_train_teacher(a: TrainArgs) -> Result<i32> {
    let cfg = RunConfig::load_opt(a.config.as_deref())?;
    let tc = train_config(&a, &cfg);
    let data = data_path(a.data.clone(), &cfg)?;
    let (train, test) = load_split(&data, &cfg)?;
    let dir = out_dir(a.out.clone(), &cfg)?;
    let out = train_teacher(&train, Some(&test), &tc)?;
    report_outcome("teacher", &out, &dir, TEACHER_CHECKPOINT)?;
    Ok(EXIT_OK)
}

fn cmd_train_student(a: TrainArgs) -> Result<i32> {
    let cfg = RunConfig::load_opt(a.config.as_deref())?;
    let teacher_path = a
        .teacher
        .clone()
        .or_else(|| cfg.paths.teacher.clone())
        .ok_or_else(|| {
            FddmError::config(
                "teacher",
                "train-student needs --teacher or [paths].teacher",
            )
        })?;
    let tc = train_config(&a, &cfg);
    let data = data_path(a.data.clone(), &cfg)?;
    let teacher = load_checkpoint(&teacher_path)?;
    let (train, test) = load_split(&data, &cfg)?;
    let dir = out_dir(a.out.clone(), &cfg)?;
    let out = train_student(&train, &train, &teacher, Some(&test), &tc)?;
    report_outcome("student", &out, &dir, STUDENT_CHECKPOINT)?;
    Ok(EXIT_OK)
}

fn cmd_ablate(a: TrainArgs) -> Result<i32> {
    let cfg = RunConfig::load_opt(a.config.as_deref())?;
    let tc = train_config(&a, &cfg);
    let data = data_path(a.data.clone(), &cfg)?;
    let teacher = a
        .teacher
        .clone()
        .or_else(|| cfg.paths.teacher.clone())
        .map(|p| load_checkpoint(&p))
        .transpose()?;
    let (train, test) = load_split(&data, &cfg)?;
    let dir = out_dir(a.out.clone(), &cfg)?;
    let result = match &teacher {
        Some(t) => run_ablation_with_teacher(&train, &test, t, &tc)?,
        None => run_ablation(&train, &test, &tc)?,
    };
    write_file(&dir.join("ablation.csv"), &result.to_csv())?;
    write_file(&dir.join("ablation.json"), &result.to_json())?;
    print!("{result}");
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let cfg = RunConfig::load_opt(a.config.as_deref())?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let data = data_path(a.data.clone(), &cfg)?;
    let manifest = if a.all {
        load_dataset(&data)?
    } else {
        load_split(&data, &cfg)?.1
    };
    let report = evaluate(&ckpt.params, &manifest, a.modality)?;
    let dir = out_dir(a.out.clone(), &cfg)?;
    report.write_files(&dir, &a.name)?;
    print!("{}", report.to_csv());
    for f in &report.flags {
        eprintln!("note: {f}");
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    if a.instances == 0 {
        return Err(FddmError::config("instances", "must be positive"));
    }
    let rows = gradcheck_suite(a.seed, a.instances, a.corrupt)?;
    println!(
        "{:<6} {:>9} {:>7} {:>14}  result",
        "loss", "instances", "params", "max rel err"
    );
    for r in &rows {
        println!(
            "{:<6} {:>9} {:>7} {:>14.3e}  {}",
            r.loss.name(),
            r.instances,
            r.parameters,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.loss.name())
        .collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "gradient check failed (tolerance {GRADCHECK_TOLERANCE:e}): {}",
            failed.join(", ")
        );
        Ok(EXIT_GRADCHECK)
    }
}
