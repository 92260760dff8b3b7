//! Command-line front end for the voicescreen toolkit.
//!
//! Subcommands cover the whole pipeline: corpus synthesis, feature caching,
//! stage training, teacher composition, distillation, scoring, evaluation,
//! and threshold tuning. Every artifact-writing command also emits a run
//! manifest as a separate sibling file (`run_manifest.json` next to
//! directory outputs, `<file>.manifest.json` next to file outputs) so the
//! artifacts themselves stay byte-comparable across reruns.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
//! failure, 64 unknown subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use voicescreen::data::{Dataset, Split, Task};
use voicescreen::metrics::{
    correlations, dp_thresholds, macro_recall, roc_points, sn_eq_sp, task_aggregate,
    task_cutoffs, CorrelationBlock, ScoreRow, TaskReport,
};
use voicescreen::synth::{generate_corpus, CorpusConfig};
use voicescreen::train::{
    compose_teacher, read_score_jsonl, read_train_config, run_training, write_score_jsonl,
    write_teacher_jsonl, FeatureStore, Scorer, TrainRunConfig, TrainStage,
};
use voicescreen::{par, rng, Error, Result};

const EXIT_OK: i32 = 0;
const EXIT_INVALID: i32 = 1;
const EXIT_RUNTIME: i32 = 2;
const EXIT_USAGE: i32 = 64;

#[derive(Parser)]
#[command(
    name = "voicescreen",
    version,
    about = "Speech-based screening toolkit: synthesis, training, scoring, evaluation"
)]
struct Cli {
    /// Worker threads for data-parallel sections (0 = library default).
    /// Outputs are identical for every thread count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: audio, lexical sidecars, manifest.
    Synth(SynthArgs),
    /// Precompute and cache features for every voice and recording.
    Features(FeaturesArgs),
    /// Train one pipeline stage.
    Train(TrainArgs),
    /// Compose teacher scores from trained audio and lexical models.
    Teacher(TeacherArgs),
    /// Distill teacher scores into a student (shorthand for the
    /// kd_student training stage).
    Distill(DistillArgs),
    /// Score a corpus split with a trained model, writing JSONL rows.
    Score(ScoreArgs),
    /// Evaluate a score file into a metrics report.
    Eval(EvalArgs),
    /// Search decision thresholds on a score file.
    Tune(TuneArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus config JSON (n_voices, master_seed, optional knobs).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for audio/, sidecars, and manifest.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's master_seed when present.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Corpus root (the directory holding manifest.jsonl).
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Full run config JSON; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stage name: supervised_coral, supervised_coral_svl, lexical,
    /// kd_student, llma, or head.
    #[arg(long)]
    stage: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for checkpoints, logs, and the summary.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_voices: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Student initialization checkpoint (kd_student stage).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Teacher score file (kd_student stage).
    #[arg(long)]
    teacher_scores: Option<PathBuf>,
    /// Trained lexical checkpoint (llma stage).
    #[arg(long)]
    lexical_ckpt: Option<PathBuf>,
    /// Trained audio checkpoint (head stage).
    #[arg(long)]
    audio_ckpt: Option<PathBuf>,
    /// Trained embedding-encoder checkpoint (head stage).
    #[arg(long)]
    llma_ckpt: Option<PathBuf>,
    /// Embedding distance for the llma stage: mse or cosine.
    #[arg(long)]
    llma_mode: Option<String>,
}

#[derive(Args)]
struct TeacherArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    audio_ckpt: PathBuf,
    #[arg(long)]
    lexical_ckpt: PathBuf,
    /// Output teacher score JSONL.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Student initialization checkpoint (a trained audio model).
    #[arg(long)]
    init: PathBuf,
    /// Teacher score JSONL from the teacher subcommand.
    #[arg(long)]
    teacher_scores: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_voices: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Full run config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args)]
struct ScoreArgs {
    /// Trained model checkpoint (audio, lexical, or fused).
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Output score JSONL (one row per recording).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Score JSONL produced by the score subcommand.
    #[arg(long)]
    scores: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional ROC curve CSV (task,cutoff,fpr,tpr,threshold).
    #[arg(long)]
    roc_csv: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Depression,
    Anxiety,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Per-cutoff threshold where sensitivity meets specificity.
    #[value(alias = "sn_eq_sp")]
    SnEqSp,
    /// Joint multi-threshold search maximizing macro-averaged recall.
    Dp,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_enum, default_value_t = MethodArg::SnEqSp)]
    method: MethodArg,
    /// Output JSON with the selected thresholds.
    #[arg(long)]
    out: PathBuf,
}

/// Provenance record written next to every artifact.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    config_hash: String,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    wall_clock_secs: f64,
    toolkit_version: String,
}

/// What a command handler reports back for the run manifest.
struct RunReport {
    command: &'static str,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Where the manifest itself goes.
    manifest_path: PathBuf,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::InvalidSubcommand => EXIT_USAGE,
                _ => EXIT_INVALID,
            };
            let _ = e.print();
            return code;
        }
    };
    let started = Instant::now();
    let outcome = par::with_threads(cli.threads, || dispatch(cli.cmd));
    match outcome {
        Ok(report) => match write_run_manifest(&report, started) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_RUNTIME
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Invalid(_) | Error::Manifest { .. } | Error::Json(_) => EXIT_INVALID,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<RunReport> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Features(a) => cmd_features(a),
        Command::Train(a) => cmd_train(a),
        Command::Teacher(a) => cmd_teacher(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Tune(a) => cmd_tune(a),
    }
}

fn write_run_manifest(report: &RunReport, started: Instant) -> Result<()> {
    let bytes = serde_json::to_vec(&report.config)?;
    let manifest = RunManifest {
        command: report.command.to_string(),
        config: report.config.clone(),
        config_hash: format!("{:016x}", rng::fnv1a(&bytes)),
        seed: report.seed,
        inputs: report.inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: report.outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_json(&report.manifest_path, &manifest)
}

/// Manifest location: inside directory outputs, sibling of file outputs.
fn manifest_for(primary: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        primary.join("run_manifest.json")
    } else {
        let name = primary
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string());
        primary.with_file_name(format!("{name}.manifest.json"))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_dataset(corpus: &Path) -> Result<Dataset> {
    voicescreen::data::load_manifest(&corpus.join("manifest.jsonl"))
}

fn cmd_synth(a: SynthArgs) -> Result<RunReport> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let mut cfg: CorpusConfig = serde_json::from_str(&text)?;
    if let Some(seed) = a.seed {
        cfg.master_seed = seed;
    }
    let manifest = generate_corpus(&cfg, &a.out)?;
    Ok(RunReport {
        command: "synth",
        config: serde_json::to_value(&cfg)?,
        seed: cfg.master_seed,
        inputs: vec![a.config],
        outputs: vec![a.out.clone(), manifest],
        manifest_path: manifest_for(&a.out, true),
    })
}

fn cmd_features(a: FeaturesArgs) -> Result<RunReport> {
    let ds = load_dataset(&a.corpus)?;
    let store = FeatureStore::new(&ds)?;
    let count = store.populate(&ds)?;
    let cache_dir = a.corpus.join("cache");
    Ok(RunReport {
        command: "features",
        config: json!({ "corpus": a.corpus.display().to_string(), "entries": count }),
        seed: 0,
        inputs: vec![a.corpus.join("manifest.jsonl")],
        outputs: vec![cache_dir.clone()],
        manifest_path: manifest_for(&cache_dir, true),
    })
}

fn parse_stage(name: &str) -> Result<TrainStage> {
    serde_json::from_value(json!(name)).map_err(|_| {
        Error::invalid(format!(
            "unknown stage '{name}'; expected supervised_coral, supervised_coral_svl, \
             lexical, kd_student, llma, or head"
        ))
    })
}

fn build_train_config(a: TrainArgs) -> Result<TrainRunConfig> {
    let mut cfg = match &a.config {
        Some(path) => read_train_config(path)?,
        None => {
            let stage = parse_stage(
                a.stage
                    .as_deref()
                    .ok_or_else(|| Error::invalid("--stage is required without --config"))?,
            )?;
            let corpus = a
                .corpus
                .as_ref()
                .ok_or_else(|| Error::invalid("--corpus is required without --config"))?;
            let out = a
                .out
                .as_ref()
                .ok_or_else(|| Error::invalid("--out is required without --config"))?;
            TrainRunConfig::new(stage, corpus, out)
        }
    };
    if a.config.is_some() {
        if let Some(s) = &a.stage {
            cfg.stage = parse_stage(s)?;
        }
        if let Some(c) = a.corpus {
            cfg.corpus = c;
        }
        if let Some(o) = a.out {
            cfg.out_dir = o;
        }
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_voices {
        cfg.batch_voices = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.init {
        cfg.init_checkpoint = Some(p);
    }
    if let Some(p) = a.teacher_scores {
        cfg.teacher_scores = Some(p);
    }
    if let Some(p) = a.lexical_ckpt {
        cfg.lexical_checkpoint = Some(p);
    }
    if let Some(p) = a.audio_ckpt {
        cfg.audio_checkpoint = Some(p);
    }
    if let Some(p) = a.llma_ckpt {
        cfg.llma_checkpoint = Some(p);
    }
    if let Some(m) = &a.llma_mode {
        cfg.llma_mode = serde_json::from_value(json!(m))
            .map_err(|_| Error::invalid(format!("unknown llma mode '{m}'; expected mse or cosine")))?;
    }
    Ok(cfg)
}

fn run_train(cfg: TrainRunConfig, command: &'static str) -> Result<RunReport> {
    cfg.validate()?;
    let outcome = run_training(&cfg)?;
    println!(
        "best epoch {} ({}){}",
        outcome.best_epoch,
        outcome.best_checkpoint.display(),
        if outcome.diverged { "; training stopped early on divergence" } else { "" }
    );
    let mut inputs = vec![cfg.corpus.join("manifest.jsonl")];
    for p in [
        &cfg.init_checkpoint,
        &cfg.teacher_scores,
        &cfg.lexical_checkpoint,
        &cfg.audio_checkpoint,
        &cfg.llma_checkpoint,
    ]
    .into_iter()
    .flatten()
    {
        inputs.push(p.clone());
    }
    Ok(RunReport {
        command,
        config: serde_json::to_value(&cfg)?,
        seed: cfg.seed,
        inputs,
        outputs: vec![cfg.out_dir.clone(), outcome.best_checkpoint],
        manifest_path: manifest_for(&cfg.out_dir, true),
    })
}

fn cmd_train(a: TrainArgs) -> Result<RunReport> {
    run_train(build_train_config(a)?, "train")
}

fn cmd_distill(a: DistillArgs) -> Result<RunReport> {
    let mut cfg = match &a.config {
        Some(path) => read_train_config(path)?,
        None => TrainRunConfig::new(TrainStage::KdStudent, &a.corpus, &a.out),
    };
    cfg.stage = TrainStage::KdStudent;
    if a.config.is_some() {
        cfg.corpus = a.corpus;
        cfg.out_dir = a.out;
    }
    cfg.init_checkpoint = Some(a.init);
    cfg.teacher_scores = Some(a.teacher_scores);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_voices {
        cfg.batch_voices = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    run_train(cfg, "distill")
}

fn cmd_teacher(a: TeacherArgs) -> Result<RunReport> {
    let ds = load_dataset(&a.corpus)?;
    let store = FeatureStore::new(&ds)?;
    let audio = Scorer::load(&a.audio_ckpt)?;
    let lexical = Scorer::load(&a.lexical_ckpt)?;
    let scores = compose_teacher(&audio, &lexical, &ds, &store)?;
    write_teacher_jsonl(&a.out, &scores, &ds)?;
    Ok(RunReport {
        command: "teacher",
        config: serde_json::to_value(&scores.provenance)?,
        seed: 0,
        inputs: vec![a.corpus.join("manifest.jsonl"), a.audio_ckpt, a.lexical_ckpt],
        outputs: vec![a.out.clone()],
        manifest_path: manifest_for(&a.out, false),
    })
}

fn cmd_score(a: ScoreArgs) -> Result<RunReport> {
    let ds = load_dataset(&a.corpus)?;
    let store = FeatureStore::new(&ds)?;
    let scorer = Scorer::load(&a.ckpt)?;
    let mut rows = Vec::new();
    let splits: &[Split] = match a.split {
        SplitArg::Train => &[Split::Train],
        SplitArg::Validation => &[Split::Validation],
        SplitArg::Test => &[Split::Test],
        SplitArg::All => &Split::ALL,
    };
    for &split in splits {
        rows.extend(voicescreen::train::score_split(&scorer, &ds, &store, split)?);
    }
    write_score_jsonl(&a.out, &rows)?;
    let split_name = match a.split {
        SplitArg::Train => "train",
        SplitArg::Validation => "validation",
        SplitArg::Test => "test",
        SplitArg::All => "all",
    };
    Ok(RunReport {
        command: "score",
        config: json!({ "checkpoint": a.ckpt.display().to_string(), "split": split_name }),
        seed: 0,
        inputs: vec![a.corpus.join("manifest.jsonl"), a.ckpt],
        outputs: vec![a.out.clone()],
        manifest_path: manifest_for(&a.out, false),
    })
}

/// Full evaluation report: per-task screening metrics plus the score and
/// label correlation structure.
#[derive(Serialize)]
struct EvalReport {
    n_rows: usize,
    tasks: Vec<TaskReport>,
    correlations: CorrelationSection,
}

#[derive(Serialize)]
struct CorrelationSection {
    /// Depression score vs anxiety score.
    score_score: CorrelationBlock,
    /// Depression label vs anxiety label.
    label_label: CorrelationBlock,
    /// Score vs own label, per task.
    score_label: BTreeMap<String, CorrelationBlock>,
}

fn build_eval_report(rows: &[ScoreRow]) -> Result<EvalReport> {
    let mut tasks = Vec::new();
    for task in Task::ALL {
        tasks.push(task_aggregate(rows, task)?);
    }
    let dep_scores: Vec<f64> = rows.iter().map(|r| r.score_dep).collect();
    let anx_scores: Vec<f64> = rows.iter().map(|r| r.score_anx).collect();
    let dep_labels: Vec<f64> = rows.iter().map(|r| r.phq9 as f64).collect();
    let anx_labels: Vec<f64> = rows.iter().map(|r| r.gad7 as f64).collect();
    let mut score_label = BTreeMap::new();
    score_label.insert(
        Task::Depression.name().to_string(),
        correlations(&dep_scores, &dep_labels)?,
    );
    score_label.insert(
        Task::Anxiety.name().to_string(),
        correlations(&anx_scores, &anx_labels)?,
    );
    Ok(EvalReport {
        n_rows: rows.len(),
        tasks,
        correlations: CorrelationSection {
            score_score: correlations(&dep_scores, &anx_scores)?,
            label_label: correlations(&dep_labels, &anx_labels)?,
            score_label,
        },
    })
}

fn write_roc_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut out = String::from("task,cutoff,fpr,tpr,threshold\n");
    for task in Task::ALL {
        let scores: Vec<f64> = rows.iter().map(|r| r.score(task)).collect();
        for &cutoff in task_cutoffs(task) {
            let labels: Vec<bool> = rows.iter().map(|r| r.label(task) >= cutoff).collect();
            let pos = labels.iter().filter(|&&l| l).count();
            if pos == 0 || pos == labels.len() {
                continue;
            }
            for (fpr, tpr, threshold) in roc_points(&scores, &labels)? {
                out.push_str(&format!("{},{cutoff},{fpr},{tpr},{threshold}\n", task.name()));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn cmd_eval(a: EvalArgs) -> Result<RunReport> {
    let rows = read_score_jsonl(&a.scores)?;
    let report = build_eval_report(&rows)?;
    write_json(&a.out, &report)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(csv) = &a.roc_csv {
        write_roc_csv(csv, &rows)?;
        outputs.push(csv.clone());
    }
    Ok(RunReport {
        command: "eval",
        config: json!({ "scores": a.scores.display().to_string() }),
        seed: 0,
        inputs: vec![a.scores],
        outputs,
        manifest_path: manifest_for(&a.out, false),
    })
}

fn cmd_tune(a: TuneArgs) -> Result<RunReport> {
    let rows = read_score_jsonl(&a.scores)?;
    let task = match a.task {
        TaskArg::Depression => Task::Depression,
        TaskArg::Anxiety => Task::Anxiety,
    };
    let scores: Vec<f64> = rows.iter().map(|r| r.score(task)).collect();
    let cutoffs = task_cutoffs(task);
    let result = match a.method {
        MethodArg::SnEqSp => {
            let mut points = Vec::new();
            for &cutoff in cutoffs {
                let labels: Vec<bool> = rows.iter().map(|r| r.label(task) >= cutoff).collect();
                let pos = labels.iter().filter(|&&l| l).count();
                if pos == 0 || pos == labels.len() {
                    continue;
                }
                let op = sn_eq_sp(&scores, &labels)?;
                points.push(json!({
                    "cutoff": cutoff,
                    "threshold": op.threshold,
                    "sensitivity": op.sensitivity,
                    "specificity": op.specificity,
                    "min_sn_sp": op.min_sn_sp,
                }));
            }
            if points.is_empty() {
                return Err(Error::invalid("every cutoff is single-class; nothing to tune"));
            }
            json!({ "task": task.name(), "method": "sn_eq_sp", "points": points })
        }
        MethodArg::Dp => {
            let buckets: Vec<usize> = rows
                .iter()
                .map(|r| cutoffs.iter().filter(|&&c| r.label(task) >= c).count())
                .collect();
            let k = cutoffs.len() + 1;
            let thresholds = dp_thresholds(&scores, &buckets, k)?;
            let recall = macro_recall(&scores, &buckets, &thresholds, k);
            json!({
                "task": task.name(),
                "method": "dp",
                "classes": k,
                "cutoffs": cutoffs,
                "thresholds": thresholds,
                "macro_recall": recall,
            })
        }
    };
    write_json(&a.out, &result)?;
    Ok(RunReport {
        command: "tune",
        config: json!({
            "scores": a.scores.display().to_string(),
            "task": task.name(),
            "method": match a.method { MethodArg::SnEqSp => "sn_eq_sp", MethodArg::Dp => "dp" },
        }),
        seed: 0,
        inputs: vec![a.scores],
        outputs: vec![a.out.clone()],
        manifest_path: manifest_for(&a.out, false),
    })
}
