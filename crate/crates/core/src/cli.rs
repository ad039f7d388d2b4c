//! Command-line entry point: `label`, `evaluate`, `merge`, `inspect` and
//! `fixture`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint error.
//! Settings resolve as command-line flag, then config file, then default.
//! The config file holds one `key = value` per line; `#` starts a comment.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{evaluate, EvalOptions, LabelerInput, DEFAULT_ITERATIONS, DEFAULT_MIN_POSITIVE};
use crate::exec::Execution;
use crate::fixture::{build_script, Scenario};
use crate::gateway::{Gateway, HttpBackend, Script, ScriptedBackend, TranscriptStore, API_KEY_ENV};
use crate::labels_io::{
    fill_grid, join_organs, merge_supervision_targets, read_annotations, read_labels, read_reports, write_jsonl,
    write_labels, ColumnMap, PositivePolicy, ReadMode, Targets,
};
use crate::pipeline::{cell_scope, Labeler, PipelineError};
use crate::prompts::PromptBook;
use crate::schema::{Ablation, LlmConfig, Organ, UrgencyLevel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ENDPOINT: i32 = 3;

pub const DEFAULT_SEED: u64 = 0;

const CONFIG_KEYS: &[&str] = &[
    "endpoint",
    "model",
    "temperature",
    "max_tokens",
    "retry_limit",
    "parallelism",
    "ablations",
    "organs",
    "prompts",
    "backoff_base_ms",
    "request_timeout_secs",
    "seed",
    "iterations",
    "min_positive",
    "positive_policy",
    "threads",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Endpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Endpoint(_) => EXIT_ENDPOINT,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "leavs", version, about = "Organ-level abnormality labels from radiology reports")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label a report corpus.
    Label(LabelArgs),
    /// Score label files against human annotations.
    Evaluate(EvaluateArgs),
    /// Turn finding-type labels into per-organ supervision targets.
    Merge(MergeArgs),
    /// Print the stored exchanges of one (report, organ) cell.
    Inspect(InspectArgs),
    /// Build a scripted-backend response table from a scenario file.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
struct LlmArgs {
    /// Base URL of an OpenAI-compatible chat endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    retry_limit: Option<u32>,
    /// Cells labeled concurrently.
    #[arg(long)]
    parallelism: Option<usize>,
    /// no_cot, fast_filtration, no_filtration, individual_type_questions.
    #[arg(long = "ablation", value_delimiter = ',')]
    ablations: Vec<Ablation>,
    /// Comma-separated organ subset.
    #[arg(long, value_delimiter = ',')]
    organs: Vec<Organ>,
    /// Directory of template overrides.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    backoff_base_ms: Option<u64>,
    #[arg(long)]
    request_timeout_secs: Option<u64>,
    /// key = value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LabelArgs {
    /// Reports JSONL (`report_id`, `text`).
    #[arg(long)]
    reports: PathBuf,
    /// Output labels JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Use a scripted response table instead of an endpoint.
    #[arg(long)]
    scripted: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Skip malformed input lines instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Annotations as CSV or JSONL.
    #[arg(long)]
    annotations: PathBuf,
    /// Second label file compared against `--labels`.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "leavs")]
    name: String,
    #[arg(long, default_value = "reference")]
    reference_name: String,
    /// Add per-annotator rows.
    #[arg(long)]
    human_eval: bool,
    #[arg(long)]
    min_positive: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    positive_policy: Option<PositivePolicy>,
    /// CSV column mapping, e.g. `report_id=case,annotator=reader`.
    #[arg(long)]
    columns: Option<ColumnMap>,
    /// Bootstrap threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Metrics CSV; the JSON form is written alongside with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct MergeArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Add the any-abnormality target.
    #[arg(long)]
    any_abnormality: bool,
    /// Join left/right kidney and small/large bowel.
    #[arg(long)]
    join_organs: bool,
    #[arg(long)]
    positive_policy: Option<PositivePolicy>,
    /// Reports JSONL; its ids get all-negative rows when unlabeled.
    #[arg(long)]
    reports: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long)]
    report: String,
    #[arg(long)]
    organ: Organ,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(long)]
    reports: PathBuf,
    /// Scenario JSON describing the intended answers.
    #[arg(long)]
    scenario: PathBuf,
    /// Output script JSON, usable with `label --scripted`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// Parsed `key = value` settings.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile, CliError> {
        match path {
            None => Ok(ConfigFile::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                text.parse()
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.get(key) {
            Some(raw) => raw.parse().map_err(|e| CliError::Usage(format!("config `{key}`: {e}"))),
            None => Ok(default),
        }
    }

    fn pick_list<T: FromStr>(&self, flag: Vec<T>, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if !flag.is_empty() {
            return Ok(flag);
        }
        self.get(key)
            .map(|raw| {
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|e| CliError::Usage(format!("config `{key}`: {e}"))))
                    .collect()
            })
            .unwrap_or(Ok(Vec::new()))
    }
}

impl FromStr for ConfigFile {
    type Err = CliError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !CONFIG_KEYS.contains(&k) {
                return Err(CliError::Usage(format!("config line {}: unknown key `{k}`", n + 1)));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }
}

/// Settings shared by `label` and `fixture`.
struct LlmSettings {
    config: LlmConfig,
    organs: Vec<Organ>,
    prompts: PromptBook,
    prompts_dir: Option<PathBuf>,
}

fn resolve_llm(args: LlmArgs) -> Result<LlmSettings, CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let d = LlmConfig::default();
    let config = LlmConfig {
        endpoint_url: file.pick(args.endpoint, "endpoint", String::new())?,
        model_name: file.pick(args.model, "model", d.model_name)?,
        temperature: file.pick(args.temperature, "temperature", d.temperature)?,
        max_tokens: file.pick(args.max_tokens, "max_tokens", d.max_tokens)?,
        retry_limit: file.pick(args.retry_limit, "retry_limit", d.retry_limit)?,
        parallelism: file.pick(args.parallelism, "parallelism", d.parallelism)?,
        ablation_flags: file.pick_list(args.ablations, "ablations")?.into_iter().collect(),
        backoff_base_ms: file.pick(args.backoff_base_ms, "backoff_base_ms", d.backoff_base_ms)?,
        request_timeout_secs: file.pick(args.request_timeout_secs, "request_timeout_secs", d.request_timeout_secs)?,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut organs = file.pick_list(args.organs, "organs")?;
    if organs.is_empty() {
        organs = Organ::ALL.to_vec();
    }
    organs.sort();
    organs.dedup();
    let prompts_dir = args.prompts.or_else(|| file.get("prompts").map(PathBuf::from));
    let prompts = match &prompts_dir {
        Some(dir) => PromptBook::with_overrides(dir).map_err(|e| CliError::Usage(e.to_string()))?,
        None => PromptBook::default(),
    };
    Ok(LlmSettings { config, organs, prompts, prompts_dir })
}

fn read_mode(lenient: bool) -> ReadMode {
    if lenient { ReadMode::Lenient } else { ReadMode::Strict }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Run record written next to every output.
#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    version: String,
    config: Value,
    template_hashes: BTreeMap<String, String>,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    outputs: Value,
    manifest_hash: String,
}

/// Hash over command, config, templates, seed and code version only.
pub fn manifest_hash(
    command: &str,
    config: &Value,
    template_hashes: &BTreeMap<String, String>,
    seed: Option<u64>,
) -> String {
    let canonical = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "template_hashes": template_hashes,
        "seed": seed,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

fn write_manifest(
    path: &Path,
    command: &str,
    config: Value,
    template_hashes: BTreeMap<String, String>,
    seed: Option<u64>,
    inputs: &[(&str, &Path)],
    outputs: Value,
) -> Result<(), CliError> {
    let mut hashes = BTreeMap::new();
    for (name, p) in inputs {
        hashes.insert(name.to_string(), file_sha256(p)?);
    }
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        manifest_hash: manifest_hash(command, &config, &template_hashes, seed),
        config,
        template_hashes,
        seed,
        inputs: hashes,
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(data)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn llm_config_json(s: &LlmSettings, backend: &str) -> Value {
    json!({
        "backend": backend,
        "endpoint": s.config.endpoint_url,
        "model": s.config.model_name,
        "temperature": s.config.temperature,
        "max_tokens": s.config.max_tokens,
        "retry_limit": s.config.retry_limit,
        "parallelism": s.config.parallelism,
        "ablations": s.config.ablation_flags.iter().map(|a| a.token()).collect::<Vec<_>>(),
        "organs": s.organs.iter().map(|o| o.token()).collect::<Vec<_>>(),
        "prompts": s.prompts_dir.as_ref().map(|p| p.display().to_string()),
    })
}

fn cmd_label(args: LabelArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let settings = resolve_llm(args.llm)?;
    let (gateway, backend) = match (&args.scripted, settings.config.endpoint_url.as_str()) {
        (Some(script_path), _) => {
            let script = Script::load(script_path).map_err(|e| data(format!("{}: {e}", script_path.display())))?;
            (Gateway::new(ScriptedBackend::new(script)), "scripted")
        }
        (None, "") => return Err(CliError::Usage("either --endpoint or --scripted is required".into())),
        (None, endpoint) => {
            if settings.config.model_name.is_empty() {
                return Err(CliError::Usage("--model is required with --endpoint".into()));
            }
            let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            let timeout = Duration::from_secs(settings.config.request_timeout_secs);
            (Gateway::new(HttpBackend::new(endpoint, key, timeout)), "http")
        }
    };
    let reports = read_reports(&args.reports, read_mode(args.lenient)).map_err(data)?.records;

    let checkpoint = args.checkpoint.unwrap_or_else(|| with_suffix(&args.out, ".checkpoint.json"));
    let transcripts = args.transcripts.unwrap_or_else(|| with_suffix(&args.out, ".transcripts.jsonl"));
    if !args.resume {
        for p in [&checkpoint, &transcripts] {
            if p.exists() {
                fs::remove_file(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            }
        }
    }
    let store = TranscriptStore::open(&transcripts).map_err(data)?;
    let labeler = Labeler::new(gateway, settings.config.clone())
        .map_err(|e| CliError::Usage(e.to_string()))?
        .with_prompts(settings.prompts.clone())
        .with_organs(settings.organs.iter().copied())
        .with_transcripts(store);

    let run = labeler.run_corpus(&reports, Some(&checkpoint)).map_err(|e| match e {
        PipelineError::Endpoint(_) => {
            CliError::Endpoint(format!("{e}; progress saved to {}", checkpoint.display()))
        }
        PipelineError::CheckpointMismatch { .. } => CliError::Usage(format!("{e}; rerun without --resume")),
        other => data(other),
    })?;

    write_labels(&args.out, &run.outputs).map_err(data)?;
    let failures_path = with_suffix(&args.out, ".failures.jsonl");
    write_jsonl(&failures_path, &run.failures).map_err(data)?;

    let manifest = args.manifest.unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    let mut inputs: Vec<(&str, &Path)> = vec![("reports", args.reports.as_path())];
    if let Some(s) = &args.scripted {
        inputs.push(("script", s.as_path()));
    }
    write_manifest(
        &manifest,
        "label",
        llm_config_json(&settings, backend),
        settings.prompts.hashes(),
        None,
        &inputs,
        json!({
            "corpus_id": run.corpus_id,
            "labels": run.outputs.len(),
            "cell_failures": run.failures.len(),
        }),
    )?;
    writeln!(
        out,
        "labeled {} reports: {} labels, {} cell failures -> {}",
        reports.len(),
        run.outputs.len(),
        run.failures.len(),
        args.out.display()
    )
    .map_err(data)?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let seed = file.pick(args.seed, "seed", DEFAULT_SEED)?;
    let n_iter = file.pick(args.iterations, "iterations", DEFAULT_ITERATIONS)?;
    let min_positive = file.pick(args.min_positive, "min_positive", DEFAULT_MIN_POSITIVE)?;
    let policy = file.pick(args.positive_policy, "positive_policy", PositivePolicy::default())?;
    let threads = file.pick(args.threads, "threads", 0usize)?;
    if n_iter == 0 {
        return Err(CliError::Usage("--iterations must be positive".into()));
    }
    let execution = if threads == 0 { Execution::Parallel { threads: 0 } } else { Execution::with_threads(threads) };

    let mode = read_mode(args.lenient);
    let labels = read_labels(&args.labels, mode).map_err(data)?.records;
    let reference = match &args.reference {
        Some(p) => Some(read_labels(p, mode).map_err(data)?.records),
        None => None,
    };
    let columns = args.columns.clone().unwrap_or_default();
    let annotations = read_annotations(&args.annotations, mode, &columns).map_err(data)?.records;
    if annotations.is_empty() {
        return Err(data(format!("{}: no annotations", args.annotations.display())));
    }

    let mut opts = EvalOptions::new(seed);
    opts.min_positive = min_positive;
    opts.policy = policy;
    opts.human_eval = args.human_eval;
    opts.bootstrap.n_iter = n_iter;
    opts.bootstrap.execution = execution;
    let primary = LabelerInput { name: args.name.clone(), labels: &labels };
    let reference_input = reference.as_ref().map(|r| LabelerInput { name: args.reference_name.clone(), labels: r });
    let table = evaluate(&primary, reference_input.as_ref(), &annotations, &opts).map_err(data)?;

    fs::write(&args.out, table.to_csv()).map_err(|e| data(format!("{}: {e}", args.out.display())))?;
    let json_path = args.out.with_extension("json");
    fs::write(&json_path, table.to_json() + "\n").map_err(|e| data(format!("{}: {e}", json_path.display())))?;

    let manifest = args.manifest.unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    let mut inputs: Vec<(&str, &Path)> = vec![("labels", &args.labels), ("annotations", &args.annotations)];
    if let Some(r) = &args.reference {
        inputs.push(("reference", r.as_path()));
    }
    write_manifest(
        &manifest,
        "evaluate",
        json!({
            "name": args.name,
            "reference_name": args.reference.as_ref().map(|_| args.reference_name.clone()),
            "human_eval": args.human_eval,
            "min_positive": min_positive,
            "iterations": n_iter,
            "positive_policy": policy,
            "columns": args.columns.is_some().then(|| format!("{columns:?}")),
        }),
        BTreeMap::new(),
        Some(seed),
        &inputs,
        json!({ "rows": table.rows.len(), "tied_cells": table.tied_cells }),
    )?;
    writeln!(out, "{} metric rows -> {}", table.rows.len(), args.out.display()).map_err(data)?;
    Ok(())
}

/// One supervision row as written by `merge`.
#[derive(Debug, Serialize)]
struct MergeRecord<'a> {
    report_id: &'a str,
    organ: &'a str,
    #[serde(flatten)]
    targets: &'a Targets,
    #[serde(skip_serializing_if = "Option::is_none")]
    any_abnormality: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    any_abnormality_urgency: Option<UrgencyLevel>,
}

fn cmd_merge(args: MergeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let policy = file.pick(args.positive_policy, "positive_policy", PositivePolicy::default())?;
    let mode = read_mode(args.lenient);
    let labels = read_labels(&args.labels, mode).map_err(data)?.records;
    let mut ids: Vec<String> = labels.iter().map(|l| l.report_id.clone()).collect();
    if let Some(p) = &args.reports {
        ids.extend(read_reports(p, mode).map_err(data)?.records.into_iter().map(|r| r.id));
    }
    ids.sort();
    ids.dedup();
    let merged = fill_grid(merge_supervision_targets(&labels, policy), ids.iter().map(String::as_str), &Organ::ALL);

    let any = |t: &Targets| (args.any_abnormality.then(|| t.any_abnormality()), args.any_abnormality.then(|| t.any_abnormality_urgency()).flatten());
    let count;
    if args.join_organs {
        let joined = join_organs(&merged);
        let records: Vec<MergeRecord<'_>> = joined
            .iter()
            .map(|j| {
                let (a, u) = any(&j.targets);
                MergeRecord { report_id: &j.report_id, organ: j.organ.token(), targets: &j.targets, any_abnormality: a, any_abnormality_urgency: u }
            })
            .collect();
        count = records.len();
        write_jsonl(&args.out, &records).map_err(data)?;
    } else {
        let records: Vec<MergeRecord<'_>> = merged
            .iter()
            .map(|s| {
                let (a, u) = any(&s.targets);
                MergeRecord { report_id: &s.report_id, organ: s.organ.token(), targets: &s.targets, any_abnormality: a, any_abnormality_urgency: u }
            })
            .collect();
        count = records.len();
        write_jsonl(&args.out, &records).map_err(data)?;
    }

    let manifest = args.manifest.unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    let mut inputs: Vec<(&str, &Path)> = vec![("labels", args.labels.as_path())];
    if let Some(r) = &args.reports {
        inputs.push(("reports", r.as_path()));
    }
    write_manifest(
        &manifest,
        "merge",
        json!({
            "positive_policy": policy,
            "any_abnormality": args.any_abnormality,
            "join_organs": args.join_organs,
        }),
        BTreeMap::new(),
        None,
        &inputs,
        json!({ "records": count }),
    )?;
    writeln!(out, "{count} supervision records -> {}", args.out.display()).map_err(data)?;
    Ok(())
}

fn cmd_inspect(args: InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let store = TranscriptStore::load(&args.transcripts).map_err(data)?;
    let scope = cell_scope(&args.report, args.organ);
    let entries = store.scope_entries(&scope);
    if entries.is_empty() {
        return Err(data(format!("no exchanges recorded for report `{}`, {}", args.report, args.organ)));
    }
    if args.json {
        let text = serde_json::to_string_pretty(&entries).map_err(data)?;
        writeln!(out, "{text}").map_err(data)?;
        return Ok(());
    }
    writeln!(out, "report {} / {}: {} exchanges", args.report, args.organ, entries.len()).map_err(data)?;
    for e in &entries {
        let ex = &e.exchange;
        writeln!(out, "\n=== {} [{}] attempt {} ===", e.id, e.stage, ex.attempt).map_err(data)?;
        if let Some(last) = ex.messages.last() {
            writeln!(out, "--- {} ---\n{}", last.role.as_str(), last.content).map_err(data)?;
        }
        writeln!(out, "--- response ---\n{}", ex.response).map_err(data)?;
    }
    Ok(())
}

fn cmd_fixture(args: FixtureArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let settings = resolve_llm(args.llm)?;
    let reports = read_reports(&args.reports, ReadMode::Strict).map_err(data)?.records;
    let text = fs::read_to_string(&args.scenario).map_err(|e| data(format!("{}: {e}", args.scenario.display())))?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", args.scenario.display())))?;
    let script = build_script(&reports, &settings.organs, &scenario, &settings.config, &settings.prompts)
        .map_err(data)?;
    script.save(&args.out).map_err(|e| data(format!("{}: {e}", args.out.display())))?;
    let manifest = args.manifest.unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    write_manifest(
        &manifest,
        "fixture",
        llm_config_json(&settings, "scripted"),
        settings.prompts.hashes(),
        None,
        &[("reports", args.reports.as_path()), ("scenario", args.scenario.as_path())],
        json!({ "responses": script.responses.len() }),
    )?;
    writeln!(out, "{} scripted responses -> {}", script.responses.len(), args.out.display()).map_err(data)?;
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<'a, I, T>(args: I, out: &'a mut dyn Write, err: &'a mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let sink: &mut dyn Write = if code == EXIT_OK { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Label(a) => cmd_label(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Merge(a) => cmd_merge(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
        Command::Fixture(a) => cmd_fixture(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
