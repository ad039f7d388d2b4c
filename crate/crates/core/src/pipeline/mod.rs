//! Stage orchestration: sentence filtration, finding-type assessment,
//! uncertainty and urgency, run per (report, organ) cell.
//!
//! Every stage except per-sentence filtration is asked twice: once for the
//! free-form (optionally chain-of-thought) answer, once for a fixed-format
//! summary that is parsed. An unparseable answer triggers one stricter
//! re-ask before the cell is marked as failed.
//!
//! With no ablations and `n` sentences of which `k1` are picked by the list
//! step, one organ costs `2 + (n - k1) + 2 + 2 * (types + present types)`
//! exchanges, or zero beyond filtration when no sentence survives.

mod checkpoint;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::gateway::{Gateway, GatewayError, Message, TranscriptError, TranscriptScope, TranscriptStore};
use crate::prompts::{
    parse_sentence_list, parse_type_choices, parse_uncertainty, parse_urgency, parse_yes_no,
    ParseError, PromptBook, PromptError, PromptOptions, PromptStage,
};
use crate::schema::{
    Ablation, FindingType, LlmConfig, Organ, OrganFindingLabel, Report, SchemaError, Sentence,
    UncertaintyCategory, UrgencyLevel,
};

pub use checkpoint::{CellRecord, CellState, Checkpoint, CHECKPOINT_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Ask,
    Summary,
    Reask,
}

/// Label attached to every stored exchange, e.g. `filtration_per_sentence[3]`
/// or `urgency[focal]/summary`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExchangeTag {
    pub stage: PromptStage,
    pub detail: Option<String>,
    pub step: Step,
}

impl fmt::Display for ExchangeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stage.as_str())?;
        if let Some(d) = &self.detail {
            write!(f, "[{d}]")?;
        }
        match self.step {
            Step::Ask => Ok(()),
            Step::Summary => f.write_str("/summary"),
            Step::Reask => f.write_str("/reask"),
        }
    }
}

impl FromStr for ExchangeTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, step) = match s.rsplit_once('/') {
            Some((h, "summary")) => (h, Step::Summary),
            Some((h, "reask")) => (h, Step::Reask),
            _ => (s, Step::Ask),
        };
        let (stage, detail) = match head.split_once('[') {
            Some((stage, rest)) => {
                let d = rest.strip_suffix(']').ok_or_else(|| format!("bad tag {s}"))?;
                (stage, Some(d.to_string()))
            }
            None => (head, None),
        };
        let stage = [
            PromptStage::FiltrationList,
            PromptStage::FiltrationPerSentence,
            PromptStage::TypeAssessment,
            PromptStage::PerType,
            PromptStage::Uncertainty,
            PromptStage::Urgency,
        ]
        .into_iter()
        .find(|p| p.as_str() == stage)
        .ok_or_else(|| format!("unknown stage in tag {s}"))?;
        Ok(ExchangeTag { stage, detail, step })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// A stage failure tagged with the cell and stage it happened in.
#[derive(Debug, Error)]
#[error("report {report_id}, {organ}, {stage}: {source}")]
pub struct CellError {
    pub report_id: String,
    pub organ: Organ,
    pub stage: String,
    #[source]
    pub source: StageError,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    /// The endpoint stayed unreachable; the run stops with its checkpoint
    /// intact.
    #[error("endpoint failure: {0}")]
    Endpoint(#[source] CellError),
    #[error("transcript store: {0}")]
    Transcript(#[from] TranscriptError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint was written by a different configuration (expected {expected}, found {found})")]
    CheckpointMismatch { expected: String, found: String },
    #[error("duplicate report id `{0}`")]
    DuplicateReportId(String),
    #[error(transparent)]
    Config(#[from] SchemaError),
}

/// A cell-level problem that did not stop the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finding_type: Option<FindingType>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub report_id: String,
    pub organ: Organ,
    pub failure: CellFailure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellOutcome {
    pub report_id: String,
    pub organ: Organ,
    pub filtered: BTreeSet<usize>,
    pub labels: Vec<OrganFindingLabel>,
    pub failures: Vec<CellFailure>,
    pub exchanges: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReportOutcome {
    pub labels: Vec<OrganFindingLabel>,
    pub failures: Vec<RunLogEntry>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub corpus_id: String,
    pub config: LlmConfig,
    pub checkpoint: Checkpoint,
    /// Sorted by report id, organ and finding type.
    pub outputs: Vec<OrganFindingLabel>,
    pub failures: Vec<RunLogEntry>,
}

/// Collects the exchanges of one (report, organ) cell.
pub struct CellRecorder<'s> {
    scope: TranscriptScope<'s>,
    report_id: String,
    organ: Organ,
    refs: Vec<String>,
}

impl CellRecorder<'_> {
    pub fn transcript_refs(&self) -> &[String] {
        &self.refs
    }

    pub fn exchanges(&self) -> usize {
        self.scope.issued()
    }
}

/// Scope name shared by the transcript store and `inspect`.
pub fn cell_scope(report_id: &str, organ: Organ) -> String {
    format!("{report_id}/{organ}")
}

/// Hash of every setting that changes labeling output. Endpoint, retry and
/// parallelism settings are excluded so a run may resume elsewhere.
pub fn config_hash(config: &LlmConfig, prompts: &PromptBook) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.model_name.as_bytes());
    hasher.update([0]);
    hasher.update(config.temperature.to_bits().to_le_bytes());
    hasher.update(config.max_tokens.to_le_bytes());
    for flag in &config.ablation_flags {
        hasher.update(flag.token().as_bytes());
        hasher.update([0]);
    }
    for (name, hash) in prompts.hashes() {
        hasher.update(name.as_bytes());
        hasher.update(hash.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Order-independent identifier of a report collection.
pub fn corpus_id(reports: &[Report]) -> String {
    let mut pairs: Vec<(&str, &str)> = reports.iter().map(|r| (r.id.as_str(), r.text.as_str())).collect();
    pairs.sort();
    let mut hasher = Sha256::new();
    for (id, text) in pairs {
        hasher.update(id.as_bytes());
        hasher.update([0x1f]);
        hasher.update(text.as_bytes());
        hasher.update([0x1e]);
    }
    hex::encode(hasher.finalize())[..16].to_string()
}

pub struct Labeler {
    gateway: Gateway,
    config: LlmConfig,
    prompts: PromptBook,
    organs: Vec<Organ>,
    transcripts: TranscriptStore,
}

impl Labeler {
    pub fn new(gateway: Gateway, config: LlmConfig) -> Result<Self, SchemaError> {
        config.validate()?;
        Ok(Labeler {
            gateway,
            config,
            prompts: PromptBook::default(),
            organs: Organ::ALL.to_vec(),
            transcripts: TranscriptStore::in_memory(),
        })
    }

    pub fn with_prompts(mut self, prompts: PromptBook) -> Self {
        self.prompts = prompts;
        self
    }

    /// Restricts labeling to `organs`, kept in canonical order.
    pub fn with_organs(mut self, organs: impl IntoIterator<Item = Organ>) -> Self {
        let set: BTreeSet<Organ> = organs.into_iter().collect();
        self.organs = set.into_iter().collect();
        self
    }

    pub fn with_transcripts(mut self, transcripts: TranscriptStore) -> Self {
        self.transcripts = transcripts;
        self
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn prompts(&self) -> &PromptBook {
        &self.prompts
    }

    pub fn organs(&self) -> &[Organ] {
        &self.organs
    }

    pub fn transcripts(&self) -> &TranscriptStore {
        &self.transcripts
    }

    fn opts(&self) -> PromptOptions {
        PromptOptions::from(&self.config)
    }

    pub fn recorder(&self, report_id: &str, organ: Organ) -> CellRecorder<'_> {
        CellRecorder {
            scope: self.transcripts.scope(cell_scope(report_id, organ)),
            report_id: report_id.to_string(),
            organ,
            refs: Vec::new(),
        }
    }

    fn tag_error(rec: &CellRecorder<'_>, tag: &ExchangeTag, source: impl Into<StageError>) -> CellError {
        CellError {
            report_id: rec.report_id.clone(),
            organ: rec.organ,
            stage: tag.to_string(),
            source: source.into(),
        }
    }

    fn exchange(
        &self,
        rec: &mut CellRecorder<'_>,
        tag: &ExchangeTag,
        messages: &[Message],
    ) -> Result<String, CellError> {
        let ex = self
            .gateway
            .chat(messages, &self.config)
            .map_err(|e| Self::tag_error(rec, tag, e))?;
        let response = ex.response.clone();
        let id = rec.scope.put(&tag.to_string(), ex).map_err(|e| Self::tag_error(rec, tag, e))?;
        rec.refs.push(id);
        Ok(response)
    }

    /// One question: the free-form ask, an optional summary follow-up, and a
    /// single stricter re-ask if the answer does not parse.
    fn ask<T>(
        &self,
        rec: &mut CellRecorder<'_>,
        stage: PromptStage,
        detail: Option<String>,
        messages: Result<Vec<Message>, PromptError>,
        summarize: bool,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, CellError> {
        let mut tag = ExchangeTag { stage, detail, step: Step::Ask };
        let messages = messages.map_err(|e| Self::tag_error(rec, &tag, e))?;
        let answer = self.exchange(rec, &tag, &messages)?;
        let (conversation, text) = if summarize {
            tag.step = Step::Summary;
            let follow_up = self
                .prompts
                .summary(&messages, &answer, stage)
                .map_err(|e| Self::tag_error(rec, &tag, e))?;
            let summary = self.exchange(rec, &tag, &follow_up)?;
            (follow_up, summary)
        } else {
            (messages, answer)
        };
        match parse(&text) {
            Ok(v) => Ok(v),
            Err(first) => {
                log::debug!("{}: {first}; re-asking", tag);
                tag.step = Step::Reask;
                let reask = self
                    .prompts
                    .reask(&conversation, &text, stage)
                    .map_err(|e| Self::tag_error(rec, &tag, e))?;
                let retry = self.exchange(rec, &tag, &reask)?;
                parse(&retry).map_err(|e| Self::tag_error(rec, &tag, e))
            }
        }
    }

    /// Sentence indices informative for `organ`: the list step, then a
    /// yes/no question for every sentence the list step left out.
    pub fn filter_sentences(
        &self,
        rec: &mut CellRecorder<'_>,
        report: &Report,
        organ: Organ,
    ) -> Result<BTreeSet<usize>, CellError> {
        let n = report.sentences.len();
        if self.config.has(Ablation::NoFiltration) {
            return Ok((0..n).collect());
        }
        let mut selected = self
            .ask(
                rec,
                PromptStage::FiltrationList,
                None,
                self.prompts.filtration_list(report, organ),
                true,
                |s| parse_sentence_list(s, n).map(|sel| sel.indices),
            )?;
        if self.config.has(Ablation::FastFiltration) {
            return Ok(selected);
        }
        let opts = self.opts();
        let remaining: Vec<&Sentence> =
            report.sentences.iter().filter(|s| !selected.contains(&s.index)).collect();
        for sentence in remaining {
            let informative = self.ask(
                rec,
                PromptStage::FiltrationPerSentence,
                Some(sentence.index.to_string()),
                self.prompts.filtration_sentence(sentence, organ, opts),
                false,
                parse_yes_no,
            )?;
            if informative {
                selected.insert(sentence.index);
            }
        }
        Ok(selected)
    }

    /// Finding types mentioned for `organ`. No sentences means nothing was
    /// said about the organ: `{Normal}` without asking.
    pub fn assess_finding_types(
        &self,
        rec: &mut CellRecorder<'_>,
        sentences: &[&Sentence],
        organ: Organ,
    ) -> Result<BTreeSet<FindingType>, CellError> {
        if sentences.is_empty() {
            return Ok([FindingType::Normal].into());
        }
        let opts = self.opts();
        if !opts.individual_type_questions {
            return self.ask(
                rec,
                PromptStage::TypeAssessment,
                None,
                self.prompts.type_assessment(sentences, organ, opts),
                true,
                parse_type_choices,
            );
        }
        let mut found = BTreeSet::new();
        for t in FindingType::ALL {
            let yes = self.ask(
                rec,
                PromptStage::PerType,
                Some(t.token().to_string()),
                self.prompts.per_type(sentences, organ, t, opts),
                true,
                parse_yes_no,
            )?;
            if yes {
                found.insert(t);
            }
        }
        Ok(found)
    }

    pub fn assess_uncertainty(
        &self,
        rec: &mut CellRecorder<'_>,
        sentences: &[&Sentence],
        organ: Organ,
        finding_type: FindingType,
    ) -> Result<UncertaintyCategory, CellError> {
        self.ask(
            rec,
            PromptStage::Uncertainty,
            Some(finding_type.token().to_string()),
            self.prompts.uncertainty(sentences, organ, finding_type, self.opts()),
            true,
            parse_uncertainty,
        )
    }

    /// Only defined for findings whose uncertainty is Positive or Possible.
    pub fn assess_urgency(
        &self,
        rec: &mut CellRecorder<'_>,
        sentences: &[&Sentence],
        organ: Organ,
        finding_type: FindingType,
        uncertainty: UncertaintyCategory,
    ) -> Result<UrgencyLevel, CellError> {
        let messages = if uncertainty.is_present() {
            self.prompts.urgency(sentences, organ, finding_type, self.opts())
        } else {
            Err(PromptError::Precondition(format!(
                "urgency is only assessed for present or possible findings, not {uncertainty}"
            )))
        };
        self.ask(
            rec,
            PromptStage::Urgency,
            Some(finding_type.token().to_string()),
            messages,
            true,
            parse_urgency,
        )
    }

    /// Runs all stages for one cell. Parse and prompt problems become
    /// [`CellFailure`]s; only an unreachable endpoint or a broken transcript
    /// store is returned as an error.
    pub fn label_cell(&self, report: &Report, organ: Organ) -> Result<CellOutcome, PipelineError> {
        let mut rec = self.recorder(&report.id, organ);
        let mut failures = Vec::new();
        let mut labels = Vec::new();

        let filtered = match self.filter_sentences(&mut rec, report, organ) {
            Ok(f) => Some(f),
            Err(e) => {
                failures.push(classify(e, None)?);
                None
            }
        };
        if let Some(filtered) = &filtered {
            let sentences = report.sentence_texts(filtered);
            match self.assess_finding_types(&mut rec, &sentences, organ) {
                Err(e) => failures.push(classify(e, None)?),
                Ok(types) => {
                    let base_refs = rec.refs.clone();
                    let evidence: Vec<usize> = filtered.iter().copied().collect();
                    for t in types.into_iter().filter(|t| !t.is_non_finding()) {
                        let start = rec.refs.len();
                        match self.assess_type(&mut rec, &sentences, organ, t) {
                            Ok((uncertainty, urgency)) => {
                                let mut refs = base_refs.clone();
                                refs.extend_from_slice(&rec.refs[start..]);
                                labels.push(OrganFindingLabel {
                                    report_id: report.id.clone(),
                                    organ,
                                    finding_type: t,
                                    uncertainty,
                                    urgency,
                                    evidence: evidence.clone(),
                                    transcript_refs: refs,
                                });
                            }
                            Err(e) => failures.push(classify(e, Some(t))?),
                        }
                    }
                }
            }
        }
        for f in &failures {
            log::warn!("report {} {organ}: {} failed: {}", report.id, f.stage, f.message);
        }
        Ok(CellOutcome {
            report_id: report.id.clone(),
            organ,
            filtered: filtered.unwrap_or_default(),
            labels,
            failures,
            exchanges: rec.exchanges(),
        })
    }

    fn assess_type(
        &self,
        rec: &mut CellRecorder<'_>,
        sentences: &[&Sentence],
        organ: Organ,
        t: FindingType,
    ) -> Result<(UncertaintyCategory, Option<UrgencyLevel>), CellError> {
        let uncertainty = self.assess_uncertainty(rec, sentences, organ, t)?;
        let urgency = if uncertainty.is_present() {
            Some(self.assess_urgency(rec, sentences, organ, t, uncertainty)?)
        } else {
            None
        };
        Ok((uncertainty, urgency))
    }

    /// Labels every configured organ of one report, sequentially.
    pub fn label_report(&self, report: &Report) -> Result<ReportOutcome, PipelineError> {
        let mut out = ReportOutcome::default();
        for &organ in &self.organs {
            let cell = self.label_cell(report, organ)?;
            out.labels.extend(cell.labels);
            out.failures.extend(cell.failures.into_iter().map(|failure| RunLogEntry {
                report_id: report.id.clone(),
                organ,
                failure,
            }));
        }
        Ok(out)
    }

    /// Labels a corpus with up to `config.parallelism` cells in flight,
    /// checkpointing after every cell. Cells already present in an existing
    /// checkpoint are skipped.
    pub fn run_corpus(&self, reports: &[Report], checkpoint_path: Option<&Path>) -> Result<PipelineRun, PipelineError> {
        let mut seen = HashSet::new();
        for r in reports {
            if !seen.insert(r.id.as_str()) {
                return Err(PipelineError::DuplicateReportId(r.id.clone()));
            }
        }
        let corpus = corpus_id(reports);
        let hash = config_hash(&self.config, &self.prompts);
        let cp_err = |source| PipelineError::Checkpoint {
            path: checkpoint_path.map(|p| p.display().to_string()).unwrap_or_default(),
            source,
        };
        let initial = match checkpoint_path {
            Some(path) if path.exists() => {
                let cp = Checkpoint::load(path).map_err(cp_err)?;
                if cp.config_hash != hash {
                    return Err(PipelineError::CheckpointMismatch { expected: hash, found: cp.config_hash });
                }
                log::info!("resuming: {} cells already completed", cp.completed_cells());
                cp
            }
            _ => Checkpoint::new(corpus.clone(), hash),
        };
        if let Some(path) = checkpoint_path {
            initial.save(path).map_err(cp_err)?;
        }

        let pending: Vec<(&Report, Organ)> = reports
            .iter()
            .flat_map(|r| self.organs.iter().map(move |&o| (r, o)))
            .filter(|(r, o)| !initial.is_completed(&r.id, *o))
            .collect();
        log::info!("{} cells to label", pending.len());

        let state = Mutex::new(initial);
        let execution = Execution::with_threads(self.config.parallelism);
        exec::try_for_each(execution, &pending, |&(report, organ)| {
            let cell = self.label_cell(report, organ)?;
            let record = CellRecord {
                state: if cell.failures.is_empty() { CellState::Completed } else { CellState::CompletedWithFailures },
                exchanges: cell.exchanges,
                labels: cell.labels,
                failures: cell.failures,
            };
            let mut cp = state.lock().unwrap_or_else(|e| e.into_inner());
            cp.record(&report.id, organ, record);
            if let Some(path) = checkpoint_path {
                cp.save(path).map_err(cp_err)?;
            }
            Ok::<(), PipelineError>(())
        })?;

        let checkpoint = state.into_inner().unwrap_or_else(|e| e.into_inner());
        let mut outputs = Vec::new();
        let mut failures = Vec::new();
        for report in reports {
            for &organ in &self.organs {
                if let Some(rec) = checkpoint.get(&report.id, organ) {
                    outputs.extend(rec.labels.iter().cloned());
                    failures.extend(rec.failures.iter().cloned().map(|failure| RunLogEntry {
                        report_id: report.id.clone(),
                        organ,
                        failure,
                    }));
                }
            }
        }
        outputs.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        failures.sort_by(|a, b| (&a.report_id, a.organ).cmp(&(&b.report_id, b.organ)));
        Ok(PipelineRun { corpus_id: corpus, config: self.config.clone(), checkpoint, outputs, failures })
    }
}

fn classify(e: CellError, finding_type: Option<FindingType>) -> Result<CellFailure, PipelineError> {
    match e.source {
        StageError::Gateway(GatewayError::ExhaustedRetries { .. }) => Err(PipelineError::Endpoint(e)),
        StageError::Transcript(t) => Err(PipelineError::Transcript(t)),
        other => Ok(CellFailure { stage: e.stage, finding_type, message: other.to_string() }),
    }
}
