//! Builds scripted-backend response tables from a compact description of
//! what the model "should" answer for each (report, organ) cell.
//!
//! The builder replays the labeling flow with the same prompt book and
//! configuration as the pipeline, so every fingerprint it records is one the
//! pipeline will ask for.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Message, Script, DEFAULT_FALLBACK};
use crate::pipeline::{ExchangeTag, Step};
use crate::prompts::{format_type_choices, PromptBook, PromptError, PromptOptions, PromptStage};
use crate::schema::{
    Ablation, FindingType, LlmConfig, Organ, Report, Sentence, UncertaintyCategory, UrgencyLevel,
};

/// Reply used wherever a scenario asks for an unparseable answer.
pub const GARBLED: &str = "I cannot determine this.";

const REASONING: &str = "Let me go through the relevant sentences one at a time.";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("scenario names unknown report `{0}`")]
    UnknownReport(String),
    #[error("report `{report}`: identical prompts at `{tag}` are scripted with different answers")]
    Conflict { report: String, tag: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingScript {
    pub uncertainty: UncertaintyCategory,
    #[serde(default)]
    pub urgency: Option<UrgencyLevel>,
}

impl Default for FindingScript {
    fn default() -> Self {
        FindingScript { uncertainty: UncertaintyCategory::Positive, urgency: Some(UrgencyLevel::LOW) }
    }
}

/// Intended answers for one cell. Anything left out answers "nothing here".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellScript {
    pub report_id: String,
    pub organ: Organ,
    /// Sentences returned by the list step.
    #[serde(default)]
    pub step1: BTreeSet<usize>,
    /// Sentences answered "yes" by the per-sentence step.
    #[serde(default)]
    pub step2: BTreeSet<usize>,
    #[serde(default)]
    pub types: BTreeSet<FindingType>,
    /// Per-type answers; types without an entry are Positive with urgency 1.
    #[serde(default)]
    pub findings: BTreeMap<FindingType, FindingScript>,
    /// Exchange tags (e.g. `type_assessment/summary`) answered with
    /// [`GARBLED`]. Garbling a `/reask` tag makes the stage fail.
    #[serde(default)]
    pub garbled: BTreeSet<String>,
}

impl CellScript {
    pub fn empty(report_id: &str, organ: Organ) -> Self {
        CellScript {
            report_id: report_id.to_string(),
            organ,
            step1: BTreeSet::new(),
            step2: BTreeSet::new(),
            types: BTreeSet::new(),
            findings: BTreeMap::new(),
            garbled: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub fallback: Option<String>,
    #[serde(default)]
    pub cells: Vec<CellScript>,
}

/// Script covering every (report, organ) pair in `reports` x `organs`.
pub fn build_script(
    reports: &[Report],
    organs: &[Organ],
    scenario: &Scenario,
    config: &LlmConfig,
    prompts: &PromptBook,
) -> Result<Script, FixtureError> {
    let mut cells: BTreeMap<(&str, Organ), &CellScript> = BTreeMap::new();
    for cell in &scenario.cells {
        if !reports.iter().any(|r| r.id == cell.report_id) {
            return Err(FixtureError::UnknownReport(cell.report_id.clone()));
        }
        cells.insert((cell.report_id.as_str(), cell.organ), cell);
    }
    let mut builder = Builder {
        script: Script {
            fallback: scenario.fallback.clone().unwrap_or_else(|| DEFAULT_FALLBACK.to_string()),
            ..Script::default()
        },
        prompts,
        config,
        opts: PromptOptions::from(config),
    };
    for report in reports {
        for &organ in organs {
            let empty = CellScript::empty(&report.id, organ);
            let cell = cells.get(&(report.id.as_str(), organ)).copied().unwrap_or(&empty);
            builder.cell(report, organ, cell)?;
        }
    }
    Ok(builder.script)
}

struct Builder<'a> {
    script: Script,
    prompts: &'a PromptBook,
    config: &'a LlmConfig,
    opts: PromptOptions,
}

impl Builder<'_> {
    fn put(&mut self, cell: &CellScript, tag: String, messages: &[Message], reply: String) -> Result<(), FixtureError> {
        if self.script.lookup(messages).is_some_and(|prev| prev != reply) {
            return Err(FixtureError::Conflict { report: cell.report_id.clone(), tag });
        }
        self.script.insert(messages, reply);
        Ok(())
    }

    /// Records one question. Returns false when the scenario makes the
    /// question fail, mirroring the pipeline giving up on the stage.
    fn respond(
        &mut self,
        cell: &CellScript,
        stage: PromptStage,
        detail: Option<String>,
        messages: Vec<Message>,
        summarize: bool,
        answer: String,
    ) -> Result<bool, FixtureError> {
        let tag = |step| ExchangeTag { stage, detail: detail.clone(), step }.to_string();
        let reply = |step: Step, text: &str| {
            if cell.garbled.contains(&tag(step)) { GARBLED.to_string() } else { text.to_string() }
        };
        let (conversation, text) = if summarize {
            let first = reply(Step::Ask, REASONING);
            self.put(cell, tag(Step::Ask), &messages, first.clone())?;
            let follow_up = self.prompts.summary(&messages, &first, stage)?;
            let text = reply(Step::Summary, &answer);
            self.put(cell, tag(Step::Summary), &follow_up, text.clone())?;
            (follow_up, text)
        } else {
            let text = reply(Step::Ask, &answer);
            self.put(cell, tag(Step::Ask), &messages, text.clone())?;
            (messages, text)
        };
        if text != GARBLED {
            return Ok(true);
        }
        let reask = self.prompts.reask(&conversation, &text, stage)?;
        let retry = reply(Step::Reask, &answer);
        self.put(cell, tag(Step::Reask), &reask, retry.clone())?;
        Ok(retry != GARBLED)
    }

    fn cell(&mut self, report: &Report, organ: Organ, cell: &CellScript) -> Result<(), FixtureError> {
        let n = report.sentences.len();
        let filtered: BTreeSet<usize> = if self.config.has(Ablation::NoFiltration) {
            (0..n).collect()
        } else {
            let step1: BTreeSet<usize> = cell.step1.iter().copied().filter(|&i| i < n).collect();
            let listed = if step1.is_empty() {
                "none".to_string()
            } else {
                step1.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
            };
            let messages = self.prompts.filtration_list(report, organ)?;
            if !self.respond(cell, PromptStage::FiltrationList, None, messages, true, listed)? {
                return Ok(());
            }
            let mut selected = step1.clone();
            if !self.config.has(Ablation::FastFiltration) {
                for sentence in report.sentences.iter().filter(|s| !step1.contains(&s.index)) {
                    let yes = cell.step2.contains(&sentence.index);
                    let messages = self.prompts.filtration_sentence(sentence, organ, self.opts)?;
                    let answer = if yes { "Answer: yes" } else { "Answer: no" };
                    let detail = Some(sentence.index.to_string());
                    if !self.respond(
                        cell,
                        PromptStage::FiltrationPerSentence,
                        detail,
                        messages,
                        false,
                        answer.to_string(),
                    )? {
                        return Ok(());
                    }
                    if yes {
                        selected.insert(sentence.index);
                    }
                }
            }
            selected
        };
        let sentences: Vec<&Sentence> = report.sentence_texts(&filtered);
        if sentences.is_empty() {
            return Ok(());
        }

        if self.opts.individual_type_questions {
            for t in FindingType::ALL {
                let messages = self.prompts.per_type(&sentences, organ, t, self.opts)?;
                let answer = if cell.types.contains(&t) { "yes" } else { "no" };
                let detail = Some(t.token().to_string());
                if !self.respond(cell, PromptStage::PerType, detail, messages, true, answer.into())? {
                    return Ok(());
                }
            }
        } else {
            let messages = self.prompts.type_assessment(&sentences, organ, self.opts)?;
            let answer = format_type_choices(&cell.types);
            if !self.respond(cell, PromptStage::TypeAssessment, None, messages, true, answer)? {
                return Ok(());
            }
        }

        for &t in cell.types.iter().filter(|t| !t.is_non_finding()) {
            let finding = cell.findings.get(&t).copied().unwrap_or_default();
            let detail = Some(t.token().to_string());
            let messages = self.prompts.uncertainty(&sentences, organ, t, self.opts)?;
            let answer = finding.uncertainty.letter().to_string();
            if !self.respond(cell, PromptStage::Uncertainty, detail.clone(), messages, true, answer)? {
                continue;
            }
            if finding.uncertainty.is_present() {
                let level = finding.urgency.unwrap_or(UrgencyLevel::LOW);
                let messages = self.prompts.urgency(&sentences, organ, t, self.opts)?;
                self.respond(cell, PromptStage::Urgency, detail, messages, true, level.letter().to_string())?;
            }
        }
        Ok(())
    }
}
