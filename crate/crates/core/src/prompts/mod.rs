//! Prompt construction for the four labeling stages and parsing of the
//! summary answers.
//!
//! Template wording lives in `templates/*.txt` and is compiled in. A
//! directory holding files with the same names overrides individual
//! templates at runtime.
//!
//! Choice letters follow schema declaration order: finding types A (Absent)
//! to K (Normal), uncertainty A (Possible) to F (BroadAreaOnly), urgency
//! A (level 0) to D (level 3). Sentences are numbered by their 0-based
//! index in the report.

mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::Message;
use crate::schema::{
    Ablation, FindingType, LlmConfig, Organ, Report, Sentence, UncertaintyCategory, UrgencyLevel,
};

pub use parse::{
    format_type_choices, parse_sentence_list, parse_type_choices, parse_uncertainty, parse_urgency,
    parse_yes_no, ParseError, SentenceSelection,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("template `{template}` uses placeholder {{{placeholder}}} which is not available at this stage")]
    UnboundPlaceholder { template: String, placeholder: String },
    #[error("template override I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStage {
    FiltrationList,
    FiltrationPerSentence,
    TypeAssessment,
    PerType,
    Uncertainty,
    Urgency,
    Summary,
}

impl PromptStage {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptStage::FiltrationList => "filtration_list",
            PromptStage::FiltrationPerSentence => "filtration_per_sentence",
            PromptStage::TypeAssessment => "type_assessment",
            PromptStage::PerType => "per_type",
            PromptStage::Uncertainty => "uncertainty",
            PromptStage::Urgency => "urgency",
            PromptStage::Summary => "summary",
        }
    }

    fn summary_template(self) -> Template {
        match self {
            PromptStage::FiltrationList => Template::SummarySentenceList,
            PromptStage::TypeAssessment => Template::SummaryMultipleChoice,
            PromptStage::Uncertainty | PromptStage::Urgency => Template::SummarySingleChoice,
            PromptStage::FiltrationPerSentence | PromptStage::PerType | PromptStage::Summary => {
                Template::SummaryYesNo
            }
        }
    }
}

impl fmt::Display for PromptStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Template {
    Preamble,
    Cot,
    FiltrationList,
    FiltrationSentence,
    TypeAssessment,
    PerType,
    Uncertainty,
    Urgency,
    SummarySentenceList,
    SummaryMultipleChoice,
    SummarySingleChoice,
    SummaryYesNo,
    Reask,
}

impl Template {
    const ALL: [Template; 13] = [
        Template::Preamble,
        Template::Cot,
        Template::FiltrationList,
        Template::FiltrationSentence,
        Template::TypeAssessment,
        Template::PerType,
        Template::Uncertainty,
        Template::Urgency,
        Template::SummarySentenceList,
        Template::SummaryMultipleChoice,
        Template::SummarySingleChoice,
        Template::SummaryYesNo,
        Template::Reask,
    ];

    fn file_name(self) -> &'static str {
        match self {
            Template::Preamble => "preamble.txt",
            Template::Cot => "cot.txt",
            Template::FiltrationList => "filtration_list.txt",
            Template::FiltrationSentence => "filtration_sentence.txt",
            Template::TypeAssessment => "type_assessment.txt",
            Template::PerType => "per_type.txt",
            Template::Uncertainty => "uncertainty.txt",
            Template::Urgency => "urgency.txt",
            Template::SummarySentenceList => "summary_sentence_list.txt",
            Template::SummaryMultipleChoice => "summary_multiple_choice.txt",
            Template::SummarySingleChoice => "summary_single_choice.txt",
            Template::SummaryYesNo => "summary_yes_no.txt",
            Template::Reask => "reask.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            Template::Preamble => include_str!("../../templates/preamble.txt"),
            Template::Cot => include_str!("../../templates/cot.txt"),
            Template::FiltrationList => include_str!("../../templates/filtration_list.txt"),
            Template::FiltrationSentence => include_str!("../../templates/filtration_sentence.txt"),
            Template::TypeAssessment => include_str!("../../templates/type_assessment.txt"),
            Template::PerType => include_str!("../../templates/per_type.txt"),
            Template::Uncertainty => include_str!("../../templates/uncertainty.txt"),
            Template::Urgency => include_str!("../../templates/urgency.txt"),
            Template::SummarySentenceList => include_str!("../../templates/summary_sentence_list.txt"),
            Template::SummaryMultipleChoice => {
                include_str!("../../templates/summary_multiple_choice.txt")
            }
            Template::SummarySingleChoice => include_str!("../../templates/summary_single_choice.txt"),
            Template::SummaryYesNo => include_str!("../../templates/summary_yes_no.txt"),
            Template::Reask => include_str!("../../templates/reask.txt"),
        }
    }
}

/// Placeholders recognized in templates. Anything else in braces is
/// literal text.
pub const PLACEHOLDERS: &[&str] = &[
    "organ",
    "sentences",
    "sentence",
    "choices",
    "finding_type",
    "finding_definition",
    "previous_answer",
    "instruction",
];

/// Flags that change prompt wording or routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptOptions {
    pub cot: bool,
    pub individual_type_questions: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions { cot: true, individual_type_questions: false }
    }
}

impl From<&LlmConfig> for PromptOptions {
    fn from(config: &LlmConfig) -> Self {
        PromptOptions {
            cot: !config.has(Ablation::NoCot),
            individual_type_questions: config.has(Ablation::IndividualTypeQuestions),
        }
    }
}

/// The full set of prompt templates in use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBook {
    templates: BTreeMap<&'static str, String>,
}

impl Default for PromptBook {
    fn default() -> Self {
        PromptBook {
            templates: Template::ALL
                .iter()
                .map(|t| (t.file_name(), t.builtin().trim_end().to_string()))
                .collect(),
        }
    }
}

impl PromptBook {
    /// Builtin templates, with any same-named file in `dir` taking
    /// precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut book = PromptBook::default();
        let entries = fs::read_dir(dir).map_err(|e| PromptError::Io(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| PromptError::Io(e.to_string()))?;
            let name = entry.file_name().to_string_lossy().to_string();
            match Template::ALL.iter().find(|t| t.file_name() == name) {
                Some(t) => {
                    let text = fs::read_to_string(entry.path())
                        .map_err(|e| PromptError::Io(format!("{name}: {e}")))?;
                    book.templates.insert(t.file_name(), text.trim_end().to_string());
                }
                None => log::warn!("ignoring unknown template file {name}"),
            }
        }
        Ok(book)
    }

    fn text(&self, t: Template) -> &str {
        &self.templates[t.file_name()]
    }

    /// SHA-256 of every template, keyed by file name.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.templates
            .iter()
            .map(|(name, text)| (name.to_string(), hex::encode(Sha256::digest(text.as_bytes()))))
            .collect()
    }

    fn render(&self, t: Template, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        render(t.file_name(), self.text(t), vars)
    }

    fn stage_message(&self, t: Template, cot: bool, vars: &[(&str, &str)]) -> Result<Vec<Message>, PromptError> {
        let mut head = self.text(Template::Preamble).to_string();
        if cot {
            head.push('\n');
            head.push_str(self.text(Template::Cot));
        }
        let body = self.render(t, vars)?;
        Ok(vec![Message::user(format!("{head}\n\n{body}"))])
    }

    /// Step one of sentence filtration: asks for the list of sentence numbers
    /// informative for `organ`. Never uses chain-of-thought.
    pub fn filtration_list(&self, report: &Report, organ: Organ) -> Result<Vec<Message>, PromptError> {
        if report.sentences.is_empty() {
            return Err(PromptError::Precondition(format!("report {} has no sentences", report.id)));
        }
        let sentences = numbered(report.sentences.iter());
        self.stage_message(
            Template::FiltrationList,
            false,
            &[("organ", organ.display_name()), ("sentences", &sentences)],
        )
    }

    /// Step two of sentence filtration: a yes/no question for one sentence.
    pub fn filtration_sentence(
        &self,
        sentence: &Sentence,
        organ: Organ,
        opts: PromptOptions,
    ) -> Result<Vec<Message>, PromptError> {
        let quoted = quote(&sentence.text);
        self.stage_message(
            Template::FiltrationSentence,
            opts.cot,
            &[("organ", organ.display_name()), ("sentence", &quoted)],
        )
    }

    pub fn type_assessment(
        &self,
        sentences: &[&Sentence],
        organ: Organ,
        opts: PromptOptions,
    ) -> Result<Vec<Message>, PromptError> {
        if opts.individual_type_questions {
            return Err(PromptError::Precondition(
                "individual_type_questions is set; use the per-type prompt".into(),
            ));
        }
        require_sentences(sentences)?;
        let choices = FindingType::ALL
            .iter()
            .map(|t| format!("{}) {}: {}", t.letter(), t.name(), t.definition(organ)))
            .collect::<Vec<_>>()
            .join("\n");
        let listed = numbered(sentences.iter().copied());
        self.stage_message(
            Template::TypeAssessment,
            opts.cot,
            &[("organ", organ.display_name()), ("sentences", &listed), ("choices", &choices)],
        )
    }

    pub fn per_type(
        &self,
        sentences: &[&Sentence],
        organ: Organ,
        finding_type: FindingType,
        opts: PromptOptions,
    ) -> Result<Vec<Message>, PromptError> {
        if !opts.individual_type_questions {
            return Err(PromptError::Precondition(
                "per-type questions require the individual_type_questions flag".into(),
            ));
        }
        require_sentences(sentences)?;
        let listed = numbered(sentences.iter().copied());
        let definition = finding_type.definition(organ);
        self.stage_message(
            Template::PerType,
            opts.cot,
            &[
                ("organ", organ.display_name()),
                ("sentences", &listed),
                ("finding_type", finding_type.name()),
                ("finding_definition", &definition),
            ],
        )
    }

    pub fn uncertainty(
        &self,
        sentences: &[&Sentence],
        organ: Organ,
        finding_type: FindingType,
        opts: PromptOptions,
    ) -> Result<Vec<Message>, PromptError> {
        require_finding(finding_type)?;
        require_sentences(sentences)?;
        let choices = UncertaintyCategory::ALL
            .iter()
            .map(|c| format!("{}) {}", c.letter(), c.description()))
            .collect::<Vec<_>>()
            .join("\n");
        let listed = numbered(sentences.iter().copied());
        let definition = finding_type.definition(organ);
        self.stage_message(
            Template::Uncertainty,
            opts.cot,
            &[
                ("organ", organ.display_name()),
                ("sentences", &listed),
                ("finding_type", finding_type.name()),
                ("finding_definition", &definition),
                ("choices", &choices),
            ],
        )
    }

    pub fn urgency(
        &self,
        sentences: &[&Sentence],
        organ: Organ,
        finding_type: FindingType,
        opts: PromptOptions,
    ) -> Result<Vec<Message>, PromptError> {
        require_finding(finding_type)?;
        require_sentences(sentences)?;
        let choices = UrgencyLevel::ALL
            .iter()
            .map(|u| format!("{}) {}", u.letter(), u.definition()))
            .collect::<Vec<_>>()
            .join("\n");
        let listed = numbered(sentences.iter().copied());
        let definition = finding_type.definition(organ);
        self.stage_message(
            Template::Urgency,
            opts.cot,
            &[
                ("organ", organ.display_name()),
                ("sentences", &listed),
                ("finding_type", finding_type.name()),
                ("finding_definition", &definition),
                ("choices", &choices),
            ],
        )
    }

    /// Follow-up asking the model to condense `previous_answer` (its reply to
    /// `conversation`) into the fixed machine-readable format of `stage`.
    pub fn summary(
        &self,
        conversation: &[Message],
        previous_answer: &str,
        stage: PromptStage,
    ) -> Result<Vec<Message>, PromptError> {
        let instruction = self.render(stage.summary_template(), &[("previous_answer", previous_answer)])?;
        Ok(extend(conversation, previous_answer, instruction))
    }

    /// Stricter retry after an unparseable reply.
    pub fn reask(
        &self,
        conversation: &[Message],
        bad_answer: &str,
        stage: PromptStage,
    ) -> Result<Vec<Message>, PromptError> {
        let instruction = self.render(stage.summary_template(), &[("previous_answer", bad_answer)])?;
        let text = self.render(
            Template::Reask,
            &[("instruction", &instruction), ("previous_answer", bad_answer)],
        )?;
        Ok(extend(conversation, bad_answer, text))
    }
}

fn extend(conversation: &[Message], answer: &str, user_text: String) -> Vec<Message> {
    let mut messages = conversation.to_vec();
    messages.push(Message::assistant(answer));
    messages.push(Message::user(user_text));
    messages
}

fn require_sentences(sentences: &[&Sentence]) -> Result<(), PromptError> {
    if sentences.is_empty() {
        Err(PromptError::Precondition("no sentences selected for this organ".into()))
    } else {
        Ok(())
    }
}

fn require_finding(finding_type: FindingType) -> Result<(), PromptError> {
    if finding_type.is_non_finding() {
        Err(PromptError::Precondition(format!("{finding_type} is not a labelable finding type")))
    } else {
        Ok(())
    }
}

/// Double-quotes a sentence, escaping backslashes and embedded quotes.
pub fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn numbered<'a>(sentences: impl Iterator<Item = &'a Sentence>) -> String {
    sentences
        .map(|s| format!("[{}] {}", s.index, quote(&s.text)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Single-pass substitution of `{name}` placeholders. Substituted values are
/// never rescanned, so report text containing braces is left intact.
fn render(name: &str, template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if PLACEHOLDERS.contains(&&after[..close]) => {
                let key = &after[..close];
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::UnboundPlaceholder {
                        template: name.to_string(),
                        placeholder: key.to_string(),
                    })?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}
