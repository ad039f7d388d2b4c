//! Label ontology and the core records shared by every other module.
//!
//! Every enumeration here has a fixed cardinality (9 organs, 11 finding
//! types, 6 uncertainty categories, 4 urgency levels). Serialized forms use
//! snake_case strings for enum values and integers for urgency levels.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("report text is empty")]
    EmptyReport,
    #[error("unknown organ `{0}`")]
    UnknownOrgan(String),
    #[error("unknown finding type `{0}`")]
    UnknownFindingType(String),
    #[error("unknown uncertainty category `{0}`")]
    UnknownUncertainty(String),
    #[error("urgency level {0} is outside 0..=3")]
    UrgencyOutOfRange(i64),
    #[error("unknown ablation flag `{0}`")]
    UnknownAblation(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("label invariant violated: {0}")]
    InvalidLabel(String),
}

fn normalize_token(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace([' ', '-'], "_")
}

/// Abdominal organs labeled by the pipeline, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Organ {
    Liver,
    Gallbladder,
    Spleen,
    RightKidney,
    LeftKidney,
    Pancreas,
    Stomach,
    SmallBowel,
    LargeBowel,
}

impl Organ {
    pub const ALL: [Organ; 9] = [
        Organ::Liver,
        Organ::Gallbladder,
        Organ::Spleen,
        Organ::RightKidney,
        Organ::LeftKidney,
        Organ::Pancreas,
        Organ::Stomach,
        Organ::SmallBowel,
        Organ::LargeBowel,
    ];

    /// Text substituted for `{organ}` in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Organ::Liver => "liver",
            Organ::Gallbladder => "gallbladder",
            Organ::Spleen => "spleen",
            Organ::RightKidney => "right kidney",
            Organ::LeftKidney => "left kidney",
            Organ::Pancreas => "pancreas",
            Organ::Stomach => "stomach",
            Organ::SmallBowel => "small bowel",
            Organ::LargeBowel => "large bowel",
        }
    }

    /// Serialized token, e.g. `left_kidney`.
    pub fn token(self) -> &'static str {
        match self {
            Organ::Liver => "liver",
            Organ::Gallbladder => "gallbladder",
            Organ::Spleen => "spleen",
            Organ::RightKidney => "right_kidney",
            Organ::LeftKidney => "left_kidney",
            Organ::Pancreas => "pancreas",
            Organ::Stomach => "stomach",
            Organ::SmallBowel => "small_bowel",
            Organ::LargeBowel => "large_bowel",
        }
    }
}

impl fmt::Display for Organ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Organ {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_token(s);
        Organ::ALL
            .into_iter()
            .find(|o| o.token() == key)
            .ok_or_else(|| SchemaError::UnknownOrgan(s.to_string()))
    }
}

/// The multiple-choice finding-type ontology. Declaration order fixes the
/// choice lettering used in prompts (Absent = A ... Normal = K).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingType {
    Absent,
    Device,
    Postsurgical,
    Enlarged,
    Atrophy,
    Anatomy,
    Focal,
    Diffuse,
    Quality,
    Adjacent,
    Normal,
}

impl FindingType {
    pub const ALL: [FindingType; 11] = [
        FindingType::Absent,
        FindingType::Device,
        FindingType::Postsurgical,
        FindingType::Enlarged,
        FindingType::Atrophy,
        FindingType::Anatomy,
        FindingType::Focal,
        FindingType::Diffuse,
        FindingType::Quality,
        FindingType::Adjacent,
        FindingType::Normal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FindingType::Absent => "Absent",
            FindingType::Device => "Device",
            FindingType::Postsurgical => "Postsurgical",
            FindingType::Enlarged => "Enlarged",
            FindingType::Atrophy => "Atrophy",
            FindingType::Anatomy => "Anatomy",
            FindingType::Focal => "Focal",
            FindingType::Diffuse => "Diffuse",
            FindingType::Quality => "Quality",
            FindingType::Adjacent => "Adjacent",
            FindingType::Normal => "Normal",
        }
    }

    /// Definition with an `{organ}` placeholder.
    pub fn definition_template(self) -> &'static str {
        match self {
            FindingType::Absent => "{organ} is not present",
            FindingType::Device => "{organ} has support device",
            FindingType::Postsurgical => "{organ} has postsurgical changes",
            FindingType::Enlarged => "{organ} is enlarged",
            FindingType::Atrophy => "{organ} has atrophied",
            FindingType::Anatomy => {
                "uncommonly seen displacements, relative positionings, or shapes of the {organ}"
            }
            FindingType::Focal => "{organ} has a finding that can be measured from its borders",
            FindingType::Diffuse => {
                "{organ} has a finding without a well-defined border or shape for measurement, \
                 or that affect large regions"
            }
            FindingType::Quality => "finding about the acquisition process for the organ",
            FindingType::Adjacent => "an adjacent, extrinsic finding for the {organ}",
            FindingType::Normal => "{organ} is normal",
        }
    }

    pub fn definition(self, organ: Organ) -> String {
        self.definition_template()
            .replace("{organ}", organ.display_name())
    }

    /// Normal and Adjacent exist so every finding has a valid answer; they
    /// never yield a label record.
    pub fn is_non_finding(self) -> bool {
        matches!(self, FindingType::Normal | FindingType::Adjacent)
    }

    pub fn letter(self) -> char {
        let idx = FindingType::ALL.iter().position(|t| *t == self).unwrap();
        (b'A' + idx as u8) as char
    }

    pub fn from_letter(letter: char) -> Option<FindingType> {
        let upper = letter.to_ascii_uppercase();
        if !upper.is_ascii_uppercase() {
            return None;
        }
        FindingType::ALL.get((upper as u8 - b'A') as usize).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            FindingType::Absent => "absent",
            FindingType::Device => "device",
            FindingType::Postsurgical => "postsurgical",
            FindingType::Enlarged => "enlarged",
            FindingType::Atrophy => "atrophy",
            FindingType::Anatomy => "anatomy",
            FindingType::Focal => "focal",
            FindingType::Diffuse => "diffuse",
            FindingType::Quality => "quality",
            FindingType::Adjacent => "adjacent",
            FindingType::Normal => "normal",
        }
    }
}

impl fmt::Display for FindingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FindingType {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_token(s);
        FindingType::ALL
            .into_iter()
            .find(|t| t.token() == key)
            .ok_or_else(|| SchemaError::UnknownFindingType(s.to_string()))
    }
}

/// How a finding is asserted in the report. Declaration order fixes the
/// choice lettering (Possible = A ... BroadAreaOnly = F).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyCategory {
    Possible,
    Positive,
    Negative,
    NotMentioned,
    AmbiguousComparison,
    BroadAreaOnly,
}

impl UncertaintyCategory {
    pub const ALL: [UncertaintyCategory; 6] = [
        UncertaintyCategory::Possible,
        UncertaintyCategory::Positive,
        UncertaintyCategory::Negative,
        UncertaintyCategory::NotMentioned,
        UncertaintyCategory::AmbiguousComparison,
        UncertaintyCategory::BroadAreaOnly,
    ];

    pub fn description(self) -> &'static str {
        match self {
            UncertaintyCategory::Possible => "mentioned as possible",
            UncertaintyCategory::Positive => "stated as positive",
            UncertaintyCategory::Negative => "deemed negative or very unlikely",
            UncertaintyCategory::NotMentioned => "not directly mentioned",
            UncertaintyCategory::AmbiguousComparison => {
                "described with ambiguous language when comparing to a previous report of the same patient"
            }
            UncertaintyCategory::BroadAreaOnly => "mentioned only for a broad anatomical area",
        }
    }

    pub fn is_present(self) -> bool {
        matches!(self, UncertaintyCategory::Positive | UncertaintyCategory::Possible)
    }

    pub fn letter(self) -> char {
        let idx = UncertaintyCategory::ALL.iter().position(|c| *c == self).unwrap();
        (b'A' + idx as u8) as char
    }

    pub fn from_letter(letter: char) -> Option<UncertaintyCategory> {
        let upper = letter.to_ascii_uppercase();
        if !upper.is_ascii_uppercase() {
            return None;
        }
        UncertaintyCategory::ALL.get((upper as u8 - b'A') as usize).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            UncertaintyCategory::Possible => "possible",
            UncertaintyCategory::Positive => "positive",
            UncertaintyCategory::Negative => "negative",
            UncertaintyCategory::NotMentioned => "not_mentioned",
            UncertaintyCategory::AmbiguousComparison => "ambiguous_comparison",
            UncertaintyCategory::BroadAreaOnly => "broad_area_only",
        }
    }
}

impl fmt::Display for UncertaintyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for UncertaintyCategory {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_token(s);
        UncertaintyCategory::ALL
            .into_iter()
            .find(|c| c.token() == key)
            .ok_or_else(|| SchemaError::UnknownUncertainty(s.to_string()))
    }
}

/// Ordinal urgency grade, 0 (normal, expected or chronic) to 3 (high).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(try_from = "i64", into = "u8")]
pub struct UrgencyLevel(u8);

impl UrgencyLevel {
    pub const NORMAL: UrgencyLevel = UrgencyLevel(0);
    pub const LOW: UrgencyLevel = UrgencyLevel(1);
    pub const MEDIUM: UrgencyLevel = UrgencyLevel(2);
    pub const HIGH: UrgencyLevel = UrgencyLevel(3);
    pub const ALL: [UrgencyLevel; 4] = [Self::NORMAL, Self::LOW, Self::MEDIUM, Self::HIGH];

    pub fn new(level: u8) -> Result<Self, SchemaError> {
        if level <= 3 {
            Ok(UrgencyLevel(level))
        } else {
            Err(SchemaError::UrgencyOutOfRange(level as i64))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn definition(self) -> &'static str {
        match self.0 {
            0 => "normal, expected, or chronic (no action is needed)",
            1 => "low (it could cause problems in the future)",
            2 => "medium (it requires treatment)",
            _ => "high (it requires immediate treatment)",
        }
    }

    pub fn letter(self) -> char {
        (b'A' + self.0) as char
    }

    pub fn from_letter(letter: char) -> Option<UrgencyLevel> {
        let upper = letter.to_ascii_uppercase();
        match upper {
            'A'..='D' => Some(UrgencyLevel(upper as u8 - b'A')),
            _ => None,
        }
    }
}

impl TryFrom<i64> for UrgencyLevel {
    type Error = SchemaError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        if (0..=3).contains(&value) {
            Ok(UrgencyLevel(value as u8))
        } else {
            Err(SchemaError::UrgencyOutOfRange(value))
        }
    }
}

impl From<UrgencyLevel> for u8 {
    fn from(level: UrgencyLevel) -> u8 {
        level.0
    }
}

impl fmt::Display for UrgencyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
}

/// A report body together with its sentence segmentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub id: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

impl Report {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, SchemaError> {
        let text = text.into();
        let sentences = split_sentences(&text)?;
        Ok(Report {
            id: id.into(),
            text,
            sentences,
        })
    }

    pub fn sentence_texts<'a>(&'a self, indices: &'a BTreeSet<usize>) -> Vec<&'a Sentence> {
        indices
            .iter()
            .filter_map(|&i| self.sentences.get(i))
            .collect()
    }
}

/// One extraction result for a (report, organ, finding type) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganFindingLabel {
    pub report_id: String,
    pub organ: Organ,
    pub finding_type: FindingType,
    pub uncertainty: UncertaintyCategory,
    #[serde(default)]
    pub urgency: Option<UrgencyLevel>,
    #[serde(default)]
    pub evidence: Vec<usize>,
    #[serde(default)]
    pub transcript_refs: Vec<String>,
}

impl OrganFindingLabel {
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.finding_type.is_non_finding() {
            return Err(SchemaError::InvalidLabel(format!(
                "{} is not a labelable finding type",
                self.finding_type
            )));
        }
        if self.uncertainty.is_present() != self.urgency.is_some() {
            return Err(SchemaError::InvalidLabel(format!(
                "urgency must be present iff uncertainty is positive or possible (got {} with urgency {:?})",
                self.uncertainty, self.urgency
            )));
        }
        Ok(())
    }

    pub fn sort_key(&self) -> (&str, Organ, FindingType) {
        (&self.report_id, self.organ, self.finding_type)
    }
}

/// Prompt-system ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoCot,
    FastFiltration,
    NoFiltration,
    IndividualTypeQuestions,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoCot,
        Ablation::FastFiltration,
        Ablation::NoFiltration,
        Ablation::IndividualTypeQuestions,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Ablation::NoCot => "no_cot",
            Ablation::FastFiltration => "fast_filtration",
            Ablation::NoFiltration => "no_filtration",
            Ablation::IndividualTypeQuestions => "individual_type_questions",
        }
    }
}

impl FromStr for Ablation {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_token(s);
        Ablation::ALL
            .into_iter()
            .find(|a| a.token() == key)
            .ok_or_else(|| SchemaError::UnknownAblation(s.to_string()))
    }
}

pub const MAX_RETRY_LIMIT: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry_limit: u32,
    pub parallelism: usize,
    pub ablation_flags: BTreeSet<Ablation>,
    /// Base delay for exponential backoff between retries.
    pub backoff_base_ms: u64,
    pub request_timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint_url: String::new(),
            model_name: String::new(),
            temperature: 0.0,
            max_tokens: 2048,
            retry_limit: 3,
            parallelism: 1,
            ablation_flags: BTreeSet::new(),
            backoff_base_ms: 500,
            request_timeout_secs: 600,
        }
    }
}

impl LlmConfig {
    pub fn has(&self, flag: Ablation) -> bool {
        self.ablation_flags.contains(&flag)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.parallelism == 0 {
            return Err(SchemaError::InvalidConfig("parallelism must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(SchemaError::InvalidConfig(
                "temperature must be a non-negative number".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(SchemaError::InvalidConfig("max_tokens must be positive".into()));
        }
        if self.retry_limit > MAX_RETRY_LIMIT {
            return Err(SchemaError::InvalidConfig(format!(
                "retry_limit must be at most {MAX_RETRY_LIMIT}"
            )));
        }
        if self.has(Ablation::FastFiltration) && self.has(Ablation::NoFiltration) {
            return Err(SchemaError::InvalidConfig(
                "fast_filtration and no_filtration are mutually exclusive".into(),
            ));
        }
        Ok(())
    }
}

// Tokens ending in '.' that do not end a sentence. Compared lowercase,
// without the trailing period.
const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "vs", "e.g", "i.e", "approx", "fig", "cf", "st", "incl", "resp",
    "prev", "hx", "pt", "s/p", "nos",
];

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '\u{201d}' | '\u{2019}')
}

/// Splits a report body into sentences on `.`, `!`, `?` followed by
/// whitespace, and on line breaks.
///
/// Periods inside tokens (`1.2`, `e.g.`) never split, nor do periods after
/// known abbreviations or list numbering at the start of a line (`1. Liver`).
pub fn split_sentences(text: &str) -> Result<Vec<Sentence>, SchemaError> {
    if text.trim().is_empty() {
        return Err(SchemaError::EmptyReport);
    }
    let chars: Vec<char> = text.chars().collect();
    let mut pieces: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' || c == '\r' {
            pieces.push(std::mem::take(&mut current));
            i += 1;
            continue;
        }
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && (is_closer(chars[j]) || matches!(chars[j], '.' | '!' | '?'))
            {
                current.push(chars[j]);
                j += 1;
            }
            let at_boundary = j >= chars.len() || chars[j].is_whitespace();
            if at_boundary && !(c == '.' && is_non_terminal_period(&current)) {
                pieces.push(std::mem::take(&mut current));
            }
            i = j;
            continue;
        }
        i += 1;
    }
    pieces.push(current);

    let sentences: Vec<Sentence> = pieces
        .into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .enumerate()
        .map(|(index, text)| Sentence { index, text })
        .collect();
    if sentences.is_empty() {
        return Err(SchemaError::EmptyReport);
    }
    Ok(sentences)
}

fn is_non_terminal_period(current: &str) -> bool {
    let trimmed = current.trim_end_matches(|c: char| is_closer(c));
    let Some(body) = trimmed.strip_suffix('.') else {
        return false;
    };
    let last_token = body
        .rsplit(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or("");
    if last_token.is_empty() {
        return false;
    }
    // "1." opening a numbered list item.
    if last_token.chars().all(|c| c.is_ascii_digit()) && body.trim() == last_token {
        return true;
    }
    let lower = last_token.to_ascii_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Whitespace normalization used by the split/join round-trip.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
