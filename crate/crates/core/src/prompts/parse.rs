//! Tolerant parsers for the summary answers.
//!
//! Every parser is total: arbitrary input yields either a value or
//! [`ParseError::UnparseableSummary`].

use std::collections::BTreeSet;

use thiserror::Error;

use crate::schema::{FindingType, UncertaintyCategory, UrgencyLevel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("could not parse {expected} from summary {text:?}")]
    UnparseableSummary { expected: &'static str, text: String },
}

fn unparseable(expected: &'static str, text: &str) -> ParseError {
    ParseError::UnparseableSummary { expected, text: text.chars().take(200).collect() }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SentenceSelection {
    pub indices: BTreeSet<usize>,
    /// Numbers mentioned in the answer that are not valid sentence indices.
    pub dropped: Vec<String>,
}

struct Token<'a> {
    text: &'a str,
    start: usize,
    end: usize,
}

fn tokens(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in bytes.iter().enumerate() {
        let inner_apostrophe = c == '\''
            && start.is_some()
            && bytes.get(k + 1).is_some_and(|&(_, n)| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            out.push(Token { text: &text[s..i], start: s, end: i });
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &text[s..], start: s, end: text.len() });
    }
    out
}

fn find_word(haystack_lower: &str, needle: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = haystack_lower[from..].find(needle) {
        let pos = from + rel;
        let end = pos + needle.len();
        let before_ok = haystack_lower[..pos].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack_lower[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return Some(pos);
        }
        from = pos + haystack_lower[pos..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

const NONE_MARKERS: &[&str] = &["none", "no sentence", "no sentences", "nothing", "no informative"];

fn has_none_marker(lower: &str) -> bool {
    NONE_MARKERS.iter().any(|m| find_word(lower, m).is_some())
}

/// Extracts sentence indices. Numbers outside `0..n_sentences` are dropped
/// and reported; `none` or an empty answer is the empty selection.
pub fn parse_sentence_list(summary: &str, n_sentences: usize) -> Result<SentenceSelection, ParseError> {
    let mut selection = SentenceSelection::default();
    let mut saw_number = false;
    let mut digits = String::new();
    for c in summary.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() {
            digits.push(c);
            continue;
        }
        if digits.is_empty() {
            continue;
        }
        saw_number = true;
        match digits.parse::<usize>() {
            Ok(i) if i < n_sentences => {
                selection.indices.insert(i);
            }
            _ => selection.dropped.push(std::mem::take(&mut digits)),
        }
        digits.clear();
    }
    if !selection.dropped.is_empty() {
        log::warn!(
            "dropped out-of-range sentence numbers {:?} (report has {n_sentences} sentences)",
            selection.dropped
        );
    }
    if saw_number || summary.trim().is_empty() || has_none_marker(&summary.to_lowercase()) {
        Ok(selection)
    } else {
        Err(unparseable("a sentence list", summary))
    }
}

/// Whether a single-letter token reads as a choice letter rather than the
/// article "A" or pronoun "I".
fn is_choice_letter(text: &str, tok: &Token<'_>, letters_only: bool) -> bool {
    let mut chars = tok.text.chars();
    let (Some(c), None) = (chars.next(), chars.next()) else {
        return false;
    };
    if !c.is_ascii_alphabetic() {
        return false;
    }
    if letters_only {
        return true;
    }
    if !c.is_ascii_uppercase() {
        return false;
    }
    if c == 'A' || c == 'I' {
        let rest = &text[tok.end..];
        let next_is_space = rest.chars().next().is_some_and(char::is_whitespace);
        if next_is_space {
            let next_word: String = rest.trim_start().chars().take_while(|c| c.is_alphanumeric()).collect();
            let lowercase_word = next_word.chars().next().is_some_and(|c| c.is_lowercase());
            if lowercase_word && next_word != "and" && next_word != "or" {
                return false;
            }
        }
    }
    true
}

/// True when the answer is nothing but letters and list glue ("g, h").
fn letters_only(toks: &[Token<'_>]) -> bool {
    !toks.is_empty()
        && toks.iter().all(|t| {
            t.text.chars().count() == 1 && t.text.chars().all(|c| c.is_ascii_alphabetic())
                || t.text.eq_ignore_ascii_case("and")
                || t.text.eq_ignore_ascii_case("or")
        })
}

const TYPE_NAMES: &[(FindingType, &[&str])] = &[
    (FindingType::Absent, &["absent", "absence"]),
    (FindingType::Device, &["device", "devices"]),
    (FindingType::Postsurgical, &["postsurgical", "post-surgical", "post surgical", "postoperative"]),
    (FindingType::Enlarged, &["enlarged", "enlargement"]),
    (FindingType::Atrophy, &["atrophy", "atrophied", "atrophic"]),
    (FindingType::Anatomy, &["anatomy", "anatomic", "anatomical"]),
    (FindingType::Focal, &["focal"]),
    (FindingType::Diffuse, &["diffuse"]),
    (FindingType::Quality, &["quality"]),
    (FindingType::Adjacent, &["adjacent"]),
    (FindingType::Normal, &["normal"]),
];

/// Maps choice letters (A to K) and type names to finding types.
pub fn parse_type_choices(summary: &str) -> Result<BTreeSet<FindingType>, ParseError> {
    let toks = tokens(summary);
    let only_letters = letters_only(&toks);
    let mut found = BTreeSet::new();
    for tok in &toks {
        if is_choice_letter(summary, tok, only_letters) {
            if let Some(t) = tok.text.chars().next().and_then(FindingType::from_letter) {
                found.insert(t);
            }
        }
    }
    let lower = summary.to_lowercase();
    for (t, names) in TYPE_NAMES {
        if names.iter().any(|n| find_word(&lower, n).is_some()) {
            found.insert(*t);
        }
    }
    if found.is_empty() {
        let trimmed = lower.trim().trim_end_matches('.');
        if trimmed == "none" || trimmed == "none of the above" {
            return Ok(found);
        }
        return Err(unparseable("finding type choices", summary));
    }
    Ok(found)
}

/// Canonical summary for a set of finding types: letters in schema order,
/// or `none` for the empty set.
pub fn format_type_choices(types: &BTreeSet<FindingType>) -> String {
    if types.is_empty() {
        return "none".to_string();
    }
    types.iter().map(|t| t.letter().to_string()).collect::<Vec<_>>().join(", ")
}

/// Earliest-position single-choice match over letter tokens and keyword
/// phrases.
fn first_choice<T: Copy>(
    summary: &str,
    letter: impl Fn(char) -> Option<T>,
    keywords: &[(&str, T)],
    extra_tokens: impl Fn(&str) -> Option<T>,
) -> Option<T> {
    let toks = tokens(summary);
    let only_letters = toks.len() == 1 && letters_only(&toks);
    let mut best: Option<(usize, T)> = None;
    let mut consider = |pos: usize, value: T| {
        if best.is_none_or(|(p, _)| pos < p) {
            best = Some((pos, value));
        }
    };
    for tok in &toks {
        if is_choice_letter(summary, tok, only_letters) {
            if let Some(v) = tok.text.chars().next().and_then(&letter) {
                consider(tok.start, v);
                continue;
            }
        }
        if let Some(v) = extra_tokens(tok.text) {
            consider(tok.start, v);
        }
    }
    let lower = summary.to_lowercase();
    for (kw, value) in keywords {
        if let Some(pos) = find_word(&lower, kw) {
            consider(pos, *value);
        }
    }
    best.map(|(_, v)| v)
}

const UNCERTAINTY_KEYWORDS: &[(&str, UncertaintyCategory)] = &[
    ("possible", UncertaintyCategory::Possible),
    ("possibly", UncertaintyCategory::Possible),
    ("positive", UncertaintyCategory::Positive),
    ("negative", UncertaintyCategory::Negative),
    ("very unlikely", UncertaintyCategory::Negative),
    ("unlikely", UncertaintyCategory::Negative),
    ("not directly mentioned", UncertaintyCategory::NotMentioned),
    ("not mentioned", UncertaintyCategory::NotMentioned),
    ("ambiguous", UncertaintyCategory::AmbiguousComparison),
    ("broad anatomical area", UncertaintyCategory::BroadAreaOnly),
    ("broad area", UncertaintyCategory::BroadAreaOnly),
];

pub fn parse_uncertainty(summary: &str) -> Result<UncertaintyCategory, ParseError> {
    first_choice(summary, UncertaintyCategory::from_letter, UNCERTAINTY_KEYWORDS, |_| None)
        .ok_or_else(|| unparseable("an uncertainty category", summary))
}

const URGENCY_KEYWORDS: &[(&str, UrgencyLevel)] = &[
    ("normal", UrgencyLevel::NORMAL),
    ("expected", UrgencyLevel::NORMAL),
    ("chronic", UrgencyLevel::NORMAL),
    ("no action", UrgencyLevel::NORMAL),
    ("non-actionable", UrgencyLevel::NORMAL),
    ("low", UrgencyLevel::LOW),
    ("medium", UrgencyLevel::MEDIUM),
    ("moderate", UrgencyLevel::MEDIUM),
    ("high", UrgencyLevel::HIGH),
    ("immediate", UrgencyLevel::HIGH),
];

pub fn parse_urgency(summary: &str) -> Result<UrgencyLevel, ParseError> {
    first_choice(summary, UrgencyLevel::from_letter, URGENCY_KEYWORDS, |tok| match tok {
        "0" | "1" | "2" | "3" => UrgencyLevel::new(tok.parse().ok()?).ok(),
        _ => None,
    })
    .ok_or_else(|| unparseable("an urgency level", summary))
}

/// Reads a yes/no verdict. An explicit `Answer: yes|no` wins (the last one
/// if repeated); otherwise a leading yes/no, otherwise all yes/no words must
/// agree.
pub fn parse_yes_no(summary: &str) -> Result<bool, ParseError> {
    let lower = summary.to_lowercase();
    let toks = tokens(&lower);
    let verdict = |t: &Token<'_>| match t.text {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    };
    let mut explicit = None;
    for (k, tok) in toks.iter().enumerate() {
        if tok.text == "answer" {
            let next = toks.get(k + 1).and_then(verdict).or_else(|| {
                // "answer is yes"
                toks.get(k + 1)
                    .filter(|t| t.text == "is")
                    .and_then(|_| toks.get(k + 2))
                    .and_then(verdict)
            });
            if next.is_some() {
                explicit = next;
            }
        }
    }
    if let Some(v) = explicit {
        return Ok(v);
    }
    if let Some(v) = toks.first().and_then(verdict) {
        return Ok(v);
    }
    let verdicts: BTreeSet<bool> = toks.iter().filter_map(verdict).collect();
    match verdicts.len() {
        1 => Ok(*verdicts.iter().next().unwrap()),
        _ => Err(unparseable("yes or no", summary)),
    }
}
