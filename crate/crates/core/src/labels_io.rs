//! Label, report and annotation files, plus the transforms that turn
//! per-finding-type labels into per-organ supervision targets.
//!
//! Every JSONL record carries `format_version`; readers accept records that
//! omit it (treated as the current version) and reject unknown versions.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{FindingType, Organ, OrganFindingLabel, Report, UncertaintyCategory, UrgencyLevel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LabelsIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
    #[error("invalid column mapping `{0}`")]
    ColumnMap(String),
    #[error("unknown value `{0}`")]
    UnknownValue(String),
}

/// Whether a bad record aborts the read or is skipped with a warning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug)]
pub struct ReadOutcome<T> {
    pub records: Vec<T>,
    /// Lines skipped in lenient mode.
    pub skipped: Vec<LabelsIoError>,
}

/// The seven supervision outputs per organ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingGroup {
    PsAbsent,
    Quality,
    Anatomy,
    Size,
    Device,
    Diffuse,
    Focal,
}

impl FindingGroup {
    pub const ALL: [FindingGroup; 7] = [
        FindingGroup::PsAbsent,
        FindingGroup::Quality,
        FindingGroup::Anatomy,
        FindingGroup::Size,
        FindingGroup::Device,
        FindingGroup::Diffuse,
        FindingGroup::Focal,
    ];

    /// Groups annotated by the human readers.
    pub const HUMAN_ANNOTATED: [FindingGroup; 5] = [
        FindingGroup::Quality,
        FindingGroup::PsAbsent,
        FindingGroup::Size,
        FindingGroup::Diffuse,
        FindingGroup::Focal,
    ];

    /// Groups whose OR defines "any abnormality". Quality, anatomy and device
    /// are deliberately left out.
    pub const ANY_ABNORMALITY: [FindingGroup; 4] =
        [FindingGroup::Size, FindingGroup::Focal, FindingGroup::Diffuse, FindingGroup::PsAbsent];

    pub fn of(finding_type: FindingType) -> Option<FindingGroup> {
        Some(match finding_type {
            FindingType::Postsurgical | FindingType::Absent => FindingGroup::PsAbsent,
            FindingType::Quality => FindingGroup::Quality,
            FindingType::Anatomy => FindingGroup::Anatomy,
            FindingType::Enlarged | FindingType::Atrophy => FindingGroup::Size,
            FindingType::Device => FindingGroup::Device,
            FindingType::Diffuse => FindingGroup::Diffuse,
            FindingType::Focal => FindingGroup::Focal,
            FindingType::Adjacent | FindingType::Normal => return None,
        })
    }

    pub fn members(self) -> &'static [FindingType] {
        match self {
            FindingGroup::PsAbsent => &[FindingType::Absent, FindingType::Postsurgical],
            FindingGroup::Quality => &[FindingType::Quality],
            FindingGroup::Anatomy => &[FindingType::Anatomy],
            FindingGroup::Size => &[FindingType::Enlarged, FindingType::Atrophy],
            FindingGroup::Device => &[FindingType::Device],
            FindingGroup::Diffuse => &[FindingType::Diffuse],
            FindingGroup::Focal => &[FindingType::Focal],
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            FindingGroup::PsAbsent => "ps_absent",
            FindingGroup::Quality => "quality",
            FindingGroup::Anatomy => "anatomy",
            FindingGroup::Size => "size",
            FindingGroup::Device => "device",
            FindingGroup::Diffuse => "diffuse",
            FindingGroup::Focal => "focal",
        }
    }
}

impl fmt::Display for FindingGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FindingGroup {
    type Err = LabelsIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = token_key(s);
        let key = match key.as_str() {
            "ps" | "postsurgical_absent" | "postsurgical+absent" | "absent_postsurgical" => "ps_absent",
            "enlarged_atrophy" | "enlarged+atrophy" => "size",
            other => other,
        };
        FindingGroup::ALL
            .into_iter()
            .find(|g| g.token() == key)
            .ok_or_else(|| LabelsIoError::UnknownValue(s.to_string()))
    }
}

/// Organs after joining left/right kidney and small/large bowel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrganGroup {
    Liver,
    Gallbladder,
    Spleen,
    Kidneys,
    Pancreas,
    Stomach,
    Bowels,
}

impl OrganGroup {
    pub const ALL: [OrganGroup; 7] = [
        OrganGroup::Liver,
        OrganGroup::Gallbladder,
        OrganGroup::Spleen,
        OrganGroup::Kidneys,
        OrganGroup::Pancreas,
        OrganGroup::Stomach,
        OrganGroup::Bowels,
    ];

    pub fn of(organ: Organ) -> OrganGroup {
        match organ {
            Organ::Liver => OrganGroup::Liver,
            Organ::Gallbladder => OrganGroup::Gallbladder,
            Organ::Spleen => OrganGroup::Spleen,
            Organ::RightKidney | Organ::LeftKidney => OrganGroup::Kidneys,
            Organ::Pancreas => OrganGroup::Pancreas,
            Organ::Stomach => OrganGroup::Stomach,
            Organ::SmallBowel | Organ::LargeBowel => OrganGroup::Bowels,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            OrganGroup::Liver => "liver",
            OrganGroup::Gallbladder => "gallbladder",
            OrganGroup::Spleen => "spleen",
            OrganGroup::Kidneys => "kidneys",
            OrganGroup::Pancreas => "pancreas",
            OrganGroup::Stomach => "stomach",
            OrganGroup::Bowels => "bowels",
        }
    }
}

impl fmt::Display for OrganGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivePolicy {
    PositiveOnly,
    #[default]
    PositiveOrPossible,
}

impl PositivePolicy {
    pub fn counts(self, uncertainty: UncertaintyCategory) -> bool {
        match self {
            PositivePolicy::PositiveOnly => uncertainty == UncertaintyCategory::Positive,
            PositivePolicy::PositiveOrPossible => uncertainty.is_present(),
        }
    }
}

impl FromStr for PositivePolicy {
    type Err = LabelsIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match token_key(s).as_str() {
            "positive_only" => Ok(PositivePolicy::PositiveOnly),
            "positive_or_possible" => Ok(PositivePolicy::PositiveOrPossible),
            _ => Err(LabelsIoError::UnknownValue(s.to_string())),
        }
    }
}

/// Binary targets for all seven groups plus the urgency of the positive ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Targets {
    pub targets: BTreeMap<FindingGroup, bool>,
    #[serde(default)]
    pub urgencies: BTreeMap<FindingGroup, UrgencyLevel>,
}

impl Default for Targets {
    fn default() -> Self {
        Targets { targets: FindingGroup::ALL.iter().map(|&g| (g, false)).collect(), urgencies: BTreeMap::new() }
    }
}

impl Targets {
    pub fn get(&self, group: FindingGroup) -> bool {
        self.targets.get(&group).copied().unwrap_or(false)
    }

    /// Marks `group` positive, keeping the larger urgency.
    pub fn set(&mut self, group: FindingGroup, urgency: Option<UrgencyLevel>) {
        self.targets.insert(group, true);
        if let Some(u) = urgency {
            let slot = self.urgencies.entry(group).or_insert(u);
            *slot = (*slot).max(u);
        }
    }

    /// Group-wise OR of targets and max of urgencies.
    pub fn union(&self, other: &Targets) -> Targets {
        let mut out = self.clone();
        for g in FindingGroup::ALL {
            if other.get(g) {
                out.set(g, other.urgencies.get(&g).copied());
            }
        }
        out
    }

    pub fn any_abnormality(&self) -> bool {
        FindingGroup::ANY_ABNORMALITY.iter().any(|&g| self.get(g))
    }

    pub fn any_abnormality_urgency(&self) -> Option<UrgencyLevel> {
        FindingGroup::ANY_ABNORMALITY.iter().filter_map(|g| self.urgencies.get(g).copied()).max()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionLabel {
    pub report_id: String,
    pub organ: Organ,
    #[serde(flatten)]
    pub targets: Targets,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinedSupervision {
    pub report_id: String,
    pub organ: OrganGroup,
    #[serde(flatten)]
    pub targets: Targets,
}

/// Collapses finding-type labels into one [`SupervisionLabel`] per
/// (report, organ) that has at least one label, sorted by report and organ.
pub fn merge_supervision_targets(labels: &[OrganFindingLabel], policy: PositivePolicy) -> Vec<SupervisionLabel> {
    let mut cells: BTreeMap<(&str, Organ), Targets> = BTreeMap::new();
    for label in labels {
        let targets = cells.entry((label.report_id.as_str(), label.organ)).or_default();
        if let Some(group) = FindingGroup::of(label.finding_type) {
            if policy.counts(label.uncertainty) {
                targets.set(group, label.urgency);
            }
        }
    }
    cells
        .into_iter()
        .map(|((report_id, organ), targets)| SupervisionLabel { report_id: report_id.to_string(), organ, targets })
        .collect()
}

/// Adds all-negative rows so every report in `report_ids` has every organ.
pub fn fill_grid<'a>(
    labels: Vec<SupervisionLabel>,
    report_ids: impl IntoIterator<Item = &'a str>,
    organs: &[Organ],
) -> Vec<SupervisionLabel> {
    let mut cells: BTreeMap<(String, Organ), SupervisionLabel> =
        labels.into_iter().map(|l| ((l.report_id.clone(), l.organ), l)).collect();
    for id in report_ids {
        for &organ in organs {
            cells.entry((id.to_string(), organ)).or_insert_with(|| SupervisionLabel {
                report_id: id.to_string(),
                organ,
                targets: Targets::default(),
            });
        }
    }
    cells.into_values().collect()
}

pub fn any_abnormality(supervision: &SupervisionLabel) -> bool {
    supervision.targets.any_abnormality()
}

/// Joins kidneys and bowels by OR of targets and max of urgencies; the
/// other organs pass through unchanged.
pub fn join_organs(per_organ: &[SupervisionLabel]) -> Vec<JoinedSupervision> {
    let mut joined: BTreeMap<(&str, OrganGroup), Targets> = BTreeMap::new();
    for s in per_organ {
        joined
            .entry((s.report_id.as_str(), OrganGroup::of(s.organ)))
            .and_modify(|t| *t = t.union(&s.targets))
            .or_insert_with(|| s.targets.clone());
    }
    joined
        .into_iter()
        .map(|((report_id, organ), targets)| JoinedSupervision { report_id: report_id.to_string(), organ, targets })
        .collect()
}

/// One human reading of one (report, organ, group) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorRecord {
    pub annotator: String,
    pub report_id: String,
    pub organ: Organ,
    pub finding_group: FindingGroup,
    pub label: bool,
    #[serde(default)]
    pub urgency: Option<UrgencyLevel>,
}

/// CSV header names for each annotation field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub report_id: String,
    pub organ: String,
    pub finding_group: String,
    pub label: String,
    pub urgency: String,
    pub annotator: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            report_id: "report_id".into(),
            organ: "organ".into(),
            finding_group: "finding_group".into(),
            label: "label".into(),
            urgency: "urgency".into(),
            annotator: "annotator".into(),
        }
    }
}

impl FromStr for ColumnMap {
    type Err = LabelsIoError;

    /// Parses `field=header` pairs separated by commas, e.g.
    /// `report_id=case,annotator=reader`. Unmentioned fields keep defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut map = ColumnMap::default();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (field, header) = pair.split_once('=').ok_or_else(|| LabelsIoError::ColumnMap(pair.into()))?;
            let slot = match field.trim() {
                "report_id" => &mut map.report_id,
                "organ" => &mut map.organ,
                "finding_group" => &mut map.finding_group,
                "label" => &mut map.label,
                "urgency" => &mut map.urgency,
                "annotator" => &mut map.annotator,
                _ => return Err(LabelsIoError::ColumnMap(pair.into())),
            };
            *slot = header.trim().to_string();
        }
        Ok(map)
    }
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    format_version: u32,
    #[serde(flatten)]
    record: &'a T,
}

#[derive(Deserialize)]
struct Incoming<T> {
    #[serde(default = "current_version")]
    format_version: u32,
    #[serde(flatten)]
    record: T,
}

fn current_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Deserialize)]
struct ReportRecord {
    #[serde(alias = "id")]
    report_id: String,
    text: String,
}

#[derive(Serialize)]
struct ReportOut<'a> {
    report_id: &'a str,
    text: &'a str,
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> LabelsIoError + '_ {
    move |source| LabelsIoError::Io { path: path.to_path_buf(), source }
}

/// Reads JSONL records, converting each through `check`.
pub fn read_jsonl<T, U>(
    path: &Path,
    mode: ReadMode,
    mut check: impl FnMut(T) -> Result<U, String>,
) -> Result<ReadOutcome<U>, LabelsIoError>
where
    T: DeserializeOwned,
{
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = ReadOutcome { records: Vec::new(), skipped: Vec::new() };
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.strip_prefix('\u{feff}').unwrap_or(&line).trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Incoming<T>>(line)
            .map_err(|e| e.to_string())
            .and_then(|inc| {
                if inc.format_version != FORMAT_VERSION {
                    Err(format!("unsupported format_version {}", inc.format_version))
                } else {
                    check(inc.record)
                }
            });
        match parsed {
            Ok(v) => out.records.push(v),
            Err(message) => {
                let err = LabelsIoError::Record { path: path.to_path_buf(), line: n + 1, message };
                match mode {
                    ReadMode::Strict => return Err(err),
                    ReadMode::Lenient => {
                        log::warn!("skipping {err}");
                        out.skipped.push(err);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Writes records as JSONL, one `format_version`-tagged object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), LabelsIoError> {
    let writer = JsonlWriter::create(path)?;
    for r in records {
        writer.append(r)?;
    }
    writer.finish()
}

/// Line-oriented writer that may be shared between threads.
pub struct JsonlWriter {
    path: PathBuf,
    inner: Mutex<BufWriter<File>>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, LabelsIoError> {
        let file = File::create(path).map_err(io_err(path))?;
        Ok(JsonlWriter { path: path.to_path_buf(), inner: Mutex::new(BufWriter::new(file)) })
    }

    pub fn append<T: Serialize>(&self, record: &T) -> Result<(), LabelsIoError> {
        let line = serde_json::to_string(&Envelope { format_version: FORMAT_VERSION, record })
            .map_err(|e| LabelsIoError::Io { path: self.path.clone(), source: e.into() })?;
        let mut w = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(io_err(&self.path))
    }

    pub fn finish(self) -> Result<(), LabelsIoError> {
        let path = self.path;
        let mut w = self.inner.into_inner().unwrap_or_else(|e| e.into_inner());
        w.flush().map_err(io_err(&path))
    }
}

pub fn read_reports(path: &Path, mode: ReadMode) -> Result<ReadOutcome<Report>, LabelsIoError> {
    let mut seen = HashSet::new();
    read_jsonl(path, mode, |r: ReportRecord| {
        if !seen.insert(r.report_id.clone()) {
            return Err(format!("duplicate report id `{}`", r.report_id));
        }
        Report::new(r.report_id, r.text).map_err(|e| e.to_string())
    })
}

pub fn write_reports(path: &Path, reports: &[Report]) -> Result<(), LabelsIoError> {
    let out: Vec<ReportOut<'_>> =
        reports.iter().map(|r| ReportOut { report_id: &r.id, text: &r.text }).collect();
    write_jsonl(path, &out)
}

pub fn read_labels(path: &Path, mode: ReadMode) -> Result<ReadOutcome<OrganFindingLabel>, LabelsIoError> {
    read_jsonl(path, mode, |l: OrganFindingLabel| l.validate().map(|_| l).map_err(|e| e.to_string()))
}

pub fn write_labels(path: &Path, labels: &[OrganFindingLabel]) -> Result<(), LabelsIoError> {
    write_jsonl(path, labels)
}

/// Reads annotations from CSV (by `.csv` extension) or JSONL.
pub fn read_annotations(
    path: &Path,
    mode: ReadMode,
    columns: &ColumnMap,
) -> Result<ReadOutcome<AnnotatorRecord>, LabelsIoError> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut out = if is_csv {
        read_annotations_csv(path, mode, columns)?
    } else {
        read_jsonl(path, mode, Ok::<AnnotatorRecord, String>)?
    };
    let mut seen = BTreeSet::new();
    let mut kept = Vec::with_capacity(out.records.len());
    for r in out.records {
        let key = (r.annotator.clone(), r.report_id.clone(), r.organ, r.finding_group);
        if seen.insert(key) {
            kept.push(r);
            continue;
        }
        let err = LabelsIoError::Record {
            path: path.to_path_buf(),
            line: 0,
            message: format!(
                "duplicate annotation by {} for {}/{}/{}",
                r.annotator, r.report_id, r.organ, r.finding_group
            ),
        };
        match mode {
            ReadMode::Strict => return Err(err),
            ReadMode::Lenient => {
                log::warn!("skipping {err}");
                out.skipped.push(err);
            }
        }
    }
    out.records = kept;
    Ok(out)
}

fn read_annotations_csv(
    path: &Path,
    mode: ReadMode,
    columns: &ColumnMap,
) -> Result<ReadOutcome<AnnotatorRecord>, LabelsIoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_err(path, 1, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, 1, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| LabelsIoError::Record {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let idx = [
        col(&columns.report_id)?,
        col(&columns.organ)?,
        col(&columns.finding_group)?,
        col(&columns.label)?,
        col(&columns.urgency)?,
        col(&columns.annotator)?,
    ];
    let mut out = ReadOutcome { records: Vec::new(), skipped: Vec::new() };
    for (n, row) in reader.records().enumerate() {
        let line = n + 2;
        let parsed = row
            .map_err(|e| e.to_string())
            .and_then(|row| parse_annotation_row(idx.map(|i| row.get(i).unwrap_or("").trim())));
        match parsed {
            Ok(r) => out.records.push(r),
            Err(message) => {
                let err = LabelsIoError::Record { path: path.to_path_buf(), line, message };
                match mode {
                    ReadMode::Strict => return Err(err),
                    ReadMode::Lenient => {
                        log::warn!("skipping {err}");
                        out.skipped.push(err);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn csv_err(path: &Path, line: usize, e: csv::Error) -> LabelsIoError {
    LabelsIoError::Record { path: path.to_path_buf(), line, message: e.to_string() }
}

fn parse_annotation_row([report_id, organ, group, label, urgency, annotator]: [&str; 6]) -> Result<AnnotatorRecord, String> {
    if report_id.is_empty() || annotator.is_empty() {
        return Err("empty report_id or annotator".into());
    }
    let label = match label.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => true,
        "0" | "false" | "no" => false,
        other => return Err(format!("invalid label `{other}`")),
    };
    let urgency = if urgency.is_empty() {
        None
    } else {
        let v: f64 = urgency.parse().map_err(|_| format!("invalid urgency `{urgency}`"))?;
        if v.fract() != 0.0 || !(0.0..=3.0).contains(&v) {
            return Err(format!("invalid urgency `{urgency}`"));
        }
        Some(UrgencyLevel::new(v as u8).map_err(|e| e.to_string())?)
    };
    Ok(AnnotatorRecord {
        annotator: annotator.to_string(),
        report_id: report_id.to_string(),
        organ: organ.parse().map_err(|e: crate::schema::SchemaError| e.to_string())?,
        finding_group: group.parse().map_err(|e: LabelsIoError| e.to_string())?,
        label,
        urgency,
    })
}

/// Writes annotations in the six-column CSV layout.
pub fn write_annotations_csv(path: &Path, records: &[AnnotatorRecord]) -> Result<(), LabelsIoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, 0, e))?;
    let mut row = |fields: [&str; 6]| w.write_record(fields).map_err(|e| csv_err(path, 0, e));
    row(["report_id", "organ", "finding_group", "label", "urgency", "annotator"])?;
    for r in records {
        let urgency = r.urgency.map(|u| u.value().to_string()).unwrap_or_default();
        row([
            &r.report_id,
            r.organ.token(),
            r.finding_group.token(),
            if r.label { "1" } else { "0" },
            &urgency,
            &r.annotator,
        ])?;
    }
    w.flush().map_err(io_err(path))
}

fn token_key(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace([' ', '-'], "_")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label(organ: Organ, t: FindingType, u: UncertaintyCategory, urg: Option<u8>) -> OrganFindingLabel {
        OrganFindingLabel {
            report_id: "r1".into(),
            organ,
            finding_type: t,
            uncertainty: u,
            urgency: urg.map(|v| UrgencyLevel::new(v).unwrap()),
            evidence: vec![0],
            transcript_refs: vec![],
        }
    }

    #[test]
    fn enlarged_sets_size() {
        let merged = merge_supervision_targets(
            &[label(Organ::Liver, FindingType::Enlarged, UncertaintyCategory::Positive, Some(1))],
            PositivePolicy::default(),
        );
        assert!(merged[0].targets.get(FindingGroup::Size));
    }

    #[test]
    fn possible_excluded_under_positive_only() {
        let merged = merge_supervision_targets(
            &[label(Organ::Liver, FindingType::Atrophy, UncertaintyCategory::Possible, Some(1))],
            PositivePolicy::PositiveOnly,
        );
        assert!(!merged[0].targets.get(FindingGroup::Size));
        assert!(merged[0].targets.urgencies.is_empty());
    }

    #[test]
    fn ps_absent_takes_max_urgency() {
        let labels = [
            label(Organ::Gallbladder, FindingType::Postsurgical, UncertaintyCategory::Positive, Some(1)),
            label(Organ::Gallbladder, FindingType::Absent, UncertaintyCategory::Positive, Some(0)),
        ];
        let merged = merge_supervision_targets(&labels, PositivePolicy::default());
        let oracle = labels.iter().filter_map(|l| l.urgency).max();
        assert!(merged[0].targets.get(FindingGroup::PsAbsent));
        assert_eq!(merged[0].targets.urgencies.get(&FindingGroup::PsAbsent).copied(), oracle);
        assert_eq!(oracle, Some(UrgencyLevel::LOW));
    }

    #[test]
    fn any_abnormality_groups() {
        let mut t = Targets::default();
        assert!(!t.any_abnormality());
        t.set(FindingGroup::Device, None);
        assert!(!t.any_abnormality());
        t.set(FindingGroup::Focal, None);
        assert!(t.any_abnormality());
    }

    #[test]
    fn joins_kidneys_with_max_urgency() {
        let mut right = Targets::default();
        right.set(FindingGroup::Focal, Some(UrgencyLevel::MEDIUM));
        let mut left = Targets::default();
        left.set(FindingGroup::Focal, Some(UrgencyLevel::HIGH));
        let sups = vec![
            SupervisionLabel { report_id: "r".into(), organ: Organ::RightKidney, targets: right },
            SupervisionLabel { report_id: "r".into(), organ: Organ::LeftKidney, targets: left },
            SupervisionLabel { report_id: "r".into(), organ: Organ::SmallBowel, targets: Targets::default() },
            SupervisionLabel { report_id: "r".into(), organ: Organ::LargeBowel, targets: Targets::default() },
        ];
        let joined = join_organs(&sups);
        assert_eq!(joined.len(), 2);
        assert_eq!(joined[0].organ, OrganGroup::Kidneys);
        assert_eq!(joined[0].targets.urgencies[&FindingGroup::Focal], UrgencyLevel::HIGH);
        assert_eq!(joined[1].organ, OrganGroup::Bowels);
        assert!(!joined[1].targets.any_abnormality());
    }

    #[test]
    fn labels_round_trip_and_crlf() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        let labels = vec![
            label(Organ::Liver, FindingType::Focal, UncertaintyCategory::Positive, Some(2)),
            label(Organ::Spleen, FindingType::Enlarged, UncertaintyCategory::Negative, None),
        ];
        write_labels(&path, &labels).unwrap();
        assert_eq!(read_labels(&path, ReadMode::Strict).unwrap().records, labels);
        let crlf = std::fs::read_to_string(&path).unwrap().replace('\n', "\r\n");
        std::fs::write(&path, crlf).unwrap();
        assert_eq!(read_labels(&path, ReadMode::Strict).unwrap().records, labels);
    }

    #[test]
    fn lenient_skips_and_strict_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        let good = serde_json::to_string(&Envelope {
            format_version: 1,
            record: &label(Organ::Liver, FindingType::Focal, UncertaintyCategory::Positive, Some(2)),
        })
        .unwrap();
        let mut lines = vec![good.as_str(); 6];
        lines.push("{\"report_id\": 3}");
        std::fs::write(&path, lines.join("\n")).unwrap();
        let lenient = read_labels(&path, ReadMode::Lenient).unwrap();
        assert_eq!((lenient.records.len(), lenient.skipped.len()), (6, 1));
        match read_labels(&path, ReadMode::Strict) {
            Err(LabelsIoError::Record { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_format_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(&path, "{\"format_version\":2,\"report_id\":\"a\",\"text\":\"x.\"}\n").unwrap();
        assert!(read_reports(&path, ReadMode::Strict).is_err());
    }

    #[test]
    fn annotations_csv_round_trip_with_column_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let records = vec![
            AnnotatorRecord {
                annotator: "H1".into(),
                report_id: "r1".into(),
                organ: Organ::LeftKidney,
                finding_group: FindingGroup::PsAbsent,
                label: true,
                urgency: Some(UrgencyLevel::LOW),
            },
            AnnotatorRecord {
                annotator: "H2".into(),
                report_id: "r1".into(),
                organ: Organ::Liver,
                finding_group: FindingGroup::Focal,
                label: false,
                urgency: None,
            },
        ];
        write_annotations_csv(&path, &records).unwrap();
        let back = read_annotations(&path, ReadMode::Strict, &ColumnMap::default()).unwrap();
        assert_eq!(back.records, records);

        let renamed = dir.path().join("b.csv");
        std::fs::write(&renamed, "case,reader,organ,finding_group,label,urgency\r\nr9,H3,liver,Focal,1,3\r\n").unwrap();
        let map: ColumnMap = "report_id=case,annotator=reader".parse().unwrap();
        let back = read_annotations(&renamed, ReadMode::Strict, &map).unwrap();
        assert_eq!(back.records[0].report_id, "r9");
        assert_eq!(back.records[0].urgency, Some(UrgencyLevel::HIGH));
    }

    #[test]
    fn duplicate_annotation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "report_id,organ,finding_group,label,urgency,annotator\nr,liver,focal,1,,H\nr,liver,focal,0,,H\n").unwrap();
        assert!(read_annotations(&path, ReadMode::Strict, &ColumnMap::default()).is_err());
        let lenient = read_annotations(&path, ReadMode::Lenient, &ColumnMap::default()).unwrap();
        assert_eq!((lenient.records.len(), lenient.skipped.len()), (1, 1));
    }

    fn arb_label() -> impl Strategy<Value = OrganFindingLabel> {
        let types: Vec<FindingType> = FindingType::ALL.into_iter().filter(|t| !t.is_non_finding()).collect();
        (0..9usize, proptest::sample::select(types), 0..6usize, 0..4u8).prop_map(|(o, t, u, urg)| {
            let uncertainty = UncertaintyCategory::ALL[u];
            label(Organ::ALL[o], t, uncertainty, uncertainty.is_present().then_some(urg))
        })
    }

    proptest! {
        /// Turning one more label positive never lowers any derived value.
        #[test]
        fn merge_and_join_are_monotone(labels in proptest::collection::vec(arb_label(), 0..20), extra in arb_label()) {
            let mut flipped = extra.clone();
            flipped.uncertainty = UncertaintyCategory::Positive;
            flipped.urgency = Some(extra.urgency.unwrap_or(UrgencyLevel::NORMAL));
            for policy in [PositivePolicy::PositiveOnly, PositivePolicy::PositiveOrPossible] {
                let mut before = labels.clone();
                before.push(extra.clone());
                let mut after = labels.clone();
                after.push(flipped.clone());
                let grid = |ls: &[OrganFindingLabel]| {
                    join_organs(&fill_grid(merge_supervision_targets(ls, policy), ["r1"], &Organ::ALL))
                };
                for (b, a) in grid(&before).iter().zip(grid(&after).iter()) {
                    prop_assert_eq!(b.organ, a.organ);
                    for g in FindingGroup::ALL {
                        prop_assert!(a.targets.get(g) >= b.targets.get(g));
                        prop_assert!(a.targets.urgencies.get(&g) >= b.targets.urgencies.get(&g));
                    }
                    prop_assert!(a.targets.any_abnormality() >= b.targets.any_abnormality());
                }
            }
        }
    }
}
