use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::labels_io::{AnnotatorRecord, FindingGroup};
use crate::schema::{Organ, OrganFindingLabel, UrgencyLevel};

pub type CellKey = (String, Organ, FindingGroup);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub report_id: String,
    pub organ: Organ,
    pub finding_group: FindingGroup,
    pub label: bool,
    pub n_annotators: usize,
    pub urgency_mean: Option<f64>,
}

impl GroundTruth {
    pub fn key(&self) -> CellKey {
        (self.report_id.clone(), self.organ, self.finding_group)
    }
}

fn key_of(r: &AnnotatorRecord) -> CellKey {
    (r.report_id.clone(), r.organ, r.finding_group)
}

pub fn mean_urgency<'a>(records: impl IntoIterator<Item = &'a AnnotatorRecord>) -> Option<f64> {
    let values: Vec<f64> = records.into_iter().filter_map(|r| r.urgency).map(|u| f64::from(u.value())).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Majority label of one cell's readings; `Ok(None)` on a tie.
pub fn majority_vote(records: &[&AnnotatorRecord]) -> Result<Option<GroundTruth>, EvalError> {
    let first = records.first().ok_or(EvalError::TooFewSamples { needed: 1, got: 0 })?;
    let key = key_of(first);
    if records.iter().any(|r| key_of(r) != key) {
        return Err(EvalError::Undefined("majority vote over records of different cells".into()));
    }
    let positives = records.iter().filter(|r| r.label).count();
    let negatives = records.len() - positives;
    if positives == negatives {
        log::info!("excluding {}/{}/{}: annotator tie {positives}-{negatives}", key.0, key.1, key.2);
        return Ok(None);
    }
    Ok(Some(GroundTruth {
        report_id: key.0,
        organ: key.1,
        finding_group: key.2,
        label: positives > negatives,
        n_annotators: records.len(),
        urgency_mean: mean_urgency(records.iter().copied()),
    }))
}

pub fn group_by_cell(records: &[AnnotatorRecord]) -> BTreeMap<CellKey, Vec<&AnnotatorRecord>> {
    let mut cells: BTreeMap<CellKey, Vec<&AnnotatorRecord>> = BTreeMap::new();
    for r in records {
        cells.entry(key_of(r)).or_default().push(r);
    }
    cells
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub cells: Vec<GroundTruth>,
    /// Cells dropped because the annotators were evenly split.
    pub ties: Vec<CellKey>,
}

pub fn build_ground_truth(records: &[AnnotatorRecord]) -> GroundTruthSet {
    let mut out = GroundTruthSet::default();
    for (key, cell) in group_by_cell(records) {
        match majority_vote(&cell) {
            Ok(Some(gt)) => out.cells.push(gt),
            Ok(None) => out.ties.push(key),
            Err(e) => unreachable!("cell grouping guarantees a valid vote: {e}"),
        }
    }
    out
}

/// One cell kept for scoring annotator `target` against the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalCell {
    pub report_id: String,
    pub organ: Organ,
    pub finding_group: FindingGroup,
    pub prediction: bool,
    pub prediction_urgency: Option<UrgencyLevel>,
    /// Agreed label of the other annotators.
    pub truth: bool,
    /// Mean urgency of the other annotators only.
    pub truth_urgency: Option<f64>,
}

/// Cells read by `target` where every other annotator agrees. Cells with
/// fewer than three readers in total are skipped.
pub fn human_eval_subset(records: &[AnnotatorRecord], target: &str) -> Vec<HumanEvalCell> {
    let mut out = Vec::new();
    for ((report_id, organ, finding_group), cell) in group_by_cell(records) {
        let Some(own) = cell.iter().find(|r| r.annotator == target) else { continue };
        if cell.len() < 3 {
            continue;
        }
        let others: Vec<&AnnotatorRecord> = cell.iter().copied().filter(|r| r.annotator != target).collect();
        let agreed = others[0].label;
        if others.iter().any(|r| r.label != agreed) {
            continue;
        }
        out.push(HumanEvalCell {
            report_id,
            organ,
            finding_group,
            prediction: own.label,
            prediction_urgency: own.urgency,
            truth: agreed,
            truth_urgency: mean_urgency(others.iter().copied()),
        });
    }
    out
}

/// Largest urgency among each (report, organ)'s labels that carry one.
/// Organs without such labels are absent.
pub fn max_urgency_per_organ(labels: &[OrganFindingLabel]) -> BTreeMap<(String, Organ), UrgencyLevel> {
    let mut out: BTreeMap<(String, Organ), UrgencyLevel> = BTreeMap::new();
    for l in labels {
        if let Some(u) = l.urgency {
            let slot = out.entry((l.report_id.clone(), l.organ)).or_insert(u);
            *slot = (*slot).max(u);
        }
    }
    out
}

/// Keeps cells with strictly more than `threshold` positives.
pub fn min_positive_filter<T>(cells: Vec<T>, threshold: usize, n_pos: impl Fn(&T) -> usize) -> Vec<T> {
    cells.into_iter().filter(|c| n_pos(c) > threshold).collect()
}

/// Percentage of each urgency level, index = level.
pub fn prevalence_table(urgencies: &[UrgencyLevel]) -> Result<[f64; 4], EvalError> {
    if urgencies.is_empty() {
        return Err(EvalError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut counts = [0usize; 4];
    for u in urgencies {
        counts[u.value() as usize] += 1;
    }
    Ok(counts.map(|c| 100.0 * c as f64 / urgencies.len() as f64))
}
