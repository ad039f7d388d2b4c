//! Metric tables: per finding type, "any abnormality" over joined organs,
//! and urgency rank correlation, plus urgency prevalence.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, p_marker, paired_bootstrap, BinaryScorer, BootstrapConfig, Estimate, Stratum, TauScorer};
use super::ground_truth::{build_ground_truth, human_eval_subset, prevalence_table};
use super::metrics::{macro_aggregate, Confusion, Metric};
use super::EvalError;
use crate::labels_io::{merge_supervision_targets, AnnotatorRecord, FindingGroup, OrganGroup, PositivePolicy, Targets};
use crate::schema::{Organ, OrganFindingLabel, UrgencyLevel};

pub const DEFAULT_MIN_POSITIVE: usize = 10;

/// Labeler name of the macro row over annotators.
pub const HUMAN_AVERAGE: &str = "human_avg";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Cells need strictly more positives than this to be reported.
    pub min_positive: usize,
    pub bootstrap: BootstrapConfig,
    pub policy: PositivePolicy,
    /// Adds per-annotator rows scored against the other annotators.
    pub human_eval: bool,
}

impl EvalOptions {
    pub fn new(seed: u64) -> Self {
        EvalOptions {
            min_positive: DEFAULT_MIN_POSITIVE,
            bootstrap: BootstrapConfig::new(seed),
            policy: PositivePolicy::default(),
            human_eval: false,
        }
    }
}

pub struct LabelerInput<'a> {
    pub name: String,
    pub labels: &'a [OrganFindingLabel],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    FindingTypes,
    AnyAbnormality,
    Urgency,
}

impl TableKind {
    pub fn token(self) -> &'static str {
        match self {
            TableKind::FindingTypes => "finding_types",
            TableKind::AnyAbnormality => "any_abnormality",
            TableKind::Urgency => "urgency",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Cell,
    Micro,
    Macro,
}

impl Aggregation {
    pub fn token(self) -> &'static str {
        match self {
            Aggregation::Cell => "cell",
            Aggregation::Micro => "micro",
            Aggregation::Macro => "macro",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub table: TableKind,
    pub organ: String,
    pub finding_type: String,
    pub labeler: String,
    pub aggregation: Aggregation,
    pub n: Option<usize>,
    /// Positives, or N minus the modal ground truth for urgency rows.
    pub n_pos: Option<usize>,
    /// `f1` or `tau_b`.
    pub score_name: String,
    pub score: Estimate,
    /// The primary labeler scored on the same subset (human rows).
    pub sub_score: Option<Estimate>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub mcc: Option<f64>,
    pub mcc_degenerate: bool,
    pub p_value: Option<f64>,
    pub p_marker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub labeler: String,
    pub n: usize,
    pub percent: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub prevalence: Vec<PrevalenceRow>,
    pub tied_cells: usize,
}

const CSV_HEADER: [&str; 20] = [
    "table", "organ", "type", "labeler", "aggregation", "n", "n_pos", "score_name", "score", "ci_low", "ci_high",
    "sub_score", "sub_ci_low", "sub_ci_high", "precision", "recall", "specificity", "mcc", "p_value", "p_marker",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.table.token().to_string(),
                r.organ.clone(),
                r.finding_type.clone(),
                r.labeler.clone(),
                r.aggregation.token().to_string(),
                opt(r.n),
                opt(r.n_pos),
                r.score_name.clone(),
                r.score.point.to_string(),
                r.score.ci_low.to_string(),
                r.score.ci_high.to_string(),
                opt(r.sub_score.map(|s| s.point)),
                opt(r.sub_score.map(|s| s.ci_low)),
                opt(r.sub_score.map(|s| s.ci_high)),
                opt(r.precision),
                opt(r.recall),
                opt(r.specificity),
                opt(r.mcc),
                opt(r.p_value),
                r.p_marker.clone(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// One scored sample: primary prediction, optional reference prediction,
/// ground truth.
#[derive(Debug, Clone, Copy)]
struct Sample<P, T> {
    primary: P,
    reference: Option<P>,
    truth: T,
}

/// (annotator prediction, primary prediction on the same case, truth)
type HumanSample<P, T> = (P, P, T);

struct Names<'a> {
    primary: &'a str,
    reference: Option<&'a str>,
}

fn supervision(labels: &[OrganFindingLabel], policy: PositivePolicy) -> BTreeMap<(String, Organ), Targets> {
    merge_supervision_targets(labels, policy)
        .into_iter()
        .map(|s| ((s.report_id, s.organ), s.targets))
        .collect()
}

fn predicts(sup: &BTreeMap<(String, Organ), Targets>, report: &str, organ: Organ, group: FindingGroup) -> bool {
    sup.get(&(report.to_string(), organ)).is_some_and(|t| t.get(group))
}

fn predicts_any(sup: &BTreeMap<(String, Organ), Targets>, report: &str, group: OrganGroup) -> bool {
    Organ::ALL
        .iter()
        .filter(|o| OrganGroup::of(**o) == group)
        .any(|&o| sup.get(&(report.to_string(), o)).is_some_and(Targets::any_abnormality))
}

fn organ_urgency(labels: &[OrganFindingLabel]) -> BTreeMap<(String, OrganGroup), UrgencyLevel> {
    let mut out: BTreeMap<(String, OrganGroup), UrgencyLevel> = BTreeMap::new();
    for l in labels {
        if let Some(u) = l.urgency {
            let slot = out.entry((l.report_id.clone(), OrganGroup::of(l.organ))).or_insert(u);
            *slot = (*slot).max(u);
        }
    }
    out
}

fn level(map: &BTreeMap<(String, OrganGroup), UrgencyLevel>, report: &str, group: OrganGroup) -> f64 {
    map.get(&(report.to_string(), group)).map_or(0.0, |u| f64::from(u.value()))
}

/// Builds every table for `primary` (and optionally `reference`) against
/// the annotations.
pub fn evaluate(
    primary: &LabelerInput<'_>,
    reference: Option<&LabelerInput<'_>>,
    annotations: &[AnnotatorRecord],
    opts: &EvalOptions,
) -> Result<MetricsTable, EvalError> {
    let names = Names { primary: &primary.name, reference: reference.map(|r| r.name.as_str()) };
    let sup_p = supervision(primary.labels, opts.policy);
    let sup_r = reference.map(|r| supervision(r.labels, opts.policy));
    let gt = build_ground_truth(annotations);
    let annotators: BTreeSet<&str> = annotations.iter().map(|r| r.annotator.as_str()).collect();
    let mut rows = Vec::new();

    // Finding-type table.
    let mut cells: BTreeMap<(Organ, FindingGroup), Vec<Sample<bool, bool>>> = BTreeMap::new();
    for g in &gt.cells {
        cells.entry((g.organ, g.finding_group)).or_default().push(Sample {
            primary: predicts(&sup_p, &g.report_id, g.organ, g.finding_group),
            reference: sup_r.as_ref().map(|s| predicts(s, &g.report_id, g.organ, g.finding_group)),
            truth: g.label,
        });
    }
    let cells: BTreeMap<(String, String), _> =
        cells.into_iter().map(|((o, g), v)| ((o.token().to_string(), g.token().to_string()), v)).collect();
    let kept = binary_rows(TableKind::FindingTypes, cells, &names, opts, &mut rows)?;

    if opts.human_eval {
        let mut per_human: BTreeMap<&str, Vec<HumanSample<bool, bool>>> = BTreeMap::new();
        for h in &annotators {
            for c in human_eval_subset(annotations, h) {
                if kept.contains(&(c.organ.token().to_string(), c.finding_group.token().to_string())) {
                    let p = predicts(&sup_p, &c.report_id, c.organ, c.finding_group);
                    per_human.entry(h).or_default().push((c.prediction, p, c.truth));
                }
            }
        }
        human_binary_rows(TableKind::FindingTypes, per_human, opts, &mut rows)?;
    }

    // Any abnormality over joined organs.
    let any_groups: BTreeSet<FindingGroup> = FindingGroup::ANY_ABNORMALITY.into_iter().collect();
    let mut any_gt: BTreeMap<(String, OrganGroup), bool> = BTreeMap::new();
    for g in gt.cells.iter().filter(|g| any_groups.contains(&g.finding_group)) {
        *any_gt.entry((g.report_id.clone(), OrganGroup::of(g.organ))).or_default() |= g.label;
    }
    let mut any_cells: BTreeMap<(String, String), Vec<Sample<bool, bool>>> = BTreeMap::new();
    for ((report, group), truth) in &any_gt {
        any_cells.entry((group.token().to_string(), "any_abnormality".to_string())).or_default().push(Sample {
            primary: predicts_any(&sup_p, report, *group),
            reference: sup_r.as_ref().map(|s| predicts_any(s, report, *group)),
            truth: *truth,
        });
    }
    let kept_any = binary_rows(TableKind::AnyAbnormality, any_cells, &names, opts, &mut rows)?;

    if opts.human_eval {
        // Each reader's own any-abnormality call per (report, joined organ).
        let mut reads: BTreeMap<(String, OrganGroup), BTreeMap<&str, bool>> = BTreeMap::new();
        for r in annotations.iter().filter(|r| any_groups.contains(&r.finding_group)) {
            *reads.entry((r.report_id.clone(), OrganGroup::of(r.organ))).or_default().entry(&r.annotator).or_default() |=
                r.label;
        }
        let mut per_human: BTreeMap<&str, Vec<HumanSample<bool, bool>>> = BTreeMap::new();
        for ((report, group), by_reader) in &reads {
            if by_reader.len() < 3 || !kept_any.contains(&(group.token().to_string(), "any_abnormality".into())) {
                continue;
            }
            for (&h, &own) in by_reader {
                let others: Vec<bool> = by_reader.iter().filter(|(o, _)| **o != h).map(|(_, v)| *v).collect();
                if others.iter().all(|v| *v == others[0]) {
                    per_human.entry(h).or_default().push((own, predicts_any(&sup_p, report, *group), others[0]));
                }
            }
        }
        human_binary_rows(TableKind::AnyAbnormality, per_human, opts, &mut rows)?;
    }

    // Urgency: per joined organ, maximum urgency.
    let urg_p = organ_urgency(primary.labels);
    let urg_r = reference.map(|r| organ_urgency(r.labels));
    let mut human_max: BTreeMap<(String, OrganGroup), BTreeMap<&str, Option<UrgencyLevel>>> = BTreeMap::new();
    for r in annotations {
        let slot = human_max
            .entry((r.report_id.clone(), OrganGroup::of(r.organ)))
            .or_default()
            .entry(&r.annotator)
            .or_default();
        *slot = (*slot).max(r.urgency);
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let mut urg_cells: BTreeMap<String, Vec<Sample<f64, f64>>> = BTreeMap::new();
    for ((report, group), by_reader) in &human_max {
        let available: Vec<f64> = by_reader.values().flatten().map(|u| f64::from(u.value())).collect();
        if let Some(truth) = mean(available) {
            urg_cells.entry(group.token().to_string()).or_default().push(Sample {
                primary: level(&urg_p, report, *group),
                reference: urg_r.as_ref().map(|m| level(m, report, *group)),
                truth,
            });
        }
    }
    let kept_urg = urgency_rows(urg_cells, &names, opts, &mut rows)?;

    if opts.human_eval {
        let mut per_human: BTreeMap<&str, BTreeMap<String, Vec<HumanSample<f64, f64>>>> = BTreeMap::new();
        for ((report, group), by_reader) in &human_max {
            if by_reader.len() < 3 || !kept_urg.contains(group.token()) {
                continue;
            }
            for (&h, own) in by_reader {
                let others: Vec<f64> = by_reader
                    .iter()
                    .filter(|(o, _)| **o != h)
                    .filter_map(|(_, v)| v.map(|u| f64::from(u.value())))
                    .collect();
                if let Some(truth) = mean(others) {
                    let pred = own.map_or(0.0, |u| f64::from(u.value()));
                    per_human
                        .entry(h)
                        .or_default()
                        .entry(group.token().to_string())
                        .or_default()
                        .push((pred, level(&urg_p, report, *group), truth));
                }
            }
        }
        human_urgency_rows(per_human, opts, &mut rows)?;
    }

    // Prevalence of urgency outputs.
    let mut prevalence = Vec::new();
    let mut push_prev = |labeler: &str, levels: Vec<UrgencyLevel>| {
        if let Ok(percent) = prevalence_table(&levels) {
            prevalence.push(PrevalenceRow { labeler: labeler.to_string(), n: levels.len(), percent });
        }
    };
    push_prev(&primary.name, primary.labels.iter().filter_map(|l| l.urgency).collect());
    if let Some(r) = reference {
        push_prev(&r.name, r.labels.iter().filter_map(|l| l.urgency).collect());
    }
    if opts.human_eval {
        for h in &annotators {
            push_prev(h, annotations.iter().filter(|r| r.annotator == *h).filter_map(|r| r.urgency).collect());
        }
    }

    Ok(MetricsTable { rows, prevalence, tied_cells: gt.ties.len() })
}

fn binary_row(
    table: TableKind,
    organ: &str,
    finding_type: &str,
    labeler: &str,
    aggregation: Aggregation,
    confusion: Confusion,
    score: Estimate,
) -> MetricsRow {
    MetricsRow {
        table,
        organ: organ.to_string(),
        finding_type: finding_type.to_string(),
        labeler: labeler.to_string(),
        aggregation,
        n: Some(confusion.n() as usize),
        n_pos: Some(confusion.n_pos() as usize),
        score_name: "f1".into(),
        score,
        sub_score: None,
        precision: Some(confusion.precision()),
        recall: Some(confusion.recall()),
        specificity: Some(confusion.specificity()),
        mcc: Some(confusion.mcc()),
        mcc_degenerate: confusion.mcc_is_degenerate(),
        p_value: None,
        p_marker: String::new(),
    }
}

/// Per-cell and micro rows for the primary and reference labelers. Returns
/// the cells that passed the positive-count filter.
fn binary_rows(
    table: TableKind,
    cells: BTreeMap<(String, String), Vec<Sample<bool, bool>>>,
    names: &Names<'_>,
    opts: &EvalOptions,
    rows: &mut Vec<MetricsRow>,
) -> Result<BTreeSet<(String, String)>, EvalError> {
    let kept: Vec<_> = cells
        .into_iter()
        .filter(|(_, s)| s.iter().filter(|x| x.truth).count() > opts.min_positive)
        .collect();
    let scorer = BinaryScorer(Metric::F1);
    let mut emit = |organ: &str, ft: &str, agg: Aggregation, samples: &[Sample<bool, bool>]| -> Result<(), EvalError> {
        let gt: Vec<bool> = samples.iter().map(|s| s.truth).collect();
        let a: Vec<bool> = samples.iter().map(|s| s.primary).collect();
        let conf_a = Confusion::from_pairs(&a, &gt)?;
        match (names.reference, samples.iter().map(|s| s.reference).collect::<Option<Vec<bool>>>()) {
            (Some(ref_name), Some(b)) => {
                let conf_b = Confusion::from_pairs(&b, &gt)?;
                let out = paired_bootstrap(&scorer, &[Stratum::new(a, b, gt)], &opts.bootstrap)?;
                rows.push(binary_row(table, organ, ft, names.primary, agg, conf_a, out.a));
                let mut r = binary_row(table, organ, ft, ref_name, agg, conf_b, out.b);
                r.p_value = Some(out.p_value);
                r.p_marker = p_marker(out.p_value).into();
                rows.push(r);
            }
            _ => {
                let est = bootstrap_ci(&scorer, &[(a, gt, 1.0)], &opts.bootstrap)?;
                rows.push(binary_row(table, organ, ft, names.primary, agg, conf_a, est));
            }
        }
        Ok(())
    };
    for ((organ, ft), samples) in &kept {
        emit(organ, ft, Aggregation::Cell, samples)?;
    }
    if !kept.is_empty() {
        let pooled: Vec<Sample<bool, bool>> = kept.iter().flat_map(|(_, s)| s.iter().copied()).collect();
        emit("micro", "micro", Aggregation::Micro, &pooled)?;
    }
    Ok(kept.into_iter().map(|(k, _)| k).collect())
}

/// Micro rows per annotator and a macro "average" row, each compared with
/// the primary labeler on the same subset.
fn human_binary_rows(
    table: TableKind,
    per_human: BTreeMap<&str, Vec<HumanSample<bool, bool>>>,
    opts: &EvalOptions,
    rows: &mut Vec<MetricsRow>,
) -> Result<(), EvalError> {
    let scorer = BinaryScorer(Metric::F1);
    let mut strata = Vec::new();
    let mut confusions = Vec::new();
    for (h, samples) in per_human {
        if samples.len() < 2 {
            log::info!("annotator {h}: fewer than two evaluable cases, no row");
            continue;
        }
        let human: Vec<bool> = samples.iter().map(|s| s.0).collect();
        let prim: Vec<bool> = samples.iter().map(|s| s.1).collect();
        let gt: Vec<bool> = samples.iter().map(|s| s.2).collect();
        let conf = Confusion::from_pairs(&human, &gt)?;
        let stratum = Stratum::new(human, prim, gt);
        let out = paired_bootstrap(&scorer, std::slice::from_ref(&stratum), &opts.bootstrap)?;
        let mut r = binary_row(table, "micro", "micro", h, Aggregation::Micro, conf, out.a);
        r.sub_score = Some(out.b);
        r.p_value = Some(out.p_value);
        r.p_marker = p_marker(out.p_value).into();
        rows.push(r);
        strata.push(stratum);
        confusions.push(conf);
    }
    if strata.is_empty() {
        return Ok(());
    }
    let out = paired_bootstrap(&scorer, &strata, &opts.bootstrap)?;
    let avg = |m: Metric| macro_aggregate(&confusions.iter().map(|c| m.of(c)).collect::<Vec<_>>());
    rows.push(MetricsRow {
        table,
        organ: "micro".into(),
        finding_type: "micro".into(),
        labeler: HUMAN_AVERAGE.into(),
        aggregation: Aggregation::Macro,
        n: None,
        n_pos: None,
        score_name: "f1".into(),
        score: out.a,
        sub_score: Some(out.b),
        precision: avg(Metric::Precision),
        recall: avg(Metric::Recall),
        specificity: avg(Metric::Specificity),
        mcc: avg(Metric::Mcc),
        mcc_degenerate: confusions.iter().any(Confusion::mcc_is_degenerate),
        p_value: Some(out.p_value),
        p_marker: p_marker(out.p_value).into(),
    });
    Ok(())
}

fn tau_row(organ: &str, labeler: &str, agg: Aggregation, n: Option<(usize, usize)>, score: Estimate) -> MetricsRow {
    MetricsRow {
        table: TableKind::Urgency,
        organ: organ.to_string(),
        finding_type: "max_urgency".into(),
        labeler: labeler.to_string(),
        aggregation: agg,
        n: n.map(|x| x.0),
        n_pos: n.map(|x| x.1),
        score_name: "tau_b".into(),
        score,
        sub_score: None,
        precision: None,
        recall: None,
        specificity: None,
        mcc: None,
        mcc_degenerate: false,
        p_value: None,
        p_marker: String::new(),
    }
}

/// N minus the count of the most common ground-truth value.
fn non_mode(truth: &[f64]) -> usize {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for t in truth {
        *counts.entry(t.to_bits()).or_default() += 1;
    }
    truth.len() - counts.values().copied().max().unwrap_or(0)
}

fn urgency_rows(
    cells: BTreeMap<String, Vec<Sample<f64, f64>>>,
    names: &Names<'_>,
    opts: &EvalOptions,
    rows: &mut Vec<MetricsRow>,
) -> Result<BTreeSet<String>, EvalError> {
    let kept: Vec<_> = cells
        .into_iter()
        .filter(|(_, s)| non_mode(&s.iter().map(|x| x.truth).collect::<Vec<_>>()) > opts.min_positive)
        .collect();
    let mut strata = Vec::new();
    for (organ, samples) in &kept {
        let gt: Vec<f64> = samples.iter().map(|s| s.truth).collect();
        let a: Vec<f64> = samples.iter().map(|s| s.primary).collect();
        let b: Option<Vec<f64>> = samples.iter().map(|s| s.reference).collect();
        let counts = Some((gt.len(), non_mode(&gt)));
        let stratum = Stratum::new(a.clone(), b.clone().unwrap_or(a), gt);
        match paired_bootstrap(&TauScorer, std::slice::from_ref(&stratum), &opts.bootstrap) {
            Ok(out) => {
                rows.push(tau_row(organ, names.primary, Aggregation::Cell, counts, out.a));
                if let (Some(ref_name), Some(_)) = (names.reference, b) {
                    let mut r = tau_row(organ, ref_name, Aggregation::Cell, counts, out.b);
                    r.p_value = Some(out.p_value);
                    r.p_marker = p_marker(out.p_value).into();
                    rows.push(r);
                }
                strata.push(stratum);
            }
            Err(e) => log::warn!("urgency {organ}: {e}"),
        }
    }
    if !strata.is_empty() {
        let out = paired_bootstrap(&TauScorer, &strata, &opts.bootstrap)?;
        rows.push(tau_row("macro", names.primary, Aggregation::Macro, None, out.a));
        if let Some(ref_name) = names.reference {
            let mut r = tau_row("macro", ref_name, Aggregation::Macro, None, out.b);
            r.p_value = Some(out.p_value);
            r.p_marker = p_marker(out.p_value).into();
            rows.push(r);
        }
    }
    Ok(kept.into_iter().map(|(k, _)| k).collect())
}

fn human_urgency_rows(
    per_human: BTreeMap<&str, BTreeMap<String, Vec<HumanSample<f64, f64>>>>,
    opts: &EvalOptions,
    rows: &mut Vec<MetricsRow>,
) -> Result<(), EvalError> {
    let mut all = Vec::new();
    for (h, organs) in per_human {
        let strata: Vec<Stratum<f64, f64>> = organs
            .into_values()
            .filter(|s| s.len() >= 2)
            .map(|s| {
                Stratum::new(s.iter().map(|x| x.0).collect(), s.iter().map(|x| x.1).collect(), s.iter().map(|x| x.2).collect())
            })
            .collect();
        if strata.is_empty() {
            continue;
        }
        match paired_bootstrap(&TauScorer, &strata, &opts.bootstrap) {
            Ok(out) => {
                let mut r = tau_row("macro", h, Aggregation::Macro, None, out.a);
                r.sub_score = Some(out.b);
                r.p_value = Some(out.p_value);
                r.p_marker = p_marker(out.p_value).into();
                rows.push(r);
                let w = 1.0 / strata.len() as f64;
                all.extend(strata.into_iter().map(|s| Stratum { weight: w, ..s }));
            }
            Err(e) => log::warn!("urgency for annotator {h}: {e}"),
        }
    }
    if all.is_empty() {
        return Ok(());
    }
    let out = paired_bootstrap(&TauScorer, &all, &opts.bootstrap)?;
    let mut r = tau_row("macro", HUMAN_AVERAGE, Aggregation::Macro, None, out.a);
    r.sub_score = Some(out.b);
    r.p_value = Some(out.p_value);
    r.p_marker = p_marker(out.p_value).into();
    rows.push(r);
    Ok(())
}
