//! Synthetic corpora and scripted scenarios shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use leavs::fixture::{build_script, CellScript, FindingScript, Scenario};
use leavs::gateway::{Gateway, ScriptedBackend, TranscriptStore};
use leavs::pipeline::Labeler;
use leavs::prompts::PromptBook;
use leavs::schema::{Ablation, FindingType, LlmConfig, Organ, Report, UncertaintyCategory, UrgencyLevel};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PHRASES: &[&str] = &[
    "The liver is enlarged with a 2.1 cm hypodense lesion in segment 4.",
    "No focal hepatic lesion.",
    "The gallbladder is surgically absent.",
    "Cholelithiasis without wall thickening.",
    "Spleen is normal in size.",
    "A 6 mm splenic cyst is noted.",
    "Right kidney shows mild hydronephrosis.",
    "The left kidney contains a 1.5 cm simple cyst.",
    "Pancreas is atrophic with a dilated duct.",
    "Stomach is decompressed.",
    "Small bowel loops are not dilated.",
    "Sigmoid diverticulosis without diverticulitis.",
    "Image quality is degraded by motion.",
    "A nephrostomy tube is in place on the right.",
    "Diffuse fatty infiltration of the liver.",
    "Lung bases are clear.",
    "No free fluid in the abdomen.",
    "Postsurgical changes of partial gastrectomy.",
];

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` reports of 3 to 8 sentences each.
pub fn corpus(n: usize, seed: u64) -> Vec<Report> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(3..=8);
            let text: Vec<&str> = PHRASES.choose_multiple(&mut rng, len).copied().collect();
            Report::new(format!("r{i:03}"), text.join(" ")).unwrap()
        })
        .collect()
}

/// Generator keyed by prompt content, so identical prompts in different
/// cells get identical scripted answers.
fn keyed(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in key.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    seeded(h)
}

/// Random but well-formed answers for every cell, with no garbling.
pub fn clean_scenario(reports: &[Report], organs: &[Organ], seed: u64) -> Scenario {
    let mut cells = Vec::new();
    for report in reports {
        for &organ in organs {
            let mut cell = CellScript::empty(&report.id, organ);
            let mut rng = keyed(seed, &format!("{organ}|{}", report.text));
            for s in &report.sentences {
                if rng.random_ratio(1, 6) {
                    cell.step1.insert(s.index);
                } else if keyed(seed, &format!("{organ}|{}", s.text)).random_ratio(1, 5) {
                    cell.step2.insert(s.index);
                }
            }
            let kept: Vec<&str> = report
                .sentences
                .iter()
                .filter(|s| cell.step1.contains(&s.index) || cell.step2.contains(&s.index))
                .map(|s| s.text.as_str())
                .collect();
            let mut rng = keyed(seed, &format!("{organ}|{}", kept.join("|")));
            for t in FindingType::ALL {
                if rng.random_bool(0.25) {
                    cell.types.insert(t);
                }
            }
            for &t in &cell.types {
                let uncertainty = *UncertaintyCategory::ALL.choose(&mut rng).unwrap();
                let urgency = Some(*UrgencyLevel::ALL.choose(&mut rng).unwrap());
                cell.findings.insert(t, FindingScript { uncertainty, urgency });
            }
            cells.push(cell);
        }
    }
    Scenario { fallback: None, cells }
}

pub fn config(parallelism: usize, ablations: &[Ablation]) -> LlmConfig {
    LlmConfig {
        model_name: "scripted".into(),
        parallelism,
        ablation_flags: ablations.iter().copied().collect(),
        backoff_base_ms: 0,
        ..LlmConfig::default()
    }
}

/// Labeler backed by a script built from `scenario`, recording transcripts
/// in memory.
pub fn scripted_labeler(reports: &[Report], organs: &[Organ], scenario: &Scenario, config: &LlmConfig) -> Labeler {
    let prompts = PromptBook::default();
    let script = build_script(reports, organs, scenario, config, &prompts).unwrap();
    Labeler::new(Gateway::new(ScriptedBackend::new(script)), config.clone())
        .unwrap()
        .with_prompts(prompts)
        .with_organs(organs.iter().copied())
        .with_transcripts(TranscriptStore::in_memory())
}

pub fn cells_by_key(scenario: &Scenario) -> BTreeMap<(String, Organ), &CellScript> {
    scenario.cells.iter().map(|c| ((c.report_id.clone(), c.organ), c)).collect()
}

/// Sentences the flow should keep for a clean cell.
pub fn expected_filtered(cell: &CellScript, n: usize, config: &LlmConfig) -> BTreeSet<usize> {
    if config.has(Ablation::NoFiltration) {
        return (0..n).collect();
    }
    let mut out: BTreeSet<usize> = cell.step1.iter().copied().filter(|&i| i < n).collect();
    if !config.has(Ablation::FastFiltration) {
        out.extend(cell.step2.iter().copied().filter(|&i| i < n && !cell.step1.contains(&i)));
    }
    out
}

/// Exchanges a clean cell should cost, tallied from the flow's rules.
pub fn expected_exchanges(cell: &CellScript, n: usize, config: &LlmConfig) -> usize {
    let mut count = 0;
    if !config.has(Ablation::NoFiltration) {
        count += 2;
        if !config.has(Ablation::FastFiltration) {
            count += (0..n).filter(|i| !cell.step1.contains(i)).count();
        }
    }
    if expected_filtered(cell, n, config).is_empty() {
        return count;
    }
    count += if config.has(Ablation::IndividualTypeQuestions) { 2 * FindingType::ALL.len() } else { 2 };
    for t in cell.types.iter().filter(|t| !t.is_non_finding()) {
        count += 2;
        if cell.findings.get(t).copied().unwrap_or_default().uncertainty.is_present() {
            count += 2;
        }
    }
    count
}
