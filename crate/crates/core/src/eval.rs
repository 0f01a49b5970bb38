//! Overall and Flow evaluation, per-trait accuracy, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{BackboneAdapter, BackboneError};
use crate::corpus::{flow_prefix, flow_prefix_len, Dialogue};
use crate::hypotheses::Trait;
use crate::nli::TraitPrediction;
use crate::pipeline::{Pipeline, PipelineError};
use crate::scalar::Scalar;
use crate::trainer::{Ablation, Checkpoint};

pub const FLOW_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no model for trait {0}")]
    MissingTrait(Trait),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("flow fraction {0} is not one of 0.25, 0.5, 0.75, 1.0")]
    BadFraction(f64),
    #[error("dialogue `{dialogue_id}`: {source}")]
    Dialogue {
        dialogue_id: String,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A scoring adapter together with the ablation mode it was trained under.
pub struct TraitModel<T: Scalar> {
    pub adapter: Box<dyn BackboneAdapter<T>>,
    pub ablation: Ablation,
}

impl<T: Scalar> TraitModel<T> {
    pub fn new(adapter: Box<dyn BackboneAdapter<T>>, ablation: Ablation) -> Self {
        Self { adapter, ablation }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint<T>) -> Result<Self, BackboneError> {
        Ok(Self {
            adapter: checkpoint.adapter.build()?,
            ablation: checkpoint.config.ablation,
        })
    }
}

pub type TraitModels<T> = BTreeMap<Trait, TraitModel<T>>;

fn check_models<T: Scalar>(models: &TraitModels<T>) -> Result<(), EvalError> {
    match Trait::ALL.into_iter().find(|t| !models.contains_key(t)) {
        Some(t) => Err(EvalError::MissingTrait(t)),
        None => Ok(()),
    }
}

/// Predictions for all five traits on one dialogue, in report order.
pub fn predict_dialogue<T: Scalar>(
    models: &TraitModels<T>,
    dialogue: &Dialogue,
    pipeline: &Pipeline,
) -> Result<Vec<TraitPrediction<T>>, EvalError> {
    check_models(models)?;
    let affective = models.values().any(|m| m.ablation.needs_affective());
    let prepared = pipeline
        .prepare(dialogue, affective)
        .map_err(|source| EvalError::Dialogue {
            dialogue_id: dialogue.dialogue_id.clone(),
            source,
        })?;
    Trait::ALL
        .into_iter()
        .map(|t| {
            let m = &models[&t];
            Ok(pipeline.predict(m.adapter.as_ref(), &prepared, t, m.ablation)?)
        })
        .collect()
}

/// Per-trait accuracies and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub per_trait: BTreeMap<Trait, f64>,
    pub average: f64,
}

impl Accuracies {
    pub fn from_per_trait(per_trait: BTreeMap<Trait, f64>) -> Self {
        let average = per_trait.values().sum::<f64>() / per_trait.len() as f64;
        Self { per_trait, average }
    }

    pub fn get(&self, t: Trait) -> f64 {
        self.per_trait[&t]
    }
}

/// Number of correct predictions per trait over `dialogues`, scored on worker
/// threads. Counts are integers, so the result does not depend on order.
fn correct_counts<T: Scalar>(
    models: &TraitModels<T>,
    dialogues: &[Dialogue],
    pipeline: &Pipeline,
) -> Result<[usize; 5], EvalError> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(dialogues.len().max(1));
    let chunk = dialogues.len().div_ceil(workers).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = dialogues
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || -> Result<[usize; 5], EvalError> {
                    let mut counts = [0usize; 5];
                    for d in part {
                        let preds = predict_dialogue(models, d, pipeline)?;
                        for (k, p) in preds.iter().enumerate() {
                            counts[k] += usize::from(p.label == d.labels.get(p.trait_));
                        }
                    }
                    Ok(counts)
                })
            })
            .collect();
        let mut total = [0usize; 5];
        for h in handles {
            let counts = h.join().expect("evaluation worker panicked")?;
            for k in 0..5 {
                total[k] += counts[k];
            }
        }
        Ok(total)
    })
}

/// Accuracy of each trait model on the full-length test dialogues.
pub fn evaluate_overall<T: Scalar>(
    models: &TraitModels<T>,
    test: &[Dialogue],
    pipeline: &Pipeline,
) -> Result<Accuracies, EvalError> {
    check_models(models)?;
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let counts = correct_counts(models, test, pipeline)?;
    let per_trait = Trait::ALL
        .into_iter()
        .zip(counts)
        .map(|(t, c)| (t, c as f64 / test.len() as f64))
        .collect();
    Ok(Accuracies::from_per_trait(per_trait))
}

/// Result of one flow fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub fraction: f64,
    pub accuracies: Accuracies,
    /// Mean number of target utterances in the unextended prefixes.
    pub mean_target_utterances: f64,
    /// Same, after extending prefixes to reach a target utterance.
    pub mean_target_utterances_extended: f64,
    /// Dialogues whose prefix had to be extended.
    pub extended_dialogues: Vec<String>,
}

/// Mean target-utterance counts over the prefixes at `fraction`, before and
/// after extension, and the ids of extended dialogues.
pub fn flow_target_counts(dialogues: &[Dialogue], fraction: f64) -> (f64, f64, Vec<String>) {
    let mut natural = 0usize;
    let mut extended = 0usize;
    let mut ids = Vec::new();
    for d in dialogues {
        let len = flow_prefix_len(d, fraction);
        let count = |n: usize| d.utterances[..n].iter().filter(|u| u.is_target).count();
        natural += count(len.natural);
        extended += count(len.extended);
        if len.was_extended() {
            ids.push(d.dialogue_id.clone());
        }
    }
    let n = dialogues.len().max(1) as f64;
    (natural as f64 / n, extended as f64 / n, ids)
}

/// Overall evaluation on the flow prefix of every test dialogue, once per fraction.
pub fn evaluate_flow<T: Scalar>(
    models: &TraitModels<T>,
    test: &[Dialogue],
    pipeline: &Pipeline,
    fractions: &[f64],
) -> Result<Vec<FlowResult>, EvalError> {
    if let Some(&bad) = fractions.iter().find(|f| !FLOW_FRACTIONS.contains(f)) {
        return Err(EvalError::BadFraction(bad));
    }
    fractions
        .iter()
        .map(|&fraction| {
            let prefixes: Vec<Dialogue> = test.iter().map(|d| flow_prefix(d, fraction)).collect();
            let accuracies = evaluate_overall(models, &prefixes, pipeline)?;
            let (natural, extended, ids) = flow_target_counts(test, fraction);
            Ok(FlowResult {
                fraction,
                accuracies,
                mean_target_utterances: natural,
                mean_target_utterances_extended: extended,
                extended_dialogues: ids,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Overall,
    Flow,
}

/// One table row: per-seed accuracies for a method (or a method at a flow fraction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    /// One entry per seed.
    pub seeds: Vec<Accuracies>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_target_utterances: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extended_dialogues: Vec<String>,
}

impl ReportRow {
    pub fn cells(&self) -> Vec<String> {
        let mut cells: Vec<String> = Trait::ALL
            .into_iter()
            .map(|t| format_cell(&self.seeds.iter().map(|a| a.get(t)).collect::<Vec<_>>()))
            .collect();
        cells.push(format_cell(&self.seeds.iter().map(|a| a.average).collect::<Vec<_>>()));
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub mode: EvalMode,
    pub test_dialogues: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn overall(method: impl Into<String>, test_dialogues: usize, seeds: Vec<u64>, runs: Vec<Accuracies>) -> Self {
        let method = method.into();
        Self {
            rows: vec![ReportRow {
                label: method.clone(),
                fraction: None,
                seeds: runs,
                mean_target_utterances: None,
                extended_dialogues: Vec::new(),
            }],
            method,
            mode: EvalMode::Overall,
            test_dialogues,
            seeds,
            metadata: BTreeMap::new(),
        }
    }

    /// `runs[s]` holds the flow results of seed `s`, fractions in the same order
    /// for every seed.
    pub fn flow(method: impl Into<String>, test_dialogues: usize, seeds: Vec<u64>, runs: Vec<Vec<FlowResult>>) -> Self {
        let method = method.into();
        let fractions: Vec<&FlowResult> = runs.first().map(|r| r.iter().collect()).unwrap_or_default();
        let rows = fractions
            .iter()
            .enumerate()
            .map(|(k, first)| ReportRow {
                label: format!("{method} {:.0}%", first.fraction * 100.0),
                fraction: Some(first.fraction),
                seeds: runs.iter().map(|r| r[k].accuracies.clone()).collect(),
                mean_target_utterances: Some(first.mean_target_utterances),
                extended_dialogues: first.extended_dialogues.clone(),
            })
            .collect();
        Self {
            method,
            mode: EvalMode::Flow,
            test_dialogues,
            seeds,
            rows,
            metadata: BTreeMap::new(),
        }
    }

    /// Checks ranges and that every average is the mean of its five traits.
    pub fn validate(&self) -> Result<(), EvalError> {
        for row in &self.rows {
            for acc in &row.seeds {
                if acc.per_trait.len() != 5 {
                    return Err(EvalError::InvalidReport(format!("row `{}` lacks a trait", row.label)));
                }
                let all = acc.per_trait.values().chain(std::iter::once(&acc.average));
                if all.into_iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(EvalError::InvalidReport(format!("row `{}` has an accuracy outside [0, 1]", row.label)));
                }
                let mean = acc.per_trait.values().sum::<f64>() / 5.0;
                if (mean - acc.average).abs() > 1e-12 {
                    return Err(EvalError::InvalidReport(format!("row `{}` average is not the trait mean", row.label)));
                }
            }
        }
        Ok(())
    }
}

/// `"0.600"` for one value, `"mean±std"` (sample std, 3 decimals) for several.
pub fn format_cell(values: &[f64]) -> String {
    match values {
        [] => "-".to_string(),
        [v] => format!("{v:.3}"),
        _ => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            format!("{mean:.3}±{:.3}", var.sqrt())
        }
    }
}

const COLUMNS: [&str; 7] = ["method", "AGR", "CON", "EXT", "OPN", "NEU", "Avg"];

pub fn table_csv(reports: &[EvalReport]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for row in reports.iter().flat_map(|r| &r.rows) {
        let _ = writeln!(out, "{},{}", row.label, row.cells().join(","));
    }
    out
}

pub fn table_text(reports: &[EvalReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|r| &r.rows)
        .map(|row| std::iter::once(row.label.clone()).chain(row.cells()).collect())
        .collect();
    let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.chars().count()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (k, (c, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - c.chars().count();
            if k == 0 {
                let _ = write!(s, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(s, "  {}{c}", " ".repeat(pad));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let header: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
    let mut out = line(&header);
    for r in &rows {
        out += &line(r);
    }
    out
}

/// Writes `<path>` as JSON plus `.csv` and `.txt` tables next to it.
/// Returns the three paths.
pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<[PathBuf; 3], EvalError> {
    report.validate()?;
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let csv = path.with_extension("csv");
    let txt = path.with_extension("txt");
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(path, json).map_err(|e| io_err(path, e))?;
    let one = std::slice::from_ref(report);
    fs::write(&csv, table_csv(one)).map_err(|e| io_err(&csv, e))?;
    fs::write(&txt, table_text(one)).map_err(|e| io_err(&txt, e))?;
    Ok([path.to_path_buf(), csv, txt])
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport, EvalError> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_slice(&raw)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ConstantAdapter;
    use crate::erc::GoldAnnotator;
    use crate::synthetic::{generate, SyntheticConfig};
    use std::sync::Arc;

    fn flat(v: f64) -> Accuracies {
        Accuracies::from_per_trait(Trait::ALL.into_iter().map(|t| (t, v)).collect())
    }

    fn constant_models() -> TraitModels<f64> {
        Trait::ALL
            .into_iter()
            .map(|t| {
                let a: Box<dyn BackboneAdapter<f64>> = Box::new(ConstantAdapter::new(0.5, 0.5).unwrap());
                (t, TraitModel::new(a, Ablation::Full))
            })
            .collect()
    }

    #[test]
    fn cell_formatting() {
        assert_eq!(format_cell(&[0.6]), "0.600");
        assert_eq!(format_cell(&[0.60, 0.62]), "0.610±0.014");
        let r = EvalReport::overall("m", 10, vec![0], vec![flat(0.6)]);
        assert_eq!(r.rows[0].cells()[5], "0.600");
    }

    #[test]
    fn missing_trait_is_an_error() {
        let mut models = constant_models();
        models.remove(&Trait::Opn);
        let ds = generate(&SyntheticConfig {
            dialogues: 4,
            ..SyntheticConfig::default()
        });
        let pl = Pipeline::new(Arc::new(GoldAnnotator));
        assert!(matches!(evaluate_overall(&models, &ds, &pl), Err(EvalError::MissingTrait(Trait::Opn))));
    }

    #[test]
    fn order_invariance() {
        let mut ds = generate(&SyntheticConfig {
            dialogues: 30,
            ..SyntheticConfig::default()
        });
        let pl = Pipeline::new(Arc::new(GoldAnnotator));
        let models = constant_models();
        let a = evaluate_overall(&models, &ds, &pl).unwrap();
        ds.reverse();
        assert_eq!(a, evaluate_overall(&models, &ds, &pl).unwrap());
    }

    #[test]
    fn flow_rows_and_round_trip() {
        let ds = generate(&SyntheticConfig {
            dialogues: 12,
            ..SyntheticConfig::default()
        });
        let pl = Pipeline::new(Arc::new(GoldAnnotator));
        let flow = evaluate_flow(&constant_models(), &ds, &pl, &FLOW_FRACTIONS).unwrap();
        let report = EvalReport::flow("constant", ds.len(), vec![0], vec![flow]);
        assert_eq!(report.rows.len(), 4);
        let dir = tempfile::tempdir().unwrap();
        let [json, csv, txt] = write_report(&report, dir.path().join("r.json")).unwrap();
        assert_eq!(read_report(&json).unwrap(), report);
        let csv = fs::read_to_string(csv).unwrap();
        assert!(csv.starts_with("method,AGR,CON,EXT,OPN,NEU,Avg\n"));
        assert_eq!(csv.lines().count(), 5);
        assert!(fs::read_to_string(txt).unwrap().contains("constant 25%"));
        assert!(evaluate_flow(&constant_models(), &ds, &pl, &[0.3]).is_err());
    }

    #[test]
    fn invalid_average_rejected() {
        let mut r = EvalReport::overall("m", 1, vec![0], vec![flat(0.5)]);
        r.rows[0].seeds[0].average = 0.7;
        assert!(r.validate().is_err());
    }
}
