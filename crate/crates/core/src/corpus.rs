//! Dialogue records: JSONL ingestion, 8:1:1 splitting, corpus statistics and
//! prefix slicing for incremental (flow) evaluation.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::erc::EmotionLabel;
use crate::hypotheses::Trait;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset is empty")]
    EmptyFile,
    #[error("line {line}: field `{field}`: {message}")]
    Record {
        line: usize,
        field: String,
        message: String,
    },
    #[error("dialogue `{dialogue_id}`: {message}")]
    Invalid { dialogue_id: String, message: String },
    #[error("need at least 10 dialogues to split, got {0}")]
    TooFewToSplit(usize),
    #[error("duplicate dialogue_id `{0}`")]
    DuplicateId(String),
    #[error("statistics need at least one dialogue")]
    EmptyStats,
    #[error("serialisation failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker_id: String,
    pub text: String,
    pub is_target: bool,
    /// Gold emotion, when the source file provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionLabel>,
}

/// Five binary personality labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TraitVector {
    pub agr: u8,
    pub con: u8,
    pub ext: u8,
    pub opn: u8,
    pub neu: u8,
}

impl TraitVector {
    pub fn get(&self, t: Trait) -> u8 {
        match t {
            Trait::Agr => self.agr,
            Trait::Con => self.con,
            Trait::Ext => self.ext,
            Trait::Opn => self.opn,
            Trait::Neu => self.neu,
        }
    }

    /// Panics if `value` is not 0 or 1.
    pub fn set(&mut self, t: Trait, value: u8) {
        assert!(value <= 1, "trait labels are binary");
        let slot = match t {
            Trait::Agr => &mut self.agr,
            Trait::Con => &mut self.con,
            Trait::Ext => &mut self.ext,
            Trait::Opn => &mut self.opn,
            Trait::Neu => &mut self.neu,
        };
        *slot = value;
    }

    pub fn from_fn(mut f: impl FnMut(Trait) -> u8) -> Self {
        let mut v = Self::default();
        for t in Trait::ALL {
            v.set(t, f(t));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub utterances: Vec<Utterance>,
    pub target_speaker: String,
    pub labels: TraitVector,
}

impl Dialogue {
    /// Builds a dialogue from `(speaker, text)` turns, deriving indices and
    /// target flags, and validates it.
    pub fn from_turns<S: AsRef<str>, T: AsRef<str>>(
        dialogue_id: impl Into<String>,
        target_speaker: impl Into<String>,
        turns: &[(S, T)],
        labels: TraitVector,
    ) -> Result<Self, CorpusError> {
        let target_speaker = target_speaker.into();
        let utterances = turns
            .iter()
            .enumerate()
            .map(|(index, (speaker, text))| Utterance {
                index,
                speaker_id: speaker.as_ref().to_string(),
                text: text.as_ref().to_string(),
                is_target: speaker.as_ref() == target_speaker,
                emotion: None,
            })
            .collect();
        let d = Dialogue {
            dialogue_id: dialogue_id.into(),
            utterances,
            target_speaker,
            labels,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::Invalid {
            dialogue_id: self.dialogue_id.clone(),
            message,
        };
        if self.utterances.is_empty() {
            return Err(invalid("no utterances".into()));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.index != i {
                return Err(invalid(format!("utterance {i} carries index {}", u.index)));
            }
            if u.text.trim().is_empty() {
                return Err(invalid(format!("utterance {i} has empty text")));
            }
            if u.is_target != (u.speaker_id == self.target_speaker) {
                return Err(invalid(format!(
                    "utterance {i} target flag disagrees with speaker `{}`",
                    u.speaker_id
                )));
            }
        }
        if !self.utterances.iter().any(|u| u.is_target) {
            return Err(invalid(format!(
                "no utterance from target speaker `{}`",
                self.target_speaker
            )));
        }
        Ok(())
    }

    /// Distinct speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for u in &self.utterances {
            if !seen.contains(&u.speaker_id.as_str()) {
                seen.push(u.speaker_id.as_str());
            }
        }
        seen
    }

    pub fn target_utterance_count(&self) -> usize {
        self.utterances.iter().filter(|u| u.is_target).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UtteranceRecord {
    speaker: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion: Option<EmotionLabel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DialogueRecord {
    dialogue_id: String,
    target_speaker: String,
    utterances: Vec<UtteranceRecord>,
    labels: BTreeMap<Trait, u8>,
}

impl From<&Dialogue> for DialogueRecord {
    fn from(d: &Dialogue) -> Self {
        DialogueRecord {
            dialogue_id: d.dialogue_id.clone(),
            target_speaker: d.target_speaker.clone(),
            utterances: d
                .utterances
                .iter()
                .map(|u| UtteranceRecord {
                    speaker: u.speaker_id.clone(),
                    text: u.text.clone(),
                    emotion: u.emotion,
                })
                .collect(),
            labels: Trait::ALL.iter().map(|&t| (t, d.labels.get(t))).collect(),
        }
    }
}

/// A rejected input record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordDiagnostic {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl From<RecordDiagnostic> for CorpusError {
    fn from(d: RecordDiagnostic) -> Self {
        CorpusError::Record {
            line: d.line,
            field: d.field,
            message: d.message,
        }
    }
}

/// Result of a lenient read: accepted dialogues plus one diagnostic per rejected record.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub dialogues: Vec<Dialogue>,
    pub rejected: Vec<RecordDiagnostic>,
}

fn field_str(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String, RecordDiagnostic> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(diag(line, key, "expected a string")),
        None => Err(diag(line, key, "missing")),
    }
}

fn diag(line: usize, field: &str, message: &str) -> RecordDiagnostic {
    RecordDiagnostic {
        line,
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn parse_record(raw: &str, line: usize) -> Result<Dialogue, RecordDiagnostic> {
    let value: Value = serde_json::from_str(raw).map_err(|e| diag(line, "<record>", &e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| diag(line, "<record>", "expected a JSON object"))?;
    let dialogue_id = field_str(obj, "dialogue_id", line)?;
    let target_speaker = field_str(obj, "target_speaker", line)?;
    if target_speaker.trim().is_empty() {
        return Err(diag(line, "target_speaker", "empty"));
    }

    let raw_utts = match obj.get("utterances") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(diag(line, "utterances", "expected an array")),
        None => return Err(diag(line, "utterances", "missing")),
    };
    if raw_utts.is_empty() {
        return Err(diag(line, "utterances", "no utterances"));
    }
    let mut utterances = Vec::with_capacity(raw_utts.len());
    for (index, u) in raw_utts.iter().enumerate() {
        let field = |name: &str| format!("utterances[{index}].{name}");
        let uo = u
            .as_object()
            .ok_or_else(|| diag(line, &format!("utterances[{index}]"), "expected an object"))?;
        let speaker = match uo.get("speaker") {
            Some(Value::String(s)) => s.clone(),
            _ => return Err(diag(line, &field("speaker"), "missing or not a string")),
        };
        let text = match uo.get("text") {
            Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
            Some(Value::String(_)) => return Err(diag(line, &field("text"), "empty text")),
            _ => return Err(diag(line, &field("text"), "missing or not a string")),
        };
        let emotion = match uo.get("emotion") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(
                s.parse::<EmotionLabel>()
                    .map_err(|e| diag(line, &field("emotion"), &e.to_string()))?,
            ),
            Some(_) => return Err(diag(line, &field("emotion"), "expected a string")),
        };
        utterances.push(Utterance {
            index,
            is_target: speaker == target_speaker,
            speaker_id: speaker,
            text,
            emotion,
        });
    }
    if !utterances.iter().any(|u| u.is_target) {
        return Err(diag(
            line,
            "target_speaker",
            &format!("no utterance from target speaker `{target_speaker}`"),
        ));
    }

    let labels_obj = match obj.get("labels") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(diag(line, "labels", "expected an object")),
        None => return Err(diag(line, "labels", "missing")),
    };
    let mut labels = TraitVector::default();
    for t in Trait::ALL {
        let key = format!("labels.{}", t.code());
        let value = labels_obj
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(t.code()))
            .map(|(_, v)| v)
            .ok_or_else(|| diag(line, &key, &format!("missing trait {}", t.code())))?;
        let bit = match value {
            Value::Number(n) if n.as_u64() == Some(0) => 0,
            Value::Number(n) if n.as_u64() == Some(1) => 1,
            Value::Bool(b) => u8::from(*b),
            _ => return Err(diag(line, &key, "label must be 0 or 1")),
        };
        labels.set(t, bit);
    }

    Ok(Dialogue {
        dialogue_id,
        utterances,
        target_speaker,
        labels,
    })
}

/// Reads every record, collecting diagnostics for the ones that fail validation.
pub fn read_dialogues(reader: impl BufRead) -> Result<LoadReport, std::io::Error> {
    let mut report = LoadReport::default();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, i + 1) {
            Ok(d) => {
                if ids.insert(d.dialogue_id.clone()) {
                    report.dialogues.push(d);
                } else {
                    report.rejected.push(diag(i + 1, "dialogue_id", "duplicate dialogue_id"));
                }
            }
            Err(diag) => report.rejected.push(diag),
        }
    }
    Ok(report)
}

/// Parses JSONL text strictly: the first invalid record is an error.
pub fn parse_dataset(text: &str) -> Result<Vec<Dialogue>, CorpusError> {
    let report = read_dialogues(text.as_bytes()).expect("reading from memory cannot fail");
    finish_strict(report)
}

fn finish_strict(report: LoadReport) -> Result<Vec<Dialogue>, CorpusError> {
    if let Some(first) = report.rejected.into_iter().next() {
        return Err(first.into());
    }
    if report.dialogues.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    Ok(report.dialogues)
}

/// Loads a JSONL dataset. Any invalid record aborts the load with its line
/// number and field; use [`load_dataset_lenient`] to skip bad records.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Dialogue>, CorpusError> {
    finish_strict(load_dataset_lenient(path)?)
}

pub fn load_dataset_lenient(path: impl AsRef<Path>) -> Result<LoadReport, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let report = read_dialogues(BufReader::new(file)).map_err(|e| CorpusError::io(path, e))?;
    if report.dialogues.is_empty() && report.rejected.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    for r in &report.rejected {
        log::warn!("{}: rejected line {} ({}): {}", path.display(), r.line, r.field, r.message);
    }
    Ok(report)
}

pub fn to_jsonl(dialogues: &[Dialogue]) -> Result<String, CorpusError> {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&serde_json::to_string(&DialogueRecord::from(d))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, dialogues: &[Dialogue]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    f.write_all(to_jsonl(dialogues)?.as_bytes())
        .map_err(|e| CorpusError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Dialogue>,
    pub validation: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    /// Writes `train.jsonl`, `validation.jsonl`, `test.jsonl` and `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>, seed: u64) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        write_dataset(dir.join("train.jsonl"), &self.train)?;
        write_dataset(dir.join("validation.jsonl"), &self.validation)?;
        write_dataset(dir.join("test.jsonl"), &self.test)?;
        let manifest = SplitManifest {
            seed,
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| CorpusError::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, SplitManifest), CorpusError> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let raw = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
        let manifest: SplitManifest = serde_json::from_str(&raw)?;
        let split = DatasetSplit {
            train: load_dataset(dir.join("train.jsonl"))?,
            validation: load_dataset(dir.join("validation.jsonl"))?,
            test: load_dataset(dir.join("test.jsonl"))?,
        };
        Ok((split, manifest))
    }
}

/// Unstratified seeded shuffle into train/validation/test at 8:1:1.
pub fn split_dataset(dialogues: &[Dialogue], seed: u64) -> Result<DatasetSplit, CorpusError> {
    let n = dialogues.len();
    if n < 10 {
        return Err(CorpusError::TooFewToSplit(n));
    }
    let mut ids = HashSet::with_capacity(n);
    for d in dialogues {
        if !ids.insert(d.dialogue_id.as_str()) {
            return Err(CorpusError::DuplicateId(d.dialogue_id.clone()));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * 0.1).round() as usize;
    let n_test = (n as f64 * 0.1).round() as usize;
    let n_train = n - n_val - n_test;
    let pick = |range: std::ops::Range<usize>| -> Vec<Dialogue> {
        order[range].iter().map(|&i| dialogues[i].clone()).collect()
    };
    Ok(DatasetSplit {
        train: pick(0..n_train),
        validation: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
    })
}

/// Lengths of a flow prefix: before and after extension to the first target utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefixLength {
    pub natural: usize,
    pub extended: usize,
}

impl PrefixLength {
    pub fn was_extended(&self) -> bool {
        self.extended > self.natural
    }
}

/// `ceil(fraction * m)` utterances, extended forward until the prefix holds a
/// target utterance.
///
/// Panics unless `0 < fraction <= 1`.
pub fn flow_prefix_len(dialogue: &Dialogue, fraction: f64) -> PrefixLength {
    assert!(fraction > 0.0 && fraction <= 1.0, "flow fraction must lie in (0, 1]");
    let m = dialogue.utterances.len();
    let natural = ((fraction * m as f64).ceil() as usize).clamp(1, m);
    let first_target = dialogue
        .utterances
        .iter()
        .position(|u| u.is_target)
        .unwrap_or(m - 1);
    PrefixLength {
        natural,
        extended: natural.max(first_target + 1),
    }
}

pub fn flow_prefix(dialogue: &Dialogue, fraction: f64) -> Dialogue {
    let len = flow_prefix_len(dialogue, fraction).extended;
    Dialogue {
        dialogue_id: dialogue.dialogue_id.clone(),
        utterances: dialogue.utterances[..len].to_vec(),
        target_speaker: dialogue.target_speaker.clone(),
        labels: dialogue.labels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRatio {
    pub positive: f64,
    pub negative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub dialogues: usize,
    pub utterances: usize,
    pub utterances_per_dialogue: f64,
    pub unique_utterances: usize,
    /// Mean whitespace-token count over all utterances.
    pub mean_utterance_length: f64,
    /// Per-trait positive:negative shares, rounded to two decimals.
    pub label_ratios: BTreeMap<Trait, LabelRatio>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn compute_stats(dialogues: &[Dialogue]) -> Result<StatsReport, CorpusError> {
    if dialogues.is_empty() {
        return Err(CorpusError::EmptyStats);
    }
    let n = dialogues.len();
    let utterances: usize = dialogues.iter().map(|d| d.utterances.len()).sum();
    let unique: HashSet<&str> = dialogues
        .iter()
        .flat_map(|d| d.utterances.iter().map(|u| u.text.as_str()))
        .collect();
    let words: usize = dialogues
        .iter()
        .flat_map(|d| d.utterances.iter())
        .map(|u| u.text.split_whitespace().count())
        .sum();
    let label_ratios = Trait::ALL
        .iter()
        .map(|&t| {
            let pos = dialogues.iter().filter(|d| d.labels.get(t) == 1).count() as f64 / n as f64;
            (
                t,
                LabelRatio {
                    positive: round2(pos),
                    negative: round2(1.0 - pos),
                },
            )
        })
        .collect();
    Ok(StatsReport {
        dialogues: n,
        utterances,
        utterances_per_dialogue: utterances as f64 / n as f64,
        unique_utterances: unique.len(),
        mean_utterance_length: words as f64 / utterances as f64,
        label_ratios,
    })
}
