//! Emotion recognition in conversation: per-utterance emotion labelling
//! behind the [`ErcAnnotator`] interface, plus an offline annotation cache.
//!
//! Three annotators ship with the crate:
//!
//! * [`LexiconAnnotator`] labels an utterance by its leftmost lexicon word.
//! * [`GoldAnnotator`] returns the emotions stored in the dataset file.
//! * [`ErcModel`] is a trained softmax classifier over hashed word features,
//!   the target-speaker indicator and the preceding utterance.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Dialogue, Utterance};
use crate::text;

const REFERENCE_LEXICON: &str = include_str!("../resources/emotion_lexicon.json");

/// Six basic emotions plus Neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmotionLabel {
    Anger,
    Disgust,
    Fear,
    Joy,
    Sadness,
    Surprise,
    Neutral,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Joy,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
        EmotionLabel::Neutral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "Anger",
            EmotionLabel::Disgust => "Disgust",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Joy => "Joy",
            EmotionLabel::Sadness => "Sadness",
            EmotionLabel::Surprise => "Surprise",
            EmotionLabel::Neutral => "Neutral",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Anger, Disgust, Fear and Sadness.
    pub fn is_negative(self) -> bool {
        matches!(
            self,
            EmotionLabel::Anger | EmotionLabel::Disgust | EmotionLabel::Fear | EmotionLabel::Sadness
        )
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown emotion label `{0}`")]
pub struct UnknownEmotion(pub String);

impl FromStr for EmotionLabel {
    type Err = UnknownEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownEmotion(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ErcError {
    #[error("annotator `{annotator}` failed on dialogue `{dialogue_id}`: {message}")]
    Annotator {
        annotator: String,
        dialogue_id: String,
        message: String,
    },
    #[error("annotator `{annotator}` returned {got} labels for {expected} utterances")]
    LengthMismatch {
        annotator: String,
        expected: usize,
        got: usize,
    },
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error(transparent)]
    UnknownEmotion(#[from] UnknownEmotion),
    #[error("training corpus: {0}")]
    Corpus(String),
    #[error("unknown annotator `{id}`; registered annotators: {registered}")]
    UnknownAnnotator { id: String, registered: String },
    #[error("cache I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: std::io::Error) -> ErcError {
    ErcError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A per-utterance emotion labeller.
pub trait ErcAnnotator: Send + Sync {
    fn name(&self) -> &str;

    /// Changes whenever the labelling function changes; part of the cache key.
    fn version(&self) -> &str;

    /// One label per utterance, in order.
    fn label_utterances(&self, dialogue: &Dialogue) -> Result<Vec<EmotionLabel>, ErcError>;
}

fn short_digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..6])
}

/// Labels each utterance by the first lexicon word it contains; Neutral otherwise.
#[derive(Debug, Clone)]
pub struct LexiconAnnotator {
    name: String,
    version: String,
    lexicon: HashMap<String, EmotionLabel>,
}

impl LexiconAnnotator {
    pub fn new(name: impl Into<String>, lexicon: HashMap<String, EmotionLabel>) -> Result<Self, ErcError> {
        if lexicon.is_empty() {
            return Err(ErcError::EmptyLexicon);
        }
        let lexicon: HashMap<String, EmotionLabel> = lexicon
            .into_iter()
            .map(|(w, e)| (w.to_lowercase().replace('\u{2019}', "'"), e))
            .collect();
        let sorted: BTreeMap<&String, &EmotionLabel> = lexicon.iter().collect();
        let version = short_digest(serde_json::to_string(&sorted).expect("lexicon serialises").as_bytes());
        Ok(Self {
            name: name.into(),
            version,
            lexicon,
        })
    }

    /// The bundled general-purpose lexicon.
    pub fn reference() -> Self {
        Self::from_json("lexicon", REFERENCE_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_json(name: impl Into<String>, raw: &str) -> Result<Self, ErcError> {
        let parsed: HashMap<String, String> = serde_json::from_str(raw)?;
        let lexicon = parsed
            .into_iter()
            .map(|(w, e)| Ok((w, e.parse::<EmotionLabel>()?)))
            .collect::<Result<HashMap<_, _>, ErcError>>()?;
        Self::new(name, lexicon)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ErcError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(format!("lexicon:{}", path.display()), &raw)
    }

    pub fn label_text(&self, text: &str) -> EmotionLabel {
        text::words(text)
            .iter()
            .find_map(|w| self.lexicon.get(w).copied())
            .unwrap_or(EmotionLabel::Neutral)
    }
}

/// Test double: a lexicon annotator over a caller-supplied map.
pub fn lexicon_stub_annotator(lexicon: HashMap<String, EmotionLabel>) -> Result<LexiconAnnotator, ErcError> {
    LexiconAnnotator::new("lexicon-stub", lexicon)
}

impl ErcAnnotator for LexiconAnnotator {
    fn name(&self) -> &str {
        &self.name
    }

    fn version(&self) -> &str {
        &self.version
    }

    fn label_utterances(&self, dialogue: &Dialogue) -> Result<Vec<EmotionLabel>, ErcError> {
        Ok(dialogue.utterances.iter().map(|u| self.label_text(&u.text)).collect())
    }
}

/// Returns the gold emotions carried by the dataset.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoldAnnotator;

impl ErcAnnotator for GoldAnnotator {
    fn name(&self) -> &str {
        "gold"
    }

    fn version(&self) -> &str {
        "1"
    }

    fn label_utterances(&self, dialogue: &Dialogue) -> Result<Vec<EmotionLabel>, ErcError> {
        dialogue
            .utterances
            .iter()
            .map(|u| {
                u.emotion.ok_or_else(|| ErcError::Annotator {
                    annotator: "gold".into(),
                    dialogue_id: dialogue.dialogue_id.clone(),
                    message: format!("utterance {} has no gold emotion", u.index),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcTrainConfig {
    pub name: String,
    pub buckets: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ErcTrainConfig {
    fn default() -> Self {
        Self {
            name: "erc-model".into(),
            buckets: 1 << 14,
            epochs: 8,
            learning_rate: 0.05,
            batch_size: 32,
            l2: 0.0,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcTrainReport {
    pub train_utterances: usize,
    pub validation_utterances: usize,
    pub validation_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Softmax emotion classifier over hashed features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErcModel {
    name: String,
    version: String,
    buckets: usize,
    /// `buckets x 7`, row-major.
    weights: Vec<f64>,
    bias: [f64; 7],
}

const N_EMOTIONS: usize = 7;

fn utterance_features(prev: Option<&Utterance>, u: &Utterance, buckets: usize) -> Vec<(usize, f64)> {
    let speaker = if u.is_target { "s1" } else { "s0" };
    let mut idx = vec![text::bucket("spk", speaker, buckets)];
    for w in text::words(&u.text) {
        idx.push(text::bucket("w", &w, buckets));
        idx.push(text::bucket(speaker, &w, buckets));
    }
    if let Some(p) = prev {
        for w in text::words(&p.text) {
            idx.push(text::bucket("prev", &w, buckets));
        }
    }
    text::sparse_counts(idx)
}

fn dialogue_features(d: &Dialogue, buckets: usize) -> Vec<Vec<(usize, f64)>> {
    d.utterances
        .iter()
        .enumerate()
        .map(|(i, u)| utterance_features(i.checked_sub(1).map(|j| &d.utterances[j]), u, buckets))
        .collect()
}

impl ErcModel {
    fn logits(&self, x: &[(usize, f64)]) -> [f64; N_EMOTIONS] {
        let mut z = self.bias;
        for &(i, c) in x {
            let row = &self.weights[i * N_EMOTIONS..(i + 1) * N_EMOTIONS];
            for (zk, wk) in z.iter_mut().zip(row) {
                *zk += c * wk;
            }
        }
        z
    }

    fn predict_features(&self, x: &[(usize, f64)]) -> EmotionLabel {
        let z = self.logits(x);
        let best = (0..N_EMOTIONS)
            .max_by(|&a, &b| z[a].total_cmp(&z[b]).then(b.cmp(&a)))
            .expect("non-empty");
        EmotionLabel::from_index(best).expect("index < 7")
    }

    fn refresh_version(&mut self) {
        let mut h = Sha256::new();
        for w in self.weights.iter().chain(self.bias.iter()) {
            h.update(w.to_le_bytes());
        }
        self.version = hex::encode(&h.finalize()[..6]);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ErcError> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| io_err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ErcError> {
        let path = path.as_ref();
        let raw = fs::read(path).map_err(|e| io_err(path, e))?;
        let model: ErcModel = serde_json::from_slice(&raw)?;
        if model.weights.len() != model.buckets * N_EMOTIONS {
            return Err(ErcError::Corpus(format!(
                "{}: weight table has {} entries, expected {}",
                path.display(),
                model.weights.len(),
                model.buckets * N_EMOTIONS
            )));
        }
        Ok(model)
    }
}

impl ErcAnnotator for ErcModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn version(&self) -> &str {
        &self.version
    }

    fn label_utterances(&self, dialogue: &Dialogue) -> Result<Vec<EmotionLabel>, ErcError> {
        Ok(dialogue_features(dialogue, self.buckets)
            .iter()
            .map(|x| self.predict_features(x))
            .collect())
    }
}

/// Trains an [`ErcModel`] on dialogues whose utterances all carry gold emotions.
///
/// A seeded fraction of dialogues is held out; its accuracy is logged and
/// returned in the report.
pub fn train_erc(config: &ErcTrainConfig, corpus: &[Dialogue]) -> Result<(ErcModel, ErcTrainReport), ErcError> {
    if config.buckets == 0 || config.batch_size == 0 {
        return Err(ErcError::Corpus("buckets and batch_size must be positive".into()));
    }
    let mut examples: Vec<(usize, Vec<(usize, f64)>, usize)> = Vec::new();
    for (di, d) in corpus.iter().enumerate() {
        for (u, x) in d.utterances.iter().zip(dialogue_features(d, config.buckets)) {
            let gold = u.emotion.ok_or_else(|| {
                ErcError::Corpus(format!(
                    "dialogue `{}` utterance {} lacks a gold emotion",
                    d.dialogue_id, u.index
                ))
            })?;
            examples.push((di, x, gold.index()));
        }
    }
    if examples.is_empty() {
        return Err(ErcError::Corpus("no labelled utterances".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dialogue_order: Vec<usize> = (0..corpus.len()).collect();
    dialogue_order.shuffle(&mut rng);
    let n_val = if corpus.len() > 1 {
        ((corpus.len() as f64 * config.validation_fraction).round() as usize).min(corpus.len() - 1)
    } else {
        0
    };
    let held_out: std::collections::HashSet<usize> = dialogue_order[..n_val].iter().copied().collect();
    let (validation, train): (Vec<_>, Vec<_>) = examples.into_iter().partition(|(di, _, _)| held_out.contains(di));

    let mut model = ErcModel {
        name: config.name.clone(),
        version: String::new(),
        buckets: config.buckets,
        weights: vec![0.0; config.buckets * N_EMOTIONS],
        bias: [0.0; N_EMOTIONS],
    };
    let n_params = model.weights.len() + N_EMOTIONS;
    let mut adam = crate::optim::Adam::<f64>::new(n_params, config.learning_rate);
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &k in chunk {
                let (_, x, gold) = &train[k];
                let z = model.logits(x);
                let p = crate::nli::softmax(&z);
                total -= p[*gold].max(f64::MIN_POSITIVE).ln();
                for (e, pe) in p.iter().enumerate() {
                    let dz = (pe - if e == *gold { 1.0 } else { 0.0 }) * scale;
                    for &(i, c) in x {
                        grad[i * N_EMOTIONS + e] += dz * c;
                    }
                    grad[model.weights.len() + e] += dz;
                }
            }
            if config.l2 > 0.0 {
                for (g, w) in grad.iter_mut().zip(&model.weights) {
                    *g += config.l2 * w;
                }
            }
            let mut params: Vec<f64> = Vec::with_capacity(n_params);
            params.extend_from_slice(&model.weights);
            params.extend_from_slice(&model.bias);
            adam.step(&mut params, &grad, None);
            let (w, b) = params.split_at(model.weights.len());
            model.weights.copy_from_slice(w);
            model.bias.copy_from_slice(b);
        }
        epoch_losses.push(total / train.len().max(1) as f64);
    }
    model.refresh_version();

    let correct = validation
        .iter()
        .filter(|(_, x, gold)| model.predict_features(x).index() == *gold)
        .count();
    let validation_accuracy = if validation.is_empty() {
        f64::NAN
    } else {
        correct as f64 / validation.len() as f64
    };
    log::info!(
        "erc model `{}` trained on {} utterances; validation accuracy {:.4} over {} utterances",
        model.name,
        train.len(),
        validation_accuracy,
        validation.len()
    );
    Ok((
        model,
        ErcTrainReport {
            train_utterances: train.len(),
            validation_utterances: validation.len(),
            validation_accuracy,
            epoch_losses,
        },
    ))
}

/// Accuracy of `annotator` against gold emotions over every utterance of `dialogues`.
pub fn annotation_accuracy(annotator: &dyn ErcAnnotator, dialogues: &[Dialogue]) -> Result<f64, ErcError> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for d in dialogues {
        let predicted = annotator.label_utterances(d)?;
        for (u, p) in d.utterances.iter().zip(predicted) {
            if let Some(gold) = u.emotion {
                total += 1;
                correct += usize::from(gold == p);
            }
        }
    }
    Ok(if total == 0 { f64::NAN } else { correct as f64 / total as f64 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    annotator: String,
    version: String,
    dialogue_id: String,
    fingerprint: String,
    labels: Vec<EmotionLabel>,
}

/// On-disk annotation store: one JSON file per (annotator, version, dialogue).
///
/// Entries also record a fingerprint of the utterances, so a dialogue whose
/// content changed under the same id is treated as a miss.
#[derive(Debug)]
pub struct AnnotationCache {
    root: PathBuf,
    locks: Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn path_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn fingerprint(d: &Dialogue) -> String {
    let mut h = Sha256::new();
    for u in &d.utterances {
        h.update(u.speaker_id.as_bytes());
        h.update([0, u8::from(u.is_target)]);
        h.update(u.text.as_bytes());
        h.update([0xff]);
    }
    hex::encode(h.finalize())
}

impl AnnotationCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ErcError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Self {
            root,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn annotator_dir(&self, name: &str, version: &str) -> PathBuf {
        self.root.join(format!("{}@{}", path_component(name), path_component(version)))
    }

    fn entry_path(&self, name: &str, version: &str, dialogue_id: &str) -> PathBuf {
        let key = hex::encode(&Sha256::digest(dialogue_id.as_bytes())[..16]);
        self.annotator_dir(name, version).join(format!("{key}.json"))
    }

    fn key_lock(&self, path: &Path) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("cache lock map poisoned");
        locks.entry(path.to_path_buf()).or_default().clone()
    }

    pub fn load(&self, name: &str, version: &str, dialogue: &Dialogue) -> Result<Option<Vec<EmotionLabel>>, ErcError> {
        let path = self.entry_path(name, version, &dialogue.dialogue_id);
        let raw = match fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path, e)),
        };
        let entry: CacheEntry = serde_json::from_slice(&raw)?;
        let matches = entry.annotator == name
            && entry.version == version
            && entry.dialogue_id == dialogue.dialogue_id
            && entry.fingerprint == fingerprint(dialogue)
            && entry.labels.len() == dialogue.utterances.len();
        Ok(matches.then_some(entry.labels))
    }

    pub fn store(&self, name: &str, version: &str, dialogue: &Dialogue, labels: &[EmotionLabel]) -> Result<(), ErcError> {
        let path = self.entry_path(name, version, &dialogue.dialogue_id);
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let entry = CacheEntry {
            annotator: name.to_string(),
            version: version.to_string(),
            dialogue_id: dialogue.dialogue_id.clone(),
            fingerprint: fingerprint(dialogue),
            labels: labels.to_vec(),
        };
        let bytes = serde_json::to_vec(&entry)?;
        let lock = self.key_lock(&path);
        let _guard = lock.lock().expect("cache key lock poisoned");
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }

    /// Number of stored entries for an annotator identity.
    pub fn entry_count(&self, name: &str, version: &str) -> usize {
        fs::read_dir(self.annotator_dir(name, version))
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub labels: Vec<EmotionLabel>,
    pub from_cache: bool,
}

/// Labels every utterance of `dialogue`, consulting and filling `cache`.
///
/// Either the whole dialogue is labelled or an error is returned; nothing
/// partial is cached.
pub fn annotate_dialogue(
    annotator: &dyn ErcAnnotator,
    dialogue: &Dialogue,
    cache: Option<&AnnotationCache>,
) -> Result<Annotation, ErcError> {
    if let Some(cache) = cache {
        if let Some(labels) = cache.load(annotator.name(), annotator.version(), dialogue)? {
            return Ok(Annotation {
                labels,
                from_cache: true,
            });
        }
    }
    let labels = annotator.label_utterances(dialogue)?;
    if labels.len() != dialogue.utterances.len() {
        return Err(ErcError::LengthMismatch {
            annotator: annotator.name().to_string(),
            expected: dialogue.utterances.len(),
            got: labels.len(),
        });
    }
    if let Some(cache) = cache {
        cache.store(annotator.name(), annotator.version(), dialogue, &labels)?;
    }
    Ok(Annotation {
        labels,
        from_cache: false,
    })
}

/// Annotator identifiers accepted by [`resolve_annotator`].
pub const REGISTERED_ANNOTATORS: &[&str] = &["lexicon", "lexicon:<path>", "gold", "model:<path>"];

pub fn resolve_annotator(id: &str) -> Result<Box<dyn ErcAnnotator>, ErcError> {
    match id.split_once(':') {
        None if id == "lexicon" => Ok(Box::new(LexiconAnnotator::reference())),
        None if id == "gold" => Ok(Box::new(GoldAnnotator)),
        Some(("lexicon", path)) => Ok(Box::new(LexiconAnnotator::from_path(path)?)),
        Some(("model", path)) => Ok(Box::new(ErcModel::load(path)?)),
        _ => Err(ErcError::UnknownAnnotator {
            id: id.to_string(),
            registered: REGISTERED_ANNOTATORS.join(", "),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TraitVector;

    fn dialogue(turns: &[(&str, &str)]) -> Dialogue {
        Dialogue::from_turns("d1", "A", turns, TraitVector::default()).unwrap()
    }

    #[test]
    fn label_names_round_trip() {
        for e in EmotionLabel::ALL {
            assert_eq!(e.name().parse::<EmotionLabel>().unwrap(), e);
            assert_eq!(serde_json::to_string(&e).unwrap(), format!("\"{}\"", e.name()));
        }
        assert!("Contempt".parse::<EmotionLabel>().is_err());
    }

    #[test]
    fn lexicon_rules() {
        let stub = lexicon_stub_annotator(HashMap::from([
            ("dreadful".to_string(), EmotionLabel::Anger),
            ("happy".to_string(), EmotionLabel::Joy),
        ]))
        .unwrap();
        assert_eq!(stub.label_text("the weather is dreadful"), EmotionLabel::Anger);
        assert_eq!(stub.label_text("nothing to see"), EmotionLabel::Neutral);
        assert_eq!(stub.label_text("Happy but DREADFUL"), EmotionLabel::Joy);
        assert_eq!(stub.label_text("dreadful yet happy"), EmotionLabel::Anger);
        assert!(matches!(lexicon_stub_annotator(HashMap::new()), Err(ErcError::EmptyLexicon)));
    }

    #[test]
    fn reference_lexicon_on_case_study_turns() {
        let d = dialogue(&[
            ("B", "Good morning, Mrs. Thompson! How are you feeling today?"),
            (
                "A",
                "Oh, everything is falling apart! My arthritis is acting up, my cat ran away, and the weather outside is simply dreadful!",
            ),
        ]);
        let labels = annotate_dialogue(&LexiconAnnotator::reference(), &d, None).unwrap().labels;
        assert_eq!(labels, vec![EmotionLabel::Joy, EmotionLabel::Anger]);
    }

    #[test]
    fn cache_serves_identical_labels() {
        let dir = tempfile::tempdir().unwrap();
        let cache = AnnotationCache::open(dir.path()).unwrap();
        let ann = LexiconAnnotator::reference();
        let d = dialogue(&[("A", "I am so happy"), ("B", "that is sad")]);
        let first = annotate_dialogue(&ann, &d, Some(&cache)).unwrap();
        assert!(!first.from_cache);
        let second = annotate_dialogue(&ann, &d, Some(&cache)).unwrap();
        assert!(second.from_cache);
        assert_eq!(first.labels, second.labels);
        assert_eq!(cache.entry_count(ann.name(), ann.version()), 1);
    }

    #[test]
    fn cache_respects_version_and_content() {
        let dir = tempfile::tempdir().unwrap();
        let cache = AnnotationCache::open(dir.path()).unwrap();
        let d = dialogue(&[("A", "x")]);
        cache.store("m", "v1", &d, &[EmotionLabel::Fear]).unwrap();
        assert_eq!(cache.load("m", "v1", &d).unwrap(), Some(vec![EmotionLabel::Fear]));
        assert_eq!(cache.load("m", "v2", &d).unwrap(), None);
        let changed = dialogue(&[("A", "y")]);
        assert_eq!(cache.load("m", "v1", &changed).unwrap(), None);
    }

    struct Short;
    impl ErcAnnotator for Short {
        fn name(&self) -> &str {
            "short"
        }
        fn version(&self) -> &str {
            "0"
        }
        fn label_utterances(&self, _: &Dialogue) -> Result<Vec<EmotionLabel>, ErcError> {
            Ok(vec![EmotionLabel::Joy])
        }
    }

    #[test]
    fn length_mismatch_is_rejected_and_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let cache = AnnotationCache::open(dir.path()).unwrap();
        let d = dialogue(&[("A", "x"), ("B", "y")]);
        assert!(matches!(
            annotate_dialogue(&Short, &d, Some(&cache)),
            Err(ErcError::LengthMismatch { expected: 2, got: 1, .. })
        ));
        assert_eq!(cache.entry_count("short", "0"), 0);
    }

    #[test]
    fn gold_annotator_requires_labels() {
        let mut d = dialogue(&[("A", "x")]);
        assert!(GoldAnnotator.label_utterances(&d).is_err());
        d.utterances[0].emotion = Some(EmotionLabel::Surprise);
        assert_eq!(GoldAnnotator.label_utterances(&d).unwrap(), vec![EmotionLabel::Surprise]);
    }

    #[test]
    fn unknown_annotator_lists_registered() {
        let err = resolve_annotator("bert").err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("lexicon") && msg.contains("model:<path>"));
    }

    #[test]
    fn concurrent_stores_leave_one_valid_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = AnnotationCache::open(dir.path()).unwrap();
        let d = dialogue(&[("A", "x"), ("B", "y")]);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    cache
                        .store("m", "v", &d, &[EmotionLabel::Joy, EmotionLabel::Anger])
                        .unwrap();
                    let _ = cache.load("m", "v", &d).unwrap();
                });
            }
        });
        assert_eq!(cache.entry_count("m", "v"), 1);
        assert_eq!(
            cache.load("m", "v", &d).unwrap(),
            Some(vec![EmotionLabel::Joy, EmotionLabel::Anger])
        );
    }
}
