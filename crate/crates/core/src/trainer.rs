//! Per-trait fine-tuning runs with learning-rate selection on the validation
//! split, ablation modes, and run-directory checkpoints.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backbone::{AdapterState, BackboneAdapter, BackboneError, Family, TinyConfig, TrainableAdapter, TuningMode};
use crate::corpus::{DatasetSplit, Dialogue};
use crate::hypotheses::Trait;
use crate::nli::{make_training_samples, NliError, NliSample, PromptPair};
use crate::pipeline::{Pipeline, PipelineError, PremiseLimits};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("learning-rate grid is empty")]
    EmptyGrid,
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("validation split is empty")]
    EmptyValidation,
    #[error("no training samples could be built")]
    NoSamples,
    #[error("dialogue `{dialogue_id}`: {source}")]
    Sample {
        dialogue_id: String,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Nli(#[from] NliError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Affective premise, positive and negative descriptions.
    #[default]
    Full,
    /// Raw dialogue premise.
    NoAffective,
    /// Bare trait names instead of descriptions.
    NoPersonality,
    /// Positive-description prompts only, in training and inference.
    OnlyPos,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoAffective, Ablation::NoPersonality, Ablation::OnlyPos];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoAffective => "no_affective",
            Ablation::NoPersonality => "no_personality",
            Ablation::OnlyPos => "only_pos",
        }
    }

    pub fn needs_affective(self) -> bool {
        self != Ablation::NoAffective
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnAnnotationError {
    #[default]
    Abort,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub family: Family,
    pub tuning: TuningMode,
    pub tiny: TinyConfig,
}

fn default_batch_size() -> usize {
    32
}
fn default_utterance_max_len() -> usize {
    256
}
fn default_dialogue_max_len() -> usize {
    20
}
fn default_epochs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_utterance_max_len")]
    pub utterance_max_len: usize,
    #[serde(default = "default_dialogue_max_len")]
    pub dialogue_max_len: usize,
    /// Defaults depend on the tuning mode; see [`RunConfig::grid`].
    #[serde(default)]
    pub learning_rate_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub on_annotation_error: OnAnnotationError,
    #[serde(default)]
    pub adapter: AdapterConfig,
}

impl RunConfig {
    pub fn new(trait_: Trait) -> Self {
        Self {
            trait_,
            ablation: Ablation::Full,
            batch_size: default_batch_size(),
            utterance_max_len: default_utterance_max_len(),
            dialogue_max_len: default_dialogue_max_len(),
            learning_rate_grid: None,
            seed: 0,
            epochs: default_epochs(),
            on_annotation_error: OnAnnotationError::Abort,
            adapter: AdapterConfig::default(),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        match (&self.learning_rate_grid, self.adapter.tuning) {
            (Some(g), _) => g.clone(),
            (None, TuningMode::Full) => vec![1e-5, 2e-5, 5e-5],
            (None, TuningMode::ParameterEfficient) => vec![1e-4, 3e-4, 1e-3],
        }
    }

    pub fn limits(&self) -> PremiseLimits {
        PremiseLimits {
            utterance_max_len: self.utterance_max_len,
            dialogue_max_len: self.dialogue_max_len,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.utterance_max_len == 0 || self.dialogue_max_len == 0 {
            return Err(TrainError::Config("length limits must be positive".into()));
        }
        let grid = self.grid();
        if grid.is_empty() {
            return Err(TrainError::EmptyGrid);
        }
        if let Some(bad) = grid.iter().find(|lr| !(lr.is_finite() && **lr > 0.0)) {
            return Err(TrainError::Config(format!("learning rate {bad} is not positive")));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, recorded in run manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config serialises");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub adapter: AdapterState<T>,
    pub config: RunConfig,
    pub validation_accuracy: f64,
    pub epoch: usize,
    pub learning_rate: f64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| io_err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let raw = fs::read(path).map_err(|e| io_err(path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEvent {
    pub learning_rate: f64,
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRateRun {
    pub learning_rate: f64,
    pub epoch_losses: Vec<f64>,
    pub validation_accuracies: Vec<f64>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub runs: Vec<LearningRateRun>,
    pub events: Vec<EpochEvent>,
    pub skipped_dialogues: Vec<String>,
}

/// NLI samples for `dialogues` under the run's trait and ablation mode.
///
/// Returns the samples and the ids of dialogues skipped because annotation
/// failed (only when `on_annotation_error` is `skip`).
pub fn build_samples(
    config: &RunConfig,
    dialogues: &[Dialogue],
    pipeline: &Pipeline,
) -> Result<(Vec<NliSample>, Vec<String>), TrainError> {
    let mut samples = Vec::with_capacity(dialogues.len() * 2);
    let mut skipped = Vec::new();
    for d in dialogues {
        let prepared = match pipeline.prepare(d, config.ablation.needs_affective()) {
            Ok(p) => p,
            Err(e) if config.on_annotation_error == OnAnnotationError::Skip => {
                log::warn!("skipping dialogue `{}`: {e}", d.dialogue_id);
                skipped.push(d.dialogue_id.clone());
                continue;
            }
            Err(source) => {
                return Err(TrainError::Sample {
                    dialogue_id: d.dialogue_id.clone(),
                    source,
                })
            }
        };
        let pair = pipeline.prompts(&prepared, config.trait_, config.ablation);
        samples.extend(make_training_samples(
            &pair,
            config.trait_,
            &d.dialogue_id,
            d.labels.get(config.trait_),
            config.ablation == Ablation::OnlyPos,
        )?);
    }
    Ok((samples, skipped))
}

/// Prompt pairs and gold labels for an evaluation set.
pub fn labelled_prompts(
    config: &RunConfig,
    dialogues: &[Dialogue],
    pipeline: &Pipeline,
) -> Result<Vec<(PromptPair, u8)>, TrainError> {
    dialogues
        .iter()
        .map(|d| {
            let prepared = pipeline
                .prepare(d, config.ablation.needs_affective())
                .map_err(|source| TrainError::Sample {
                    dialogue_id: d.dialogue_id.clone(),
                    source,
                })?;
            Ok((pipeline.prompts(&prepared, config.trait_, config.ablation), d.labels.get(config.trait_)))
        })
        .collect()
}

/// Fraction of `items` whose inferred label matches the gold label.
pub fn accuracy_on<T: Scalar, A: BackboneAdapter<T> + ?Sized>(
    adapter: &A,
    items: &[(PromptPair, u8)],
    ablation: Ablation,
    pipeline: &Pipeline,
) -> Result<f64, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let mut correct = 0usize;
    for (pair, gold) in items {
        let quad = pipeline.score(adapter, pair, ablation)?;
        correct += usize::from(crate::nli::infer_trait(&quad, Trait::Agr).label == *gold);
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Trains one model per learning rate in the grid, keeping each run's best
/// validation epoch, and returns the best overall (ties go to the smaller
/// rate, then the earlier epoch).
///
/// `make_adapter` must return a freshly initialised adapter for the config;
/// it is called once per learning rate.
pub fn train_trait_model<T, A, F>(
    config: &RunConfig,
    split: &DatasetSplit,
    pipeline: &Pipeline,
    mut make_adapter: F,
) -> Result<TrainOutcome<T>, TrainError>
where
    T: Scalar,
    A: TrainableAdapter<T>,
    F: FnMut(&RunConfig) -> Result<A, BackboneError>,
{
    config.validate()?;
    let (samples, skipped) = build_samples(config, &split.train, pipeline)?;
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let validation = labelled_prompts(config, &split.validation, pipeline)?;
    if validation.is_empty() {
        return Err(TrainError::EmptyValidation);
    }

    let mut grid = config.grid();
    grid.sort_by(f64::total_cmp);
    let mut runs = Vec::with_capacity(grid.len());
    let mut events = Vec::new();
    let mut best: Option<Checkpoint<T>> = None;

    for &lr in &grid {
        let mut adapter = make_adapter(config)?;
        adapter.set_learning_rate(lr);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut run = LearningRateRun {
            learning_rate: lr,
            epoch_losses: Vec::with_capacity(config.epochs),
            validation_accuracies: Vec::with_capacity(config.epochs),
            best_epoch: 0,
            best_accuracy: f64::NEG_INFINITY,
        };
        let mut run_best: Option<AdapterState<T>> = None;

        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            adapter.set_training(true);
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<NliSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                loss_sum += adapter.fit_step(&batch)?.as_f64();
                batches += 1;
            }
            adapter.set_training(false);
            let mean_loss = loss_sum / batches as f64;
            let accuracy = accuracy_on(&adapter, &validation, config.ablation, pipeline)?;
            log::info!(
                "{} {} lr={lr:e} epoch {epoch}: loss {mean_loss:.5}, validation accuracy {accuracy:.4}",
                config.trait_,
                config.ablation
            );
            events.push(EpochEvent {
                learning_rate: lr,
                epoch,
                mean_loss,
                validation_accuracy: accuracy,
            });
            run.epoch_losses.push(mean_loss);
            run.validation_accuracies.push(accuracy);
            if accuracy > run.best_accuracy {
                run.best_accuracy = accuracy;
                run.best_epoch = epoch;
                run_best = Some(adapter.state());
            }
        }

        let improves = best
            .as_ref()
            .map_or(true, |b| run.best_accuracy > b.validation_accuracy);
        if improves {
            best = Some(Checkpoint {
                adapter: run_best.expect("at least one epoch ran"),
                config: config.clone(),
                validation_accuracy: run.best_accuracy,
                epoch: run.best_epoch,
                learning_rate: lr,
            });
        }
        runs.push(run);
    }

    Ok(TrainOutcome {
        checkpoint: best.expect("grid is non-empty"),
        runs,
        events,
        skipped_dialogues: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub ablation: Ablation,
    pub seed: u64,
    pub config_hash: String,
    /// Identifier the annotator was resolved from.
    pub annotator: String,
    pub learning_rate: f64,
    pub epoch: usize,
    pub validation_accuracy: f64,
    pub learning_rate_runs: Vec<LearningRateRun>,
    pub skipped_dialogues: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Writes `checkpoint.json`, `manifest.json` and `train_log.jsonl` into `dir`.
pub fn save_run<T: Scalar>(
    dir: impl AsRef<Path>,
    outcome: &TrainOutcome<T>,
    annotator: &str,
    started_at: chrono::DateTime<chrono::Utc>,
) -> Result<RunManifest, TrainError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let ck = &outcome.checkpoint;
    ck.save(dir.join(CHECKPOINT_FILE))?;

    let log_path = dir.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    for ev in &outcome.events {
        let mut line = serde_json::to_value(ev)?;
        line["event"] = "epoch".into();
        writeln!(log, "{line}").map_err(|e| io_err(&log_path, e))?;
    }

    let manifest = RunManifest {
        trait_: ck.config.trait_,
        ablation: ck.config.ablation,
        seed: ck.config.seed,
        config_hash: ck.config.hash(),
        annotator: annotator.to_string(),
        learning_rate: ck.learning_rate,
        epoch: ck.epoch,
        validation_accuracy: ck.validation_accuracy,
        learning_rate_runs: outcome.runs.clone(),
        skipped_dialogues: outcome.skipped_dialogues.clone(),
        started_at: started_at.to_rfc3339(),
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

pub fn load_run<T: Scalar>(dir: impl AsRef<Path>) -> Result<(Checkpoint<T>, RunManifest), TrainError> {
    let dir = dir.as_ref();
    let checkpoint = Checkpoint::load(dir.join(CHECKPOINT_FILE))?;
    let path = dir.join(MANIFEST_FILE);
    let raw = fs::read(&path).map_err(|e| io_err(&path, e))?;
    Ok((checkpoint, serde_json::from_slice(&raw)?))
}
