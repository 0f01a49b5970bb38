//! Streaming personality recognition over a live transcript, with
//! threshold-gated trait triggers.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::thread;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Dialogue, TraitVector};
use crate::eval::{EvalError, TraitModels};
use crate::hypotheses::Trait;
use crate::nli::TraitPrediction;
use crate::pipeline::Pipeline;
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    Threshold(f64),
    #[error("expected `name: text`, got `{0}`")]
    Malformed(String),
    #[error("unknown speaker `{0}`; registered speakers: {1}")]
    UnknownSpeaker(String, String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl SessionError {
    /// Input errors leave the session untouched; the caller may reprompt.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, SessionError::Malformed(_) | SessionError::UnknownSpeaker(..))
    }
}

/// Splits `name: text` on the first colon.
pub fn parse_turn(line: &str) -> Result<(String, String), SessionError> {
    let malformed = || SessionError::Malformed(line.trim_end().to_string());
    let (name, text) = line.split_once(':').ok_or_else(malformed)?;
    let (name, text) = (name.trim(), text.trim());
    if name.is_empty() || text.is_empty() {
        return Err(malformed());
    }
    Ok((name.to_string(), text.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerEvent {
    pub event: &'static str,
    pub turn: usize,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub confidence: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TurnOutcome<T> {
    /// A non-target turn; no prediction is made.
    Other { turn: usize, speaker: String },
    Scored {
        turn: usize,
        speaker: String,
        predictions: Vec<TraitPrediction<T>>,
        triggers: Vec<TriggerEvent>,
    },
}

pub struct SessionState<T> {
    pub turns: Vec<(String, String)>,
    pub target_speaker: String,
    pub speakers: Option<Vec<String>>,
    pub threshold: f64,
    pub latest: Option<Vec<TraitPrediction<T>>>,
    pub triggered: BTreeSet<Trait>,
}

impl<T: Scalar> SessionState<T> {
    pub fn new(target_speaker: impl Into<String>, threshold: f64) -> Result<Self, SessionError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(SessionError::Threshold(threshold));
        }
        Ok(Self {
            turns: Vec::new(),
            target_speaker: target_speaker.into(),
            speakers: None,
            threshold,
            latest: None,
            triggered: BTreeSet::new(),
        })
    }

    pub fn with_speakers(mut self, speakers: Vec<String>) -> Self {
        self.speakers = Some(speakers);
        self
    }

    /// Traits whose confidence exceeds the threshold and is the highest of
    /// the five (ties at the top all qualify).
    pub fn qualifying(&self, predictions: &[TraitPrediction<T>]) -> Vec<Trait> {
        let top = predictions.iter().map(|p| p.confidence.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        predictions
            .iter()
            .filter(|p| {
                let c = p.confidence.as_f64();
                c > self.threshold && c >= top
            })
            .map(|p| p.trait_)
            .collect()
    }

    fn transcript(&self) -> Result<Dialogue, EvalError> {
        Dialogue::from_turns("session", self.target_speaker.clone(), &self.turns, TraitVector::default())
            .map_err(|e| EvalError::InvalidReport(e.to_string()))
    }

    /// Appends one turn. After a target turn the whole transcript is
    /// re-annotated and all five traits are rescored concurrently.
    pub fn submit(&mut self, line: &str, models: &TraitModels<T>, pipeline: &Pipeline) -> Result<TurnOutcome<T>, SessionError> {
        let (speaker, text) = parse_turn(line)?;
        if let Some(known) = &self.speakers {
            if !known.contains(&speaker) {
                return Err(SessionError::UnknownSpeaker(speaker, known.join(", ")));
            }
        }
        self.turns.push((speaker.clone(), text));
        let turn = self.turns.len();
        if speaker != self.target_speaker {
            return Ok(TurnOutcome::Other { turn, speaker });
        }
        let predictions = match self.score(models, pipeline) {
            Ok(p) => p,
            Err(e) => {
                self.turns.pop();
                return Err(e.into());
            }
        };
        let triggers = self
            .qualifying(&predictions)
            .into_iter()
            .filter(|t| self.triggered.insert(*t))
            .map(|t| TriggerEvent {
                event: "trigger",
                turn,
                trait_: t,
                confidence: predictions.iter().find(|p| p.trait_ == t).expect("scored").confidence.as_f64(),
                threshold: self.threshold,
            })
            .collect();
        self.latest = Some(predictions.clone());
        Ok(TurnOutcome::Scored {
            turn,
            speaker,
            predictions,
            triggers,
        })
    }

    fn score(&self, models: &TraitModels<T>, pipeline: &Pipeline) -> Result<Vec<TraitPrediction<T>>, EvalError> {
        let dialogue = self.transcript()?;
        if let Some(t) = Trait::ALL.into_iter().find(|t| !models.contains_key(t)) {
            return Err(EvalError::MissingTrait(t));
        }
        let affective = models.values().any(|m| m.ablation.needs_affective());
        let prepared = pipeline
            .prepare(&dialogue, affective)
            .map_err(|source| EvalError::Dialogue {
                dialogue_id: dialogue.dialogue_id.clone(),
                source,
            })?;
        thread::scope(|s| {
            let handles: Vec<_> = Trait::ALL
                .into_iter()
                .map(|t| {
                    let m = &models[&t];
                    let prepared = &prepared;
                    s.spawn(move || pipeline.predict(m.adapter.as_ref(), prepared, t, m.ablation))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| Ok(h.join().expect("scoring thread panicked")?))
                .collect()
        })
    }
}

/// `AGR 37%  CON 42%  ...` for a scored turn, `-` otherwise.
pub fn format_row<T: Scalar>(outcome: &TurnOutcome<T>) -> String {
    match outcome {
        TurnOutcome::Other { turn, speaker } => format!("[{turn}] {speaker}  -"),
        TurnOutcome::Scored {
            turn,
            speaker,
            predictions,
            ..
        } => {
            let cells: Vec<String> = predictions
                .iter()
                .map(|p| format!("{} {:.0}%", p.trait_, p.confidence.as_f64() * 100.0))
                .collect();
            format!("[{turn}] {speaker}  {}", cells.join("  "))
        }
    }
}

/// Reads turns from `input` until EOF, printing one row per turn to `output`
/// and one JSON line per trigger to `events`. Malformed lines are reported
/// and skipped.
pub fn run_session<T: Scalar>(
    state: &mut SessionState<T>,
    models: &TraitModels<T>,
    pipeline: &Pipeline,
    input: impl BufRead,
    mut output: impl Write,
    mut events: impl Write,
) -> Result<(), SessionError> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match state.submit(&line, models, pipeline) {
            Ok(outcome) => {
                writeln!(output, "{}", format_row(&outcome))?;
                if let TurnOutcome::Scored { triggers, .. } = &outcome {
                    for t in triggers {
                        writeln!(output, "trigger: {} ({:.0}% > {:.0}%)", t.trait_, t.confidence * 100.0, t.threshold * 100.0)?;
                        writeln!(events, "{}", serde_json::to_string(t).expect("event serialises"))?;
                    }
                }
            }
            Err(e) if e.is_recoverable() => writeln!(output, "error: {e}")?,
            Err(e) => return Err(e),
        }
        output.flush()?;
        events.flush()?;
    }
    Ok(())
}
