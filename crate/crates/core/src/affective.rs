//! Affective dialogue content: each utterance paired with a templated
//! description of its speaker's emotion.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dialogue, Utterance};
use crate::erc::EmotionLabel;

#[derive(Debug, Error)]
pub enum AffectiveError {
    #[error("dialogue `{dialogue_id}` has {utterances} utterances but {emotions} emotion labels")]
    LengthMismatch {
        dialogue_id: String,
        utterances: usize,
        emotions: usize,
    },
    #[error("template `{0}` lacks the {{emotion}} placeholder")]
    MissingPlaceholder(String),
    #[error("failed to read template file {path}: {message}")]
    Load { path: String, message: String },
}

/// Which of the four templates describes an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    FirstTarget,
    FirstOther,
    LaterTarget,
    LaterOther,
}

impl Branch {
    pub fn select(position: usize, is_target: bool) -> Self {
        match (position == 0, is_target) {
            (true, true) => Branch::FirstTarget,
            (true, false) => Branch::FirstOther,
            (false, true) => Branch::LaterTarget,
            (false, false) => Branch::LaterOther,
        }
    }
}

/// Format strings for the four branches, with `{speaker}` and `{emotion}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub first_target: String,
    pub first_other: String,
    pub later_target: String,
    pub later_other: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            first_target: "({speaker} is initially {emotion})".into(),
            first_other: "(At the beginning, {speaker} is {emotion})".into(),
            later_target: "({speaker} responds with {emotion})".into(),
            later_other: "(Then, {speaker} turns to be {emotion})".into(),
        }
    }
}

impl TemplateSet {
    /// Reads a TOML (`.toml`) or JSON file with the four keys.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, AffectiveError> {
        let path = path.as_ref();
        let load = |message: String| AffectiveError::Load {
            path: path.display().to_string(),
            message,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| load(e.to_string()))?;
        let set: TemplateSet = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&raw).map_err(|e| load(e.to_string()))?
        } else {
            serde_json::from_str(&raw).map_err(|e| load(e.to_string()))?
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), AffectiveError> {
        for t in [&self.first_target, &self.first_other, &self.later_target, &self.later_other] {
            if !t.contains("{emotion}") {
                return Err(AffectiveError::MissingPlaceholder(t.clone()));
            }
        }
        Ok(())
    }

    pub fn template(&self, branch: Branch) -> &str {
        match branch {
            Branch::FirstTarget => &self.first_target,
            Branch::FirstOther => &self.first_other,
            Branch::LaterTarget => &self.later_target,
            Branch::LaterOther => &self.later_other,
        }
    }

    pub fn render(&self, branch: Branch, speaker: &str, emotion: EmotionLabel) -> String {
        self.template(branch)
            .replace("{speaker}", speaker)
            .replace("{emotion}", emotion.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectiveUtterance {
    pub utterance: Utterance,
    pub emotion: EmotionLabel,
    pub branch: Branch,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectiveDialogue {
    pub items: Vec<AffectiveUtterance>,
    pub target_speaker: String,
}

/// Name used for non-target speakers: the other speaker's own name in a
/// two-party dialogue, "the others" otherwise.
pub fn other_speaker_name(dialogue: &Dialogue) -> String {
    let speakers = dialogue.speakers();
    match speakers.as_slice() {
        [a, b] => {
            if *a == dialogue.target_speaker {
                b.to_string()
            } else {
                a.to_string()
            }
        }
        _ => "the others".to_string(),
    }
}

pub fn build_affective_content(
    dialogue: &Dialogue,
    emotions: &[EmotionLabel],
    templates: &TemplateSet,
) -> Result<AffectiveDialogue, AffectiveError> {
    if emotions.len() != dialogue.utterances.len() {
        return Err(AffectiveError::LengthMismatch {
            dialogue_id: dialogue.dialogue_id.clone(),
            utterances: dialogue.utterances.len(),
            emotions: emotions.len(),
        });
    }
    let other = other_speaker_name(dialogue);
    let items = dialogue
        .utterances
        .iter()
        .zip(emotions)
        .enumerate()
        .map(|(i, (u, &emotion))| {
            let branch = Branch::select(i, u.is_target);
            let speaker = if u.is_target { dialogue.target_speaker.as_str() } else { other.as_str() };
            AffectiveUtterance {
                utterance: u.clone(),
                emotion,
                branch,
                description: templates.render(branch, speaker, emotion),
            }
        })
        .collect();
    Ok(AffectiveDialogue {
        items,
        target_speaker: dialogue.target_speaker.clone(),
    })
}

impl AffectiveDialogue {
    /// One `"Speaker: text description"` line per utterance.
    pub fn lines(&self) -> Vec<String> {
        self.items
            .iter()
            .map(|it| format!("{}: {} {}", it.utterance.speaker_id, it.utterance.text.trim(), it.description))
            .collect()
    }
}

pub fn render_affective_text(ad: &AffectiveDialogue) -> String {
    ad.lines().join("\n")
}

/// The same layout without affective descriptions.
pub fn plain_lines(dialogue: &Dialogue) -> Vec<String> {
    dialogue
        .utterances
        .iter()
        .map(|u| format!("{}: {}", u.speaker_id, u.text.trim()))
        .collect()
}
