//! Dialogue-to-prompt assembly shared by training, evaluation and the
//! interactive session.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affective::{build_affective_content, plain_lines, AffectiveDialogue, AffectiveError, TemplateSet};
use crate::backbone::{BackboneAdapter, BackboneError};
use crate::corpus::Dialogue;
use crate::erc::{annotate_dialogue, AnnotationCache, ErcAnnotator, ErcError};
use crate::hypotheses::{DescriptionRegistry, Trait};
use crate::nli::{build_prompts_from_premise, infer_trait, score, score_positive_only, PromptPair, ScoreQuad, TraitPrediction};
use crate::scalar::Scalar;
use crate::text;
use crate::trainer::Ablation;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Erc(#[from] ErcError),
    #[error(transparent)]
    Affective(#[from] AffectiveError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
}

/// Per-utterance token cap and per-dialogue utterance cap applied to the premise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseLimits {
    pub utterance_max_len: usize,
    pub dialogue_max_len: usize,
}

impl Default for PremiseLimits {
    fn default() -> Self {
        Self {
            utterance_max_len: 256,
            dialogue_max_len: 20,
        }
    }
}

/// A dialogue with its affective rendering, ready for prompt construction.
#[derive(Debug, Clone)]
pub struct PreparedDialogue {
    pub dialogue: Dialogue,
    pub affective: Option<AffectiveDialogue>,
    plain: Vec<String>,
    affective_lines: Option<Vec<String>>,
}

impl PreparedDialogue {
    pub fn premise(&self, ablation: Ablation) -> &[String] {
        match (ablation, &self.affective_lines) {
            (Ablation::NoAffective, _) | (_, None) => &self.plain,
            (_, Some(lines)) => lines,
        }
    }
}

pub struct Pipeline {
    annotator: Arc<dyn ErcAnnotator>,
    cache: Option<Arc<AnnotationCache>>,
    pub templates: TemplateSet,
    pub descriptions: DescriptionRegistry,
    pub label_names: DescriptionRegistry,
    pub limits: PremiseLimits,
}

impl Pipeline {
    pub fn new(annotator: Arc<dyn ErcAnnotator>) -> Self {
        Self {
            annotator,
            cache: None,
            templates: TemplateSet::default(),
            descriptions: DescriptionRegistry::bundled(),
            label_names: DescriptionRegistry::label_names(),
            limits: PremiseLimits::default(),
        }
    }

    pub fn with_cache(mut self, cache: Arc<AnnotationCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_limits(mut self, limits: PremiseLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn annotator(&self) -> &dyn ErcAnnotator {
        self.annotator.as_ref()
    }

    pub fn registry(&self, ablation: Ablation) -> &DescriptionRegistry {
        if ablation == Ablation::NoPersonality {
            &self.label_names
        } else {
            &self.descriptions
        }
    }

    /// The most recent `dialogue_max_len` lines.
    fn recent(&self, lines: Vec<String>) -> Vec<String> {
        let skip = lines.len().saturating_sub(self.limits.dialogue_max_len);
        lines.into_iter().skip(skip).collect()
    }

    /// Annotates the whole dialogue (when `affective`) and renders both premise
    /// forms. Utterance texts are capped at `utterance_max_len` tokens before
    /// rendering.
    pub fn prepare(&self, dialogue: &Dialogue, affective: bool) -> Result<PreparedDialogue, PipelineError> {
        let mut clipped = dialogue.clone();
        for u in &mut clipped.utterances {
            u.text = text::clip_tokens(&u.text, self.limits.utterance_max_len);
        }
        let plain = self.recent(plain_lines(&clipped));
        let (affective, affective_lines) = if affective {
            let labels = annotate_dialogue(self.annotator.as_ref(), dialogue, self.cache.as_deref())?.labels;
            let ad = build_affective_content(&clipped, &labels, &self.templates)?;
            let lines = self.recent(ad.lines());
            (Some(ad), Some(lines))
        } else {
            (None, None)
        };
        Ok(PreparedDialogue {
            dialogue: dialogue.clone(),
            affective,
            plain,
            affective_lines,
        })
    }

    pub fn prompts(&self, prepared: &PreparedDialogue, trait_: Trait, ablation: Ablation) -> PromptPair {
        build_prompts_from_premise(
            prepared.premise(ablation).to_vec(),
            &prepared.dialogue.target_speaker,
            trait_,
            self.registry(ablation),
        )
    }

    pub fn score<T: Scalar, A: BackboneAdapter<T> + ?Sized>(
        &self,
        adapter: &A,
        pair: &PromptPair,
        ablation: Ablation,
    ) -> Result<ScoreQuad<T>, BackboneError> {
        if ablation == Ablation::OnlyPos {
            score_positive_only(adapter, pair)
        } else {
            score(adapter, pair)
        }
    }

    pub fn predict<T: Scalar, A: BackboneAdapter<T> + ?Sized>(
        &self,
        adapter: &A,
        prepared: &PreparedDialogue,
        trait_: Trait,
        ablation: Ablation,
    ) -> Result<TraitPrediction<T>, BackboneError> {
        let pair = self.prompts(prepared, trait_, ablation);
        Ok(infer_trait(&self.score(adapter, &pair, ablation)?, trait_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TraitVector;
    use crate::erc::LexiconAnnotator;

    fn pipeline() -> Pipeline {
        Pipeline::new(Arc::new(LexiconAnnotator::reference()))
    }

    #[test]
    fn premise_forms() {
        let d = Dialogue::from_turns("d", "A", &[("B", "good day"), ("A", "so sad")], TraitVector::default())
            .unwrap();
        let p = pipeline().prepare(&d, true).unwrap();
        assert_eq!(
            p.premise(Ablation::Full),
            &["B: good day (At the beginning, B is Joy)".to_string(), "A: so sad (A responds with Sadness)".to_string()]
        );
        assert_eq!(p.premise(Ablation::NoAffective), &["B: good day".to_string(), "A: so sad".to_string()]);
    }

    #[test]
    fn limits_keep_recent_utterances() {
        let turns: Vec<(String, String)> = (0..25)
            .map(|i| (if i % 2 == 0 { "A" } else { "B" }.to_string(), format!("w{i} x y z")))
            .collect();
        let d = Dialogue::from_turns("d", "A", &turns, TraitVector::default()).unwrap();
        let pl = pipeline().with_limits(PremiseLimits {
            utterance_max_len: 2,
            dialogue_max_len: 20,
        });
        let p = pl.prepare(&d, true).unwrap();
        let lines = p.premise(Ablation::Full);
        assert_eq!(lines.len(), 20);
        assert_eq!(lines[0], "B: w5 x (Then, B turns to be Neutral)");
    }

    #[test]
    fn no_personality_uses_label_names() {
        let d = Dialogue::from_turns("d", "A", &[("A", "hi")], TraitVector::default()).unwrap();
        let pl = pipeline();
        let p = pl.prepare(&d, true).unwrap();
        let pair = pl.prompts(&p, Trait::Neu, Ablation::NoPersonality);
        assert_eq!(pair.positive.hypothesis, "A is Neuroticism.");
        let full = pl.prompts(&p, Trait::Neu, Ablation::Full);
        assert!(full.positive.hypothesis.contains("prone to experiencing"));
    }
}
