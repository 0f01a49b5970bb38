//! Personality recognition as yes/no entailment.
//!
//! For a trait `p` two prompts are built over the same premise: one with the
//! positive description of `p` as hypothesis, one with the negative. A
//! backbone fills the `[MASK]` slot of each; the four verbalizer
//! probabilities form a [`ScoreQuad`]. Training supervises each prompt with
//! its gold answer, and inference compares
//! `P_pos(yes) + P_neg(no)` against `P_neg(yes) + P_pos(no)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affective::AffectiveDialogue;
use crate::backbone::{BackboneAdapter, BackboneError};
use crate::hypotheses::{DescriptionRegistry, Polarity, Trait};
use crate::scalar::Scalar;

pub const QUESTION: &str = "Is it correct?";
pub const MASK: &str = "[MASK]";
/// Fixed prompt ending: question followed by the mask slot.
pub const PROMPT_TAIL: &str = "Is it correct? [MASK].";

#[derive(Debug, Error)]
pub enum NliError {
    #[error("no verbalizer mass on the {0:?} prompt (p_yes + p_no = 0)")]
    DegenerateMass(Polarity),
    #[error("invalid score quad: {0}")]
    InvalidQuad(String),
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(u8),
}

/// Premise lines plus hypothesis; the question and mask slot are implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NliPrompt {
    pub premise: Vec<String>,
    pub hypothesis: String,
}

impl NliPrompt {
    pub fn premise_text(&self) -> String {
        self.premise.join("\n")
    }

    /// Premise, hypothesis and `"Is it correct? [MASK]."` separated by single spaces.
    pub fn serialize(&self) -> String {
        let premise = self.premise_text();
        let mut out = String::with_capacity(premise.len() + self.hypothesis.len() + PROMPT_TAIL.len() + 2);
        if !premise.is_empty() {
            out.push_str(&premise);
            out.push(' ');
        }
        out.push_str(&self.hypothesis);
        out.push(' ');
        out.push_str(PROMPT_TAIL);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

/// Gold answer for the prompt of `polarity` when the trait label is `y_p`.
pub fn gold_answer(polarity: Polarity, y_p: u8) -> Answer {
    match (polarity, y_p == 1) {
        (Polarity::Positive, true) | (Polarity::Negative, false) => Answer::Yes,
        _ => Answer::No,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub positive: NliPrompt,
    pub negative: NliPrompt,
}

impl PromptPair {
    pub fn get(&self, polarity: Polarity) -> &NliPrompt {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliSample {
    pub prompt: NliPrompt,
    pub gold: Answer,
    pub dialogue_id: String,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub polarity: Polarity,
}

/// Prompts over an arbitrary premise (affective or plain dialogue lines).
pub fn build_prompts_from_premise(
    premise: Vec<String>,
    speaker: &str,
    trait_: Trait,
    registry: &DescriptionRegistry,
) -> PromptPair {
    PromptPair {
        positive: NliPrompt {
            premise: premise.clone(),
            hypothesis: registry.render_hypothesis(speaker, trait_, Polarity::Positive),
        },
        negative: NliPrompt {
            premise,
            hypothesis: registry.render_hypothesis(speaker, trait_, Polarity::Negative),
        },
    }
}

/// `(T_pos, T_neg)` over the affective dialogue.
pub fn build_prompts(ad: &AffectiveDialogue, trait_: Trait, registry: &DescriptionRegistry) -> PromptPair {
    build_prompts_from_premise(ad.lines(), &ad.target_speaker, trait_, registry)
}

/// Supervised samples for one dialogue and trait: `(T_pos, yes), (T_neg, no)`
/// when `y_p == 1`, `(T_pos, no), (T_neg, yes)` otherwise. With
/// `positive_only` just the `T_pos` sample is returned.
pub fn make_training_samples(
    pair: &PromptPair,
    trait_: Trait,
    dialogue_id: &str,
    y_p: u8,
    positive_only: bool,
) -> Result<Vec<NliSample>, NliError> {
    if y_p > 1 {
        return Err(NliError::InvalidLabel(y_p));
    }
    let polarities: &[Polarity] = if positive_only { &[Polarity::Positive] } else { &Polarity::BOTH };
    Ok(polarities
        .iter()
        .map(|&polarity| NliSample {
            prompt: pair.get(polarity).clone(),
            gold: gold_answer(polarity, y_p),
            dialogue_id: dialogue_id.to_string(),
            trait_,
            polarity,
        })
        .collect())
}

/// Verbalizer probabilities for both prompts of one dialogue and trait.
///
/// Values are masses under the backbone's full output distribution, so each
/// pair sums to at most one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreQuad<T> {
    pub p_pos_yes: T,
    pub p_pos_no: T,
    pub p_neg_yes: T,
    pub p_neg_no: T,
}

impl<T: Scalar> ScoreQuad<T> {
    pub fn new(p_pos_yes: T, p_pos_no: T, p_neg_yes: T, p_neg_no: T) -> Self {
        Self {
            p_pos_yes,
            p_pos_no,
            p_neg_yes,
            p_neg_no,
        }
    }

    pub fn from_f64(q: [f64; 4]) -> Self {
        Self::new(T::of(q[0]), T::of(q[1]), T::of(q[2]), T::of(q[3]))
    }

    /// Evidence for the positive class: `P_pos(yes) + P_neg(no)`.
    pub fn positive_sum(&self) -> T {
        self.p_pos_yes + self.p_neg_no
    }

    /// Evidence for the negative class: `P_neg(yes) + P_pos(no)`.
    pub fn negative_sum(&self) -> T {
        self.p_neg_yes + self.p_pos_no
    }

    pub fn validate(&self) -> Result<(), NliError> {
        let ok = |x: T| x.is_finite() && x >= T::zero() && x <= T::one();
        if ![self.p_pos_yes, self.p_pos_no, self.p_neg_yes, self.p_neg_no].into_iter().all(ok) {
            return Err(NliError::InvalidQuad(format!("{self:?} has a value outside [0, 1]")));
        }
        let slack = T::of(1e-6);
        for (sum, pol) in [
            (self.p_pos_yes + self.p_pos_no, Polarity::Positive),
            (self.p_neg_yes + self.p_neg_no, Polarity::Negative),
        ] {
            if sum > T::one() + slack {
                return Err(NliError::InvalidQuad(format!("{pol:?} prompt mass {sum} exceeds 1")));
            }
        }
        Ok(())
    }
}

/// Queries the adapter once per prompt.
pub fn score<T: Scalar, A: BackboneAdapter<T> + ?Sized>(
    adapter: &A,
    pair: &PromptPair,
) -> Result<ScoreQuad<T>, BackboneError> {
    let (p_pos_yes, p_pos_no) = adapter.verbalizer_probs(&pair.positive)?;
    let (p_neg_yes, p_neg_no) = adapter.verbalizer_probs(&pair.negative)?;
    Ok(ScoreQuad::new(p_pos_yes, p_pos_no, p_neg_yes, p_neg_no))
}

/// Positive-prompt-only scoring. The negative slots are zero, so the
/// inference rule reduces to `P_pos(yes)` against `P_pos(no)`.
pub fn score_positive_only<T: Scalar, A: BackboneAdapter<T> + ?Sized>(
    adapter: &A,
    pair: &PromptPair,
) -> Result<ScoreQuad<T>, BackboneError> {
    let (p_pos_yes, p_pos_no) = adapter.verbalizer_probs(&pair.positive)?;
    Ok(ScoreQuad::new(p_pos_yes, p_pos_no, T::zero(), T::zero()))
}

/// Cross-entropy of the gold answer after renormalising over {yes, no}.
pub fn prompt_loss<T: Scalar>(p_yes: T, p_no: T, gold: Answer, polarity: Polarity) -> Result<T, NliError> {
    let mass = p_yes + p_no;
    if !(mass > T::zero()) {
        return Err(NliError::DegenerateMass(polarity));
    }
    let p_gold = match gold {
        Answer::Yes => p_yes,
        Answer::No => p_no,
    };
    Ok(-(p_gold / mass).ln())
}

/// Sum of the two per-prompt cross-entropies for label `y_p`.
pub fn training_loss<T: Scalar>(quad: &ScoreQuad<T>, y_p: u8) -> Result<T, NliError> {
    if y_p > 1 {
        return Err(NliError::InvalidLabel(y_p));
    }
    quad.validate()?;
    let pos = prompt_loss(quad.p_pos_yes, quad.p_pos_no, gold_answer(Polarity::Positive, y_p), Polarity::Positive)?;
    let neg = prompt_loss(quad.p_neg_yes, quad.p_neg_no, gold_answer(Polarity::Negative, y_p), Polarity::Negative)?;
    Ok(pos + neg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitPrediction<T> {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub label: u8,
    /// `S_pos / (S_pos + S_neg)`.
    pub confidence: T,
    pub tie: bool,
}

/// Label 1 iff the positive evidence strictly exceeds the negative; ties go to 0.
pub fn infer_trait<T: Scalar>(quad: &ScoreQuad<T>, trait_: Trait) -> TraitPrediction<T> {
    let s_pos = quad.positive_sum();
    let s_neg = quad.negative_sum();
    let total = s_pos + s_neg;
    let confidence = if total > T::zero() { s_pos / total } else { T::of(0.5) };
    TraitPrediction {
        trait_,
        label: u8::from(s_pos > s_neg),
        confidence,
        tie: s_pos == s_neg,
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / sum).collect()
}
