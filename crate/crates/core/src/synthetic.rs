//! Generated corpora whose labels depend only on emotion sequences.
//!
//! Utterance text is drawn from a fixed pool of neutral filler sentences,
//! independently of both emotions and labels, so a model can only recover the
//! labels through the emotion annotations (use [`crate::erc::GoldAnnotator`]).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, TraitVector, Utterance};
use crate::erc::EmotionLabel;
use crate::hypotheses::Trait;

const SPEAKERS: [&str; 6] = ["Alex", "Blair", "Casey", "Drew", "Emery", "Finley"];

const FILLER: [&str; 24] = [
    "we went to the store after lunch",
    "the train leaves at seven tomorrow",
    "I put the books on the kitchen table",
    "there is a meeting on the third floor",
    "she said the package arrived this morning",
    "my cousin is moving to another city",
    "the bus was on time today",
    "we should check the schedule again",
    "the printer is next to the window",
    "he bought a new chair for the office",
    "they painted the fence last weekend",
    "I will call you when I get home",
    "the keys are in the blue jacket",
    "the game starts at eight",
    "we need more paper for the report",
    "the coffee machine is in the hallway",
    "I read the letter twice",
    "the store closes early on sunday",
    "the plants need water every two days",
    "our neighbor has a large dog",
    "the radio was playing in the car",
    "I left the umbrella at the restaurant",
    "the movie is about two hours long",
    "we walked along the river yesterday",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dialogues: usize,
    /// Utterances per dialogue; speakers alternate so the target gets half.
    pub utterances: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dialogues: 500,
            utterances: 8,
            seed: 0,
        }
    }
}

/// Label rules over the target speaker's emotions `t` and the other
/// speaker's emotions `o`.
pub fn synthetic_labels(t: &[EmotionLabel], o: &[EmotionLabel]) -> TraitVector {
    let neg = |xs: &[EmotionLabel]| xs.iter().filter(|e| e.is_negative()).count();
    TraitVector::from_fn(|tr| {
        u8::from(match tr {
            Trait::Neu => neg(t) >= 2,
            Trait::Agr => t.contains(&EmotionLabel::Joy),
            Trait::Con => t.first() == Some(&EmotionLabel::Neutral),
            Trait::Ext => neg(o) >= 2,
            Trait::Opn => t.contains(&EmotionLabel::Surprise),
        })
    })
}

/// Generates the corpus. NEU labels alternate 1, 0, 1, ... by dialogue index
/// (emotion sequences are rejection-sampled to match), so the NEU classes are
/// balanced.
pub fn generate(config: &SyntheticConfig) -> Vec<Dialogue> {
    assert!(config.utterances >= 2, "synthetic dialogues need at least two utterances");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.dialogues)
        .map(|i| {
            let want_neu = u8::from(i % 2 == 0);
            let pair: Vec<&str> = SPEAKERS.choose_multiple(&mut rng, 2).copied().collect();
            let (target, other) = (pair[0], pair[1]);
            let target_first = rng.gen_bool(0.5);
            loop {
                let emotions: Vec<EmotionLabel> = (0..config.utterances)
                    .map(|_| *EmotionLabel::ALL.choose(&mut rng).expect("non-empty"))
                    .collect();
                let is_target = |k: usize| (k % 2 == 0) == target_first;
                let t: Vec<EmotionLabel> = (0..config.utterances).filter(|&k| is_target(k)).map(|k| emotions[k]).collect();
                let o: Vec<EmotionLabel> = (0..config.utterances).filter(|&k| !is_target(k)).map(|k| emotions[k]).collect();
                let labels = synthetic_labels(&t, &o);
                if labels.neu != want_neu {
                    continue;
                }
                let utterances = emotions
                    .iter()
                    .enumerate()
                    .map(|(k, &e)| Utterance {
                        index: k,
                        speaker_id: if is_target(k) { target } else { other }.to_string(),
                        text: FILLER.choose(&mut rng).expect("non-empty").to_string(),
                        is_target: is_target(k),
                        emotion: Some(e),
                    })
                    .collect();
                return Dialogue {
                    dialogue_id: format!("syn-{i:05}"),
                    utterances,
                    target_speaker: target.to_string(),
                    labels,
                };
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_balance() {
        let ds = generate(&SyntheticConfig::default());
        assert_eq!(ds.len(), 500);
        let pos = ds.iter().filter(|d| d.labels.neu == 1).count();
        assert_eq!(pos, 250);
        for d in &ds {
            d.validate().unwrap();
            assert_eq!(d.utterances.len(), 8);
            assert_eq!(d.target_utterance_count(), 4);
            let t: Vec<EmotionLabel> = d.utterances.iter().filter(|u| u.is_target).map(|u| u.emotion.unwrap()).collect();
            let negatives = t.iter().filter(|e| e.is_negative()).count();
            assert_eq!(d.labels.neu, u8::from(negatives >= 2));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let c = SyntheticConfig {
            dialogues: 20,
            ..SyntheticConfig::default()
        };
        assert_eq!(generate(&c), generate(&c));
        let other = SyntheticConfig { seed: 1, ..c.clone() };
        assert_ne!(generate(&c), generate(&other));
    }

    #[test]
    fn text_carries_no_label_signal() {
        let ds = generate(&SyntheticConfig::default());
        for d in &ds {
            for u in &d.utterances {
                assert!(FILLER.contains(&u.text.as_str()));
            }
        }
    }
}
