//! Big-Five traits, their positive/negative natural-language descriptions,
//! and rendering of speaker-attributed hypotheses.
//!
//! Descriptions are data. The default registry is bundled from
//! `resources/trait_descriptions.json`; an alternative file (for example the
//! bare label names used by the "no personality" ablation) can be loaded with
//! [`DescriptionRegistry::from_path`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_DESCRIPTIONS: &str = include_str!("../resources/trait_descriptions.json");
const BUNDLED_LABEL_NAMES: &str = include_str!("../resources/label_names.json");

/// One of the five personality dimensions, each treated as a binary label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Trait {
    #[serde(rename = "AGR")]
    Agr,
    #[serde(rename = "CON")]
    Con,
    #[serde(rename = "EXT")]
    Ext,
    #[serde(rename = "OPN")]
    Opn,
    #[serde(rename = "NEU")]
    Neu,
}

impl Trait {
    /// Report column order: AGR, CON, EXT, OPN, NEU.
    pub const ALL: [Trait; 5] = [Trait::Agr, Trait::Con, Trait::Ext, Trait::Opn, Trait::Neu];

    pub fn code(self) -> &'static str {
        match self {
            Trait::Agr => "AGR",
            Trait::Con => "CON",
            Trait::Ext => "EXT",
            Trait::Opn => "OPN",
            Trait::Neu => "NEU",
        }
    }

    pub fn full_name(self) -> &'static str {
        match self {
            Trait::Agr => "Agreeableness",
            Trait::Con => "Conscientiousness",
            Trait::Ext => "Extraversion",
            Trait::Opn => "Openness",
            Trait::Neu => "Neuroticism",
        }
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown trait `{0}` (expected one of AGR, CON, EXT, OPN, NEU)")]
pub struct UnknownTrait(pub String);

impl FromStr for Trait {
    type Err = UnknownTrait;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AGR" | "AGREEABLENESS" => Ok(Trait::Agr),
            "CON" | "CONSCIENTIOUSNESS" => Ok(Trait::Con),
            "EXT" | "EXTRAVERSION" | "EXTROVERSION" => Ok(Trait::Ext),
            "OPN" | "OPENNESS" => Ok(Trait::Opn),
            "NEU" | "NEUROTICISM" => Ok(Trait::Neu),
            _ => Err(UnknownTrait(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub const BOTH: [Polarity; 2] = [Polarity::Positive, Polarity::Negative];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitDescription {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub polarity: Polarity,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("failed to read description file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid description file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("description file lacks trait {0}")]
    MissingTrait(Trait),
    #[error("empty {polarity:?} description for {trait_}")]
    EmptyText { trait_: Trait, polarity: Polarity },
    #[error("positive and negative descriptions of {0} are identical")]
    Identical(Trait),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DescriptionPair {
    positive: String,
    negative: String,
}

/// Immutable 5 x 2 grid of trait descriptions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptionRegistry {
    entries: BTreeMap<Trait, [String; 2]>,
}

impl DescriptionRegistry {
    /// The bundled descriptions.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_DESCRIPTIONS).expect("bundled trait descriptions are valid")
    }

    /// Bare trait names ("Neuroticism" / "not Neuroticism").
    pub fn label_names() -> Self {
        Self::from_json(BUNDLED_LABEL_NAMES).expect("bundled label names are valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, RegistryError> {
        let parsed: BTreeMap<Trait, DescriptionPair> = serde_json::from_str(raw)?;
        let mut entries = BTreeMap::new();
        for t in Trait::ALL {
            let pair = parsed.get(&t).ok_or(RegistryError::MissingTrait(t))?;
            let positive = pair.positive.trim().to_string();
            let negative = pair.negative.trim().to_string();
            for (text, polarity) in [(&positive, Polarity::Positive), (&negative, Polarity::Negative)] {
                if text.is_empty() {
                    return Err(RegistryError::EmptyText { trait_: t, polarity });
                }
            }
            if positive == negative {
                return Err(RegistryError::Identical(t));
            }
            entries.insert(t, [positive, negative]);
        }
        Ok(Self { entries })
    }

    pub fn text(&self, trait_: Trait, polarity: Polarity) -> &str {
        let pair = &self.entries[&trait_];
        match polarity {
            Polarity::Positive => &pair[0],
            Polarity::Negative => &pair[1],
        }
    }

    pub fn get_description(&self, trait_: Trait, polarity: Polarity) -> TraitDescription {
        TraitDescription {
            trait_,
            polarity,
            text: self.text(trait_, polarity).to_string(),
        }
    }

    /// `"{speaker} is {description}."` with exactly one terminal period.
    pub fn render_hypothesis(&self, speaker: &str, trait_: Trait, polarity: Polarity) -> String {
        let body = self.text(trait_, polarity).trim_end().trim_end_matches('.');
        format!("{} is {}.", speaker.trim(), body)
    }
}

impl Default for DescriptionRegistry {
    fn default() -> Self {
        Self::bundled()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_grid_is_total() {
        let reg = DescriptionRegistry::bundled();
        for t in Trait::ALL {
            for p in Polarity::BOTH {
                let d = reg.get_description(t, p);
                assert!(!d.text.is_empty());
                assert!(!reg.render_hypothesis("Ann", t, p).is_empty());
            }
            assert_ne!(reg.text(t, Polarity::Positive), reg.text(t, Polarity::Negative));
        }
    }

    #[test]
    fn registry_lookups() {
        let reg = DescriptionRegistry::bundled();
        assert!(reg
            .text(Trait::Neu, Polarity::Positive)
            .starts_with("prone to experiencing negative emotions"));
        assert!(reg
            .text(Trait::Ext, Polarity::Negative)
            .starts_with("introverted, reserved, quiet"));
        assert!(reg
            .text(Trait::Agr, Polarity::Positive)
            .starts_with("friendly, cooperative, empathetic"));
    }

    #[test]
    fn hypothesis_rendering() {
        let reg = DescriptionRegistry::bundled();
        let h = reg.render_hypothesis("Mrs. Thompson", Trait::Neu, Polarity::Positive);
        assert_eq!(
            h,
            "Mrs. Thompson is prone to experiencing negative emotions, such as anxiety, worry, and \
             mood swings, often displaying heightened sensitivity to stress and a tendency towards \
             self-doubt and emotional instability."
        );
        assert!(!h.ends_with(".."));
        assert_eq!(h, reg.render_hypothesis("Mrs. Thompson", Trait::Neu, Polarity::Positive));
    }

    #[test]
    fn hypotheses_are_injective() {
        let reg = DescriptionRegistry::bundled();
        let mut seen = std::collections::HashSet::new();
        for speaker in ["Ann", "Bob"] {
            for t in Trait::ALL {
                for p in Polarity::BOTH {
                    assert!(seen.insert(reg.render_hypothesis(speaker, t, p)));
                }
            }
        }
    }

    #[test]
    fn label_name_registry() {
        let reg = DescriptionRegistry::label_names();
        assert_eq!(reg.render_hypothesis("Ann", Trait::Neu, Polarity::Positive), "Ann is Neuroticism.");
        assert_eq!(
            reg.render_hypothesis("Ann", Trait::Neu, Polarity::Negative),
            "Ann is not Neuroticism."
        );
    }

    #[test]
    fn missing_trait_is_rejected() {
        let err = DescriptionRegistry::from_json(r#"{"AGR":{"positive":"a","negative":"b"}}"#)
            .unwrap_err();
        assert!(matches!(err, RegistryError::MissingTrait(Trait::Con)));
    }

    #[test]
    fn trait_parsing() {
        assert_eq!("neu".parse::<Trait>().unwrap(), Trait::Neu);
        assert_eq!("Openness".parse::<Trait>().unwrap(), Trait::Opn);
        assert!("XYZ".parse::<Trait>().is_err());
    }
}
