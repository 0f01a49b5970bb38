//! Personality recognition in conversation as affective natural language
//! inference.
//!
//! A dialogue is annotated with utterance emotions, rendered as affective
//! premise text, paired with positive and negative trait hypotheses, and
//! scored by a backbone that fills a yes/no mask. Numeric code is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix the scalar type.

pub mod affective;
pub mod backbone;
pub mod corpus;
pub mod erc;
pub mod eval;
pub mod hypotheses;
pub mod nli;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod session;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use affective::{build_affective_content, AffectiveDialogue, TemplateSet};
pub use backbone::{AdapterState, BackboneAdapter, Family, TinyConfig, TrainableAdapter, TuningMode};
pub use corpus::{Dialogue, DatasetSplit, TraitVector, Utterance};
pub use erc::{AnnotationCache, EmotionLabel, ErcAnnotator};
pub use eval::{evaluate_flow, evaluate_overall, EvalReport, TraitModel, TraitModels};
pub use hypotheses::{DescriptionRegistry, Polarity, Trait};
pub use nli::{infer_trait, make_training_samples, training_loss, NliPrompt, ScoreQuad, TraitPrediction};
pub use pipeline::Pipeline;
pub use scalar::Scalar;
pub use trainer::{Ablation, RunConfig};

pub type ScoreQuad64 = ScoreQuad<f64>;
pub type ScoreQuad32 = ScoreQuad<f32>;
pub type TraitPrediction64 = TraitPrediction<f64>;
pub type TraitPrediction32 = TraitPrediction<f32>;
pub type TinyAdapter64 = backbone::TinyAdapter<f64>;
pub type TinyAdapter32 = backbone::TinyAdapter<f32>;
pub type Checkpoint64 = trainer::Checkpoint<f64>;
pub type Checkpoint32 = trainer::Checkpoint<f32>;
pub type TraitModels64 = TraitModels<f64>;
