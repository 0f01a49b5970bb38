//! Backbone adapters: map an [`NliPrompt`] to the probabilities of the
//! verbalizer answers "yes" and "no" at the mask slot.
//!
//! Adapters carry a [`Family`] tag that fixes how the prompt is presented:
//! mask-filling and seq2seq models see the full serialised prompt, causal
//! models see it with the trailing `" [MASK]."` removed and score the next
//! token. Over-long prompts lose their oldest premise lines first; the
//! hypothesis, question and mask slot are never cut.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nli::{softmax, Answer, NliPrompt, NliSample, MASK};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::text;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("verbalizer token `{0}` is not a single token of the output vocabulary")]
    VerbalizerMissing(String),
    #[error("prompt needs {needed} tokens without any premise but the budget is {max}")]
    PromptTooLong { needed: usize, max: usize },
    #[error("no recorded scores for prompt {0}")]
    UnknownPrompt(String),
    #[error("adapter is in evaluation mode; call set_training(true) before fit_step")]
    NotTraining,
    #[error("empty training batch")]
    EmptyBatch,
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error("invalid adapter configuration: {0}")]
    Config(String),
    #[error("unknown model identifier `{0}` (expected tiny, constant:<yes>,<no> or recorded:<path>)")]
    UnknownModel(String),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    MaskFilling,
    Seq2seq,
    Causal,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::MaskFilling => "mask_filling",
            Family::Seq2seq => "seq2seq",
            Family::Causal => "causal",
        })
    }
}

impl FromStr for Family {
    type Err = BackboneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mask_filling" | "mlm" | "encoder" => Ok(Family::MaskFilling),
            "seq2seq" | "encoder_decoder" => Ok(Family::Seq2seq),
            "causal" | "decoder" => Ok(Family::Causal),
            other => Err(BackboneError::Config(format!("unknown family `{other}`"))),
        }
    }
}

/// The text a model of `family` is fed for `prompt`.
pub fn model_input(family: Family, prompt: &NliPrompt) -> String {
    let serialized = prompt.serialize();
    match family {
        Family::MaskFilling | Family::Seq2seq => serialized,
        Family::Causal => serialized
            .strip_suffix(&format!(" {MASK}."))
            .expect("serialised prompts end with the mask slot")
            .to_string(),
    }
}

/// Drops the oldest premise lines until the model input fits `max_tokens`.
pub fn fit_to_budget(prompt: &NliPrompt, family: Family, max_tokens: usize) -> Result<NliPrompt, BackboneError> {
    let mut premise_tokens: Vec<usize> = prompt.premise.iter().map(|l| text::token_count(l)).collect();
    let fixed = text::token_count(&model_input(
        family,
        &NliPrompt {
            premise: Vec::new(),
            hypothesis: prompt.hypothesis.clone(),
        },
    ));
    if fixed > max_tokens {
        return Err(BackboneError::PromptTooLong {
            needed: fixed,
            max: max_tokens,
        });
    }
    let mut drop = 0;
    let mut total: usize = fixed + premise_tokens.iter().sum::<usize>();
    while total > max_tokens {
        total -= premise_tokens[drop];
        premise_tokens[drop] = 0;
        drop += 1;
    }
    if drop == 0 {
        return Ok(prompt.clone());
    }
    Ok(NliPrompt {
        premise: prompt.premise[drop..].to_vec(),
        hypothesis: prompt.hypothesis.clone(),
    })
}

/// Maps prompts to `(p_yes, p_no)` at the mask slot.
pub trait BackboneAdapter<T: Scalar>: Send + Sync {
    fn family(&self) -> Family;

    fn max_input_tokens(&self) -> usize;

    /// Probability mass of the single-token answers "yes" and "no"; the two
    /// values sum to at most one.
    fn verbalizer_probs(&self, prompt: &NliPrompt) -> Result<(T, T), BackboneError>;
}

impl<T: Scalar, A: BackboneAdapter<T> + ?Sized> BackboneAdapter<T> for Box<A> {
    fn family(&self) -> Family {
        (**self).family()
    }

    fn max_input_tokens(&self) -> usize {
        (**self).max_input_tokens()
    }

    fn verbalizer_probs(&self, prompt: &NliPrompt) -> Result<(T, T), BackboneError> {
        (**self).verbalizer_probs(prompt)
    }
}

/// An adapter that can be fine-tuned. Exactly one trainer owns it while training.
pub trait TrainableAdapter<T: Scalar>: BackboneAdapter<T> {
    fn set_training(&mut self, training: bool);

    fn is_training(&self) -> bool;

    /// Resets the optimiser with a new step size.
    fn set_learning_rate(&mut self, learning_rate: f64);

    /// One optimiser step on the mean per-prompt loss of `batch`; returns the
    /// loss measured before the update.
    fn fit_step(&mut self, batch: &[NliSample]) -> Result<T, BackboneError>;

    /// Serialisable snapshot of everything needed to rebuild the adapter.
    fn state(&self) -> AdapterState<T>;
}

/// Which parameters receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMode {
    #[default]
    Full,
    ParameterEfficient,
}

/// Output-vocabulary positions of the two answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    pub yes_token: String,
    pub no_token: String,
    pub yes: usize,
    pub no: usize,
}

impl Verbalizer {
    /// Finds "yes" and "no" in `vocab`, accepting the usual word-boundary
    /// spellings of subword vocabularies when the bare form is absent.
    pub fn resolve(vocab: &[String]) -> Result<Self, BackboneError> {
        let find = |word: &str| -> Result<(String, usize), BackboneError> {
            let candidates = [
                word.to_string(),
                format!("\u{0120}{word}"),
                format!("\u{2581}{word}"),
                format!("{word}</w>"),
            ];
            candidates
                .iter()
                .find_map(|c| vocab.iter().position(|v| v == c).map(|i| (c.clone(), i)))
                .ok_or_else(|| BackboneError::VerbalizerMissing(word.to_string()))
        };
        let (yes_token, yes) = find("yes")?;
        let (no_token, no) = find("no")?;
        if yes_token != "yes" || no_token != "no" {
            log::info!("verbalizer remapped: yes -> {yes_token:?}, no -> {no_token:?}");
        }
        Ok(Self {
            yes_token,
            no_token,
            yes,
            no,
        })
    }
}

/// Returns the same answer distribution for every prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantAdapter<T> {
    pub p_yes: T,
    pub p_no: T,
    pub family: Family,
}

impl<T: Scalar> ConstantAdapter<T> {
    pub fn new(p_yes: T, p_no: T) -> Result<Self, BackboneError> {
        let ok = |x: T| x >= T::zero() && x <= T::one();
        if !ok(p_yes) || !ok(p_no) || p_yes + p_no > T::one() {
            return Err(BackboneError::Config(format!("({p_yes}, {p_no}) is not a sub-distribution")));
        }
        Ok(Self {
            p_yes,
            p_no,
            family: Family::MaskFilling,
        })
    }
}

impl<T: Scalar> BackboneAdapter<T> for ConstantAdapter<T> {
    fn family(&self) -> Family {
        self.family
    }

    fn max_input_tokens(&self) -> usize {
        usize::MAX
    }

    fn verbalizer_probs(&self, _prompt: &NliPrompt) -> Result<(T, T), BackboneError> {
        Ok((self.p_yes, self.p_no))
    }
}

/// Replays stored scores keyed by a digest of the model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedAdapter {
    pub family: Family,
    pub max_input_tokens: usize,
    pub table: BTreeMap<String, [f64; 2]>,
}

impl RecordedAdapter {
    pub fn new(family: Family, max_input_tokens: usize) -> Self {
        Self {
            family,
            max_input_tokens,
            table: BTreeMap::new(),
        }
    }

    pub fn key(&self, prompt: &NliPrompt) -> Result<String, BackboneError> {
        let fitted = fit_to_budget(prompt, self.family, self.max_input_tokens)?;
        Ok(hex::encode(Sha256::digest(model_input(self.family, &fitted).as_bytes())))
    }

    pub fn record(&mut self, prompt: &NliPrompt, p_yes: f64, p_no: f64) -> Result<(), BackboneError> {
        if !(0.0..=1.0).contains(&p_yes) || !(0.0..=1.0).contains(&p_no) || p_yes + p_no > 1.0 + 1e-12 {
            return Err(BackboneError::Config(format!("({p_yes}, {p_no}) is not a sub-distribution")));
        }
        let key = self.key(prompt)?;
        self.table.insert(key, [p_yes, p_no]);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackboneError> {
        let path = path.as_ref();
        let raw = std::fs::read(path).map_err(|source| BackboneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_slice(&raw)?)
    }
}

impl<T: Scalar> BackboneAdapter<T> for RecordedAdapter {
    fn family(&self) -> Family {
        self.family
    }

    fn max_input_tokens(&self) -> usize {
        self.max_input_tokens
    }

    fn verbalizer_probs(&self, prompt: &NliPrompt) -> Result<(T, T), BackboneError> {
        let key = self.key(prompt)?;
        self.table
            .get(&key)
            .map(|[y, n]| (T::of(*y), T::of(*n)))
            .ok_or(BackboneError::UnknownPrompt(key))
    }
}

/// Hyper-parameters of [`TinyAdapter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TinyConfig {
    pub premise_buckets: usize,
    pub hypothesis_buckets: usize,
    pub dim: usize,
    pub vocab: Vec<String>,
    pub init_scale: f64,
    pub head_init_scale: f64,
    pub max_input_tokens: usize,
    pub seed: u64,
}

impl Default for TinyConfig {
    fn default() -> Self {
        Self {
            premise_buckets: 2048,
            hypothesis_buckets: 512,
            dim: 16,
            vocab: ["yes", "no", "maybe", "unknown", "perhaps", "not"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            init_scale: 0.1,
            head_init_scale: 0.01,
            max_input_tokens: 4096,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    premise_emb: usize,
    hyp_emb: usize,
    interaction: usize,
    premise_head: usize,
    hyp_head: usize,
    bias: usize,
    total: usize,
}

impl Layout {
    fn new(c: &TinyConfig) -> Self {
        let v = c.vocab.len();
        let premise_emb = 0;
        let hyp_emb = premise_emb + c.premise_buckets * c.dim;
        let interaction = hyp_emb + c.hypothesis_buckets * c.dim;
        let premise_head = interaction + v * c.dim;
        let hyp_head = premise_head + v * c.dim;
        let bias = hyp_head + v * c.dim;
        Layout {
            premise_emb,
            hyp_emb,
            interaction,
            premise_head,
            hyp_head,
            bias,
            total: bias + v,
        }
    }

    /// First index of the output block updated in parameter-efficient mode.
    fn head_start(&self) -> usize {
        self.interaction
    }
}

/// Serialisable parameters of a [`TinyAdapter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyState<T> {
    pub config: TinyConfig,
    pub family: Family,
    pub tuning: TuningMode,
    pub verbalizer: Verbalizer,
    pub params: Vec<T>,
}

/// Everything needed to rebuild an adapter from a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterState<T> {
    Tiny(TinyState<T>),
    Recorded(RecordedAdapter),
    Constant { p_yes: f64, p_no: f64 },
}

impl<T: Scalar> AdapterState<T> {
    pub fn build(&self) -> Result<Box<dyn BackboneAdapter<T>>, BackboneError> {
        Ok(match self {
            AdapterState::Tiny(s) => Box::new(TinyAdapter::from_state(s.clone())?),
            AdapterState::Recorded(r) => Box::new(r.clone()),
            AdapterState::Constant { p_yes, p_no } => Box::new(ConstantAdapter::new(T::of(*p_yes), T::of(*p_no))?),
        })
    }
}

/// Builds an evaluation adapter from a model identifier and family tag.
///
/// Identifiers: `tiny` (freshly initialised tiny model), `constant:<yes>,<no>`,
/// `recorded:<path>`.
pub fn adapter_from_identifier<T: Scalar>(model: &str, family: Family) -> Result<Box<dyn BackboneAdapter<T>>, BackboneError> {
    match model.split_once(':') {
        None if model == "tiny" => Ok(Box::new(TinyAdapter::<T>::new(TinyConfig::default(), family, TuningMode::Full)?)),
        Some(("constant", probs)) => {
            let parts: Vec<f64> = probs
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| BackboneError::Config(e.to_string()))?;
            match parts.as_slice() {
                [y, n] => {
                    let mut a = ConstantAdapter::new(T::of(*y), T::of(*n))?;
                    a.family = family;
                    Ok(Box::new(a))
                }
                _ => Err(BackboneError::Config("constant adapter needs two probabilities".into())),
            }
        }
        Some(("recorded", path)) => {
            let mut r = RecordedAdapter::load(path)?;
            r.family = family;
            Ok(Box::new(r))
        }
        _ => Err(BackboneError::UnknownModel(model.to_string())),
    }
}

/// Sparse hashed features of a prompt: premise unigrams and bigrams, hypothesis unigrams.
#[derive(Debug, Clone, PartialEq)]
struct PromptFeatures {
    premise: Vec<(usize, f64)>,
    hypothesis: Vec<(usize, f64)>,
}

fn prompt_features(prompt: &NliPrompt, config: &TinyConfig) -> PromptFeatures {
    let mut premise = Vec::new();
    for line in &prompt.premise {
        let words = text::words(line);
        for w in &words {
            premise.push(text::bucket("u", w, config.premise_buckets));
        }
        for pair in words.windows(2) {
            premise.push(text::bucket("b", &format!("{} {}", pair[0], pair[1]), config.premise_buckets));
        }
    }
    let hypothesis = text::words(&prompt.hypothesis)
        .iter()
        .map(|w| text::bucket("h", w, config.hypothesis_buckets))
        .collect::<Vec<_>>();
    PromptFeatures {
        premise: text::sparse_counts(premise),
        hypothesis: text::sparse_counts(hypothesis),
    }
}

struct Forward<T> {
    premise_vec: Vec<T>,
    hyp_vec: Vec<T>,
    logits: Vec<T>,
}

/// Per-prompt loss of the gold answer after renormalising over {yes, no},
/// computed from raw logits.
pub fn verbalizer_loss_from_logits<T: Scalar>(logits: &[T], verbalizer: &Verbalizer, gold: Answer) -> T {
    let (zy, zn) = (logits[verbalizer.yes], logits[verbalizer.no]);
    let m = zy.max(zn);
    let lse = m + ((zy - m).exp() + (zn - m).exp()).ln();
    match gold {
        Answer::Yes => lse - zy,
        Answer::No => lse - zn,
    }
}

/// Analytic gradient of [`verbalizer_loss_from_logits`] with respect to every logit.
pub fn verbalizer_logit_gradient<T: Scalar>(logits: &[T], verbalizer: &Verbalizer, gold: Answer) -> Vec<T> {
    let mut grad = vec![T::zero(); logits.len()];
    let q = softmax(&[logits[verbalizer.yes], logits[verbalizer.no]]);
    let (ty, tn) = match gold {
        Answer::Yes => (T::one(), T::zero()),
        Answer::No => (T::zero(), T::one()),
    };
    grad[verbalizer.yes] = q[0] - ty;
    grad[verbalizer.no] = q[1] - tn;
    grad
}

/// A small trainable backbone.
///
/// The premise and hypothesis are embedded as bags of hashed n-grams
/// (`p = E_p^T x_p`, `h = E_h^T x_h`); output logits are
/// `z = W (p * h) + U p + R h + b` over a short vocabulary containing the
/// verbalizer tokens. The elementwise product lets the hypothesis polarity
/// flip how premise evidence maps to yes/no. In parameter-efficient mode
/// only `W`, `U`, `R` and `b` are updated.
#[derive(Debug, Clone)]
pub struct TinyAdapter<T: Scalar> {
    config: TinyConfig,
    family: Family,
    tuning: TuningMode,
    verbalizer: Verbalizer,
    layout: Layout,
    params: Vec<T>,
    trainable_mask: Vec<bool>,
    training: bool,
    learning_rate: f64,
    optimizer: Option<Adam<T>>,
}

impl<T: Scalar> TinyAdapter<T> {
    pub fn new(config: TinyConfig, family: Family, tuning: TuningMode) -> Result<Self, BackboneError> {
        if config.dim == 0 || config.premise_buckets == 0 || config.hypothesis_buckets == 0 {
            return Err(BackboneError::Config("dim and bucket counts must be positive".into()));
        }
        let verbalizer = Verbalizer::resolve(&config.vocab)?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let body = Normal::new(0.0, config.init_scale).map_err(|e| BackboneError::Config(e.to_string()))?;
        let head = Normal::new(0.0, config.head_init_scale).map_err(|e| BackboneError::Config(e.to_string()))?;
        let mut params = Vec::with_capacity(layout.total);
        for i in 0..layout.total {
            let v = if i < layout.head_start() {
                body.sample(&mut rng)
            } else if i < layout.bias {
                head.sample(&mut rng)
            } else {
                0.0
            };
            params.push(T::of(v));
        }
        let state = TinyState {
            config,
            family,
            tuning,
            verbalizer,
            params,
        };
        Self::from_state(state)
    }

    pub fn from_state(state: TinyState<T>) -> Result<Self, BackboneError> {
        let layout = Layout::new(&state.config);
        if state.params.len() != layout.total {
            return Err(BackboneError::Config(format!(
                "parameter vector has {} entries, configuration needs {}",
                state.params.len(),
                layout.total
            )));
        }
        let resolved = Verbalizer::resolve(&state.config.vocab)?;
        if resolved != state.verbalizer {
            return Err(BackboneError::Config("stored verbalizer mapping disagrees with vocabulary".into()));
        }
        let trainable_mask = (0..layout.total)
            .map(|i| state.tuning == TuningMode::Full || i >= layout.head_start())
            .collect();
        Ok(Self {
            config: state.config,
            family: state.family,
            tuning: state.tuning,
            verbalizer: state.verbalizer,
            layout,
            params: state.params,
            trainable_mask,
            training: false,
            learning_rate: 1e-3,
            optimizer: None,
        })
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    pub fn tuning(&self) -> TuningMode {
        self.tuning
    }

    pub fn verbalizer(&self) -> &Verbalizer {
        &self.verbalizer
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.trainable_mask.iter().filter(|m| **m).count()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn features(&self, prompt: &NliPrompt) -> Result<PromptFeatures, BackboneError> {
        let fitted = fit_to_budget(prompt, self.family, self.config.max_input_tokens)?;
        Ok(prompt_features(&fitted, &self.config))
    }

    fn forward(&self, f: &PromptFeatures) -> Forward<T> {
        let k = self.config.dim;
        let l = self.layout;
        let embed = |x: &[(usize, f64)], offset: usize| {
            let mut out = vec![T::zero(); k];
            for &(i, c) in x {
                let c = T::of(c);
                let row = &self.params[offset + i * k..offset + (i + 1) * k];
                for (o, w) in out.iter_mut().zip(row) {
                    *o = *o + c * *w;
                }
            }
            out
        };
        let premise_vec = embed(&f.premise, l.premise_emb);
        let hyp_vec = embed(&f.hypothesis, l.hyp_emb);
        let logits = (0..self.config.vocab.len())
            .map(|v| {
                let w = &self.params[l.interaction + v * k..l.interaction + (v + 1) * k];
                let u = &self.params[l.premise_head + v * k..l.premise_head + (v + 1) * k];
                let r = &self.params[l.hyp_head + v * k..l.hyp_head + (v + 1) * k];
                let mut z = self.params[l.bias + v];
                for j in 0..k {
                    z = z + w[j] * premise_vec[j] * hyp_vec[j] + u[j] * premise_vec[j] + r[j] * hyp_vec[j];
                }
                z
            })
            .collect();
        Forward {
            premise_vec,
            hyp_vec,
            logits,
        }
    }

    /// Output logits for `prompt`.
    pub fn logits(&self, prompt: &NliPrompt) -> Result<Vec<T>, BackboneError> {
        Ok(self.forward(&self.features(prompt)?).logits)
    }

    /// Mean per-prompt loss over `batch` and its gradient with respect to
    /// every parameter (frozen ones included).
    pub fn loss_and_gradient(&self, batch: &[NliSample]) -> Result<(T, Vec<T>), BackboneError> {
        if batch.is_empty() {
            return Err(BackboneError::EmptyBatch);
        }
        let k = self.config.dim;
        let l = self.layout;
        let scale = T::one() / T::of(batch.len() as f64);
        let mut grad = vec![T::zero(); self.params.len()];
        let mut total = T::zero();
        for sample in batch {
            let f = self.features(&sample.prompt)?;
            let fw = self.forward(&f);
            let loss = verbalizer_loss_from_logits(&fw.logits, &self.verbalizer, sample.gold);
            if !loss.is_finite() {
                return Err(BackboneError::NonFinite(format!(
                    "loss {loss} on dialogue `{}` ({:?})",
                    sample.dialogue_id, sample.polarity
                )));
            }
            total = total + loss;
            let dz = verbalizer_logit_gradient(&fw.logits, &self.verbalizer, sample.gold);
            let mut d_premise = vec![T::zero(); k];
            let mut d_hyp = vec![T::zero(); k];
            for v in [self.verbalizer.yes, self.verbalizer.no] {
                let g = dz[v] * scale;
                grad[l.bias + v] = grad[l.bias + v] + g;
                for j in 0..k {
                    let (p, h) = (fw.premise_vec[j], fw.hyp_vec[j]);
                    let w = self.params[l.interaction + v * k + j];
                    let u = self.params[l.premise_head + v * k + j];
                    let r = self.params[l.hyp_head + v * k + j];
                    grad[l.interaction + v * k + j] = grad[l.interaction + v * k + j] + g * p * h;
                    grad[l.premise_head + v * k + j] = grad[l.premise_head + v * k + j] + g * p;
                    grad[l.hyp_head + v * k + j] = grad[l.hyp_head + v * k + j] + g * h;
                    d_premise[j] = d_premise[j] + g * (w * h + u);
                    d_hyp[j] = d_hyp[j] + g * (w * p + r);
                }
            }
            for (x, d, offset) in [(&f.premise, &d_premise, l.premise_emb), (&f.hypothesis, &d_hyp, l.hyp_emb)] {
                for &(i, c) in x {
                    let c = T::of(c);
                    for j in 0..k {
                        let idx = offset + i * k + j;
                        grad[idx] = grad[idx] + c * d[j];
                    }
                }
            }
        }
        Ok((total * scale, grad))
    }
}

impl<T: Scalar> BackboneAdapter<T> for TinyAdapter<T> {
    fn family(&self) -> Family {
        self.family
    }

    fn max_input_tokens(&self) -> usize {
        self.config.max_input_tokens
    }

    fn verbalizer_probs(&self, prompt: &NliPrompt) -> Result<(T, T), BackboneError> {
        let probs = softmax(&self.logits(prompt)?);
        Ok((probs[self.verbalizer.yes], probs[self.verbalizer.no]))
    }
}

impl<T: Scalar> TrainableAdapter<T> for TinyAdapter<T> {
    fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    fn is_training(&self) -> bool {
        self.training
    }

    fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
        self.optimizer = None;
    }

    fn fit_step(&mut self, batch: &[NliSample]) -> Result<T, BackboneError> {
        if !self.training {
            return Err(BackboneError::NotTraining);
        }
        let (loss, grad) = self.loss_and_gradient(batch)?;
        let n = self.params.len();
        let lr = self.learning_rate;
        let optimizer = self.optimizer.get_or_insert_with(|| Adam::new(n, lr));
        optimizer.step(&mut self.params, &grad, Some(&self.trainable_mask));
        Ok(loss)
    }

    fn state(&self) -> AdapterState<T> {
        AdapterState::Tiny(TinyState {
            config: self.config.clone(),
            family: self.family,
            tuning: self.tuning,
            verbalizer: self.verbalizer.clone(),
            params: self.params.clone(),
        })
    }
}
